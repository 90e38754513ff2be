"""Synthetic corpora for exercising fusion and the pipeline without benchmark data.

Each sample is an ellipse on a plain background. The "deep" map is accurate
on the left half and uninformative (values near 0.5) on the right; the "RBD"
map is the mirror arrangement. A fusion that learns to trust whichever
input is confident should beat both.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .image_core import Colorspace, Image, save_gray, save_rgb


@dataclass
class SyntheticSample:
    image: np.ndarray  # H x W x 3 sRGB
    gt: np.ndarray  # H x W in {0, 1}
    deep: np.ndarray
    rbd: np.ndarray


def _informative(gt, rng):
    return np.clip(0.1 + 0.8 * gt + rng.normal(0.0, 0.05, gt.shape), 0.0, 1.0)


def _uninformative(shape, rng):
    return np.clip(0.5 + rng.uniform(-0.15, 0.15, shape), 0.0, 1.0)


def complementarity_corpus(n: int = 50, size: int = 224, seed: int = 0) -> list:
    rng = np.random.default_rng(seed)
    yy, xx = np.mgrid[0:size, 0:size]
    left = xx < size // 2
    out = []
    for _ in range(n):
        cy, cx = rng.uniform(0.3, 0.7, 2) * size
        ry, rx = rng.uniform(0.12, 0.3, 2) * size
        gt = (((yy - cy) / ry) ** 2 + ((xx - cx) / rx) ** 2 <= 1.0).astype(np.float64)
        deep = np.where(left, _informative(gt, rng), _uninformative(gt.shape, rng))
        rbd = np.where(left, _uninformative(gt.shape, rng), _informative(gt, rng))
        bg, fg = rng.uniform(0.1, 0.9, 3), rng.uniform(0.1, 0.9, 3)
        while np.abs(fg - bg).sum() < 0.6:
            fg = rng.uniform(0.1, 0.9, 3)
        image = np.where(gt[..., None] > 0, fg, bg) + rng.normal(0.0, 0.02, (size, size, 3))
        out.append(SyntheticSample(np.clip(image, 0.0, 1.0), gt, deep, rbd))
    return out


def as_triples(samples) -> list:
    return [(s.deep, s.rbd, s.gt) for s in samples]


def write_corpus(samples, directory, name: str = "synthetic", with_rbd: bool = True):
    """Write samples as PNGs plus a manifest.json; returns the manifest path."""
    from .bench import DatasetManifest, ManifestEntry

    root = Path(directory)
    for sub in ("images", "gt", "deep", "rbd"):
        (root / sub).mkdir(parents=True, exist_ok=True)
    entries = []
    for i, s in enumerate(samples):
        sid = f"{i:04d}"
        save_rgb(Image(s.image, Colorspace.SRGB), root / "images" / f"{sid}.png")
        save_gray(s.gt, root / "gt" / f"{sid}.png")
        save_gray(s.deep, root / "deep" / f"{sid}.png")
        rbd_path = None
        if with_rbd:
            rbd_path = root / "rbd" / f"{sid}.png"
            save_gray(s.rbd, rbd_path)
        entries.append(
            ManifestEntry(
                sid,
                root / "images" / f"{sid}.png",
                root / "gt" / f"{sid}.png",
                root / "deep" / f"{sid}.png",
                rbd_path,
            )
        )
    manifest_path = root / "manifest.json"
    DatasetManifest(name, entries, root).save(manifest_path)
    return manifest_path
