"""Multi-scale superpixel median fusion."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ShapeError
from .image_core import Image, Provenance, SaliencyMap, ensure_lab
from .superpixel import DEFAULT_COMPACTNESS, DEFAULT_ITERS, SuperpixelSegmentation, slic

DEFAULT_SCALES = (100, 200, 300, 400)


@dataclass
class ScaleSet:
    scales: list = field(default_factory=lambda: list(DEFAULT_SCALES))
    weights: list | None = None

    def __post_init__(self):
        self.scales = [int(s) for s in self.scales]
        if not self.scales:
            raise ValueError("scale set must be non-empty")
        if any(b <= a for a, b in zip(self.scales, self.scales[1:])):
            raise ValueError(f"scales must be strictly increasing, got {self.scales}")
        if self.scales[0] < 1:
            raise ValueError("scales must be >= 1")
        if self.weights is None:
            self.weights = [1.0] * len(self.scales)
        self.weights = [float(w) for w in self.weights]
        if len(self.weights) != len(self.scales):
            raise ValueError("need exactly one weight per scale")
        if any(w < 0 for w in self.weights) or sum(self.weights) <= 0:
            raise ValueError("weights must be non-negative with a positive sum")


def superpixel_medians(values: np.ndarray, labels: np.ndarray) -> np.ndarray:
    """Median of ``values`` within each label; even counts average the middle pair."""
    flat_l = labels.ravel()
    flat_v = values.ravel()
    k = int(flat_l.max()) + 1
    order = np.lexsort((flat_v, flat_l))
    sorted_v = flat_v[order]
    counts = np.bincount(flat_l, minlength=k)
    starts = np.concatenate([[0], np.cumsum(counts)[:-1]])
    lo = starts + (counts - 1) // 2
    hi = starts + counts // 2
    med = np.zeros(k)
    live = counts > 0
    med[live] = (sorted_v[lo[live]] + sorted_v[hi[live]]) / 2.0
    return med


def superpixel_median_map(s: SaliencyMap, seg: SuperpixelSegmentation) -> SaliencyMap:
    labels = seg.labels if isinstance(seg, SuperpixelSegmentation) else np.asarray(seg)
    if labels.shape != s.shape:
        raise ShapeError(f"map {s.shape} and segmentation {labels.shape} differ in size")
    med = superpixel_medians(s.values, labels)
    return SaliencyMap(med[labels], s.provenance)


def mssf_refine(
    s_ds: SaliencyMap,
    img: Image,
    scales: ScaleSet | None = None,
    compactness: float = DEFAULT_COMPACTNESS,
    iters: int = DEFAULT_ITERS,
) -> SaliencyMap:
    """Average per-superpixel median maps over several SLIC granularities."""
    scales = scales or ScaleSet()
    if s_ds.shape != img.shape:
        raise ShapeError(f"map {s_ds.shape} is not aligned with image {img.shape}")
    lab = ensure_lab(img)
    npix = lab.height * lab.width
    acc = np.zeros(s_ds.shape)
    total = 0.0
    # Fixed summation order keeps the result bit-stable.
    for n, w in zip(scales.scales, scales.weights):
        seg = slic(lab, min(n, npix), compactness, iters)
        acc += w * superpixel_median_map(s_ds, seg).values
        total += w
    return SaliencyMap(np.clip(acc / total, 0.0, 1.0), Provenance.MSSF)
