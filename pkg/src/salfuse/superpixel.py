"""SLIC over-segmentation and the superpixel adjacency graph."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from skimage.measure import label as connected_components

from .errors import ColorspaceError, SegmentationError
from .image_core import Colorspace, Image

DEFAULT_COMPACTNESS = 10.0
DEFAULT_ITERS = 10


@dataclass
class SuperpixelSegmentation:
    labels: np.ndarray
    num_superpixels: int
    mean_lab: np.ndarray
    centroid: np.ndarray
    area_px: np.ndarray
    touches_boundary: np.ndarray
    # Sum of squared joint distances after each assignment pass (empty when
    # the segmentation was not produced by slic).
    energy_trace: list = field(default_factory=list)
    grid_interval: float = float("nan")

    @property
    def shape(self) -> tuple[int, int]:
        return self.labels.shape

    @classmethod
    def from_labels(cls, labels, lab=None, **extra) -> "SuperpixelSegmentation":
        """Build a segmentation (and its statistics) from a dense label map.

        Labels must already be the contiguous range 0..K-1. ``lab`` is an
        H x W x 3 CIELAB array or LAB Image; without it mean colors are zero.
        """
        labels = np.asarray(labels, dtype=np.intp)
        if labels.ndim != 2:
            raise SegmentationError(f"label map must be 2-D, got shape {labels.shape}")
        k = int(labels.max()) + 1
        flat = labels.ravel()
        if flat.min() < 0:
            raise SegmentationError("labels must be non-negative")
        area = np.bincount(flat, minlength=k)
        if np.any(area == 0):
            raise SegmentationError("labels must cover the contiguous range 0..K-1")
        h, w = labels.shape
        rr, cc = np.mgrid[0:h, 0:w]
        centroid = np.stack(
            [
                np.bincount(flat, weights=rr.ravel().astype(np.float64), minlength=k) / area,
                np.bincount(flat, weights=cc.ravel().astype(np.float64), minlength=k) / area,
            ],
            axis=1,
        )
        mean_lab = np.zeros((k, 3))
        if lab is not None:
            data = lab.data if isinstance(lab, Image) else np.asarray(lab, dtype=np.float64)
            for ch in range(3):
                mean_lab[:, ch] = (
                    np.bincount(flat, weights=data[:, :, ch].ravel(), minlength=k) / area
                )
        touches = np.zeros(k, dtype=bool)
        border = np.concatenate([labels[0], labels[-1], labels[:, 0], labels[:, -1]])
        touches[np.unique(border)] = True
        return cls(labels, k, mean_lab, centroid, area, touches, **extra)


@dataclass
class SuperpixelGraph:
    num_nodes: int
    edges: np.ndarray  # E x 2, i < j, lexicographically sorted
    weights: np.ndarray  # E

    def adjacency_matrix(self) -> np.ndarray:
        """Dense K x K weight matrix with NaN marking non-edges."""
        adj = np.full((self.num_nodes, self.num_nodes), np.nan)
        if len(self.edges):
            adj[self.edges[:, 0], self.edges[:, 1]] = self.weights
            adj[self.edges[:, 1], self.edges[:, 0]] = self.weights
        return adj


def grid_shape(height: int, width: int, n_target: int) -> tuple[int, int]:
    """Choose a rows x cols seed grid close to n_target cells of square-ish shape."""
    best = None
    for nr in range(1, min(n_target, height) + 1):
        for nc in {max(1, n_target // nr), max(1, -(-n_target // nr))}:
            if nc > width:
                continue
            count_err = (nr * nc) / n_target - 1.0
            aspect = math.log((height / nr) / (width / nc))
            key = (4.0 * count_err * count_err + aspect * aspect, nr, nc)
            if best is None or key < best:
                best = key
    return best[1], best[2]


def _gradient_magnitude(lab: np.ndarray) -> np.ndarray:
    padded = np.pad(lab, ((1, 1), (1, 1), (0, 0)), mode="edge")
    dy = padded[2:, 1:-1] - padded[:-2, 1:-1]
    dx = padded[1:-1, 2:] - padded[1:-1, :-2]
    return (dy * dy).sum(axis=2) + (dx * dx).sum(axis=2)


def _round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def _initial_seeds(lab: np.ndarray, n_target: int) -> tuple[np.ndarray, np.ndarray]:
    h, w = lab.shape[:2]
    nr, nc = grid_shape(h, w, n_target)
    rows = (np.arange(nr) + 0.5) * h / nr - 0.5
    cols = (np.arange(nc) + 0.5) * w / nc - 0.5
    grad = _gradient_magnitude(lab)
    pos = []
    colors = []
    for r in rows:
        for c in cols:
            r0, c0 = _round_half_up(r), _round_half_up(c)
            best_g, best_rc = grad[r0, c0], None
            for rr in range(max(0, r0 - 1), min(h, r0 + 2)):
                for cc in range(max(0, c0 - 1), min(w, c0 + 2)):
                    if grad[rr, cc] < best_g:
                        best_g, best_rc = grad[rr, cc], (rr, cc)
            if best_rc is None:
                pos.append((r, c))
                colors.append(lab[r0, c0])
            else:
                pos.append((float(best_rc[0]), float(best_rc[1])))
                colors.append(lab[best_rc])
    return np.array(pos, dtype=np.float64), np.array(colors, dtype=np.float64)


def _joint_d2(lab_px, yy, xx, center_lab, cy, cx, spatial_scale):
    d0 = lab_px[..., 0] - center_lab[..., 0]
    d1 = lab_px[..., 1] - center_lab[..., 1]
    d2 = lab_px[..., 2] - center_lab[..., 2]
    dy = yy - cy
    dx = xx - cx
    return (d0 * d0 + d1 * d1 + d2 * d2) + (dy * dy + dx * dx) * spatial_scale


def _assign(lab, yy, xx, c_lab, c_pos, prev, window, spatial_scale):
    h, w = lab.shape[:2]
    best = np.full((h, w), np.inf)
    labels = np.full((h, w), -1, dtype=np.intp)
    if prev is not None:
        # A pixel may always keep its previous center; this makes the objective
        # non-increasing even when a center drifts away from its pixels.
        best = _joint_d2(lab, yy, xx, c_lab[prev], c_pos[prev, 0], c_pos[prev, 1], spatial_scale)
        labels = prev.copy()
    for k in range(len(c_pos)):
        cy, cx = c_pos[k]
        r0, r1 = max(0, math.ceil(cy - window)), min(h, math.floor(cy + window) + 1)
        q0, q1 = max(0, math.ceil(cx - window)), min(w, math.floor(cx + window) + 1)
        if r0 >= r1 or q0 >= q1:
            continue
        d2 = _joint_d2(
            lab[r0:r1, q0:q1], yy[r0:r1, q0:q1], xx[r0:r1, q0:q1], c_lab[k], cy, cx, spatial_scale
        )
        b = best[r0:r1, q0:q1]
        lw = labels[r0:r1, q0:q1]
        take = (d2 < b) | ((d2 == b) & (k < lw))
        b[take] = d2[take]
        lw[take] = k
    missing = labels < 0
    if np.any(missing):
        # Pixels outside every window fall back to the globally nearest seed.
        d2 = _joint_d2(
            lab[missing][:, None, :],
            yy[missing][:, None],
            xx[missing][:, None],
            c_lab[None, :, :],
            c_pos[None, :, 0],
            c_pos[None, :, 1],
            spatial_scale,
        )
        idx = np.argmin(d2, axis=1)
        labels[missing] = idx
        best[missing] = d2[np.arange(len(idx)), idx]
    return labels, best


def _update_centers(lab, yy, xx, labels, c_lab, c_pos):
    k = len(c_pos)
    flat = labels.ravel()
    counts = np.bincount(flat, minlength=k)
    live = counts > 0
    for ch in range(3):
        sums = np.bincount(flat, weights=lab[:, :, ch].ravel(), minlength=k)
        c_lab[live, ch] = sums[live] / counts[live]
    c_pos[live, 0] = np.bincount(flat, weights=yy.ravel(), minlength=k)[live] / counts[live]
    c_pos[live, 1] = np.bincount(flat, weights=xx.ravel(), minlength=k)[live] / counts[live]


def enforce_connectivity(labels: np.ndarray, min_size: float) -> np.ndarray:
    """Relabel so every segment is 4-connected.

    Components smaller than ``min_size`` are merged, smallest first, into the
    largest adjacent component (ties: lowest id).
    Larger stray components become segments of their own. Output labels are
    numbered 0..K-1 in raster order of first appearance.
    """
    comp = connected_components(labels + 1, background=0, connectivity=1) - 1
    ncomp = int(comp.max()) + 1
    sizes = np.bincount(comp.ravel(), minlength=ncomp).astype(np.int64)

    # Border lengths between 4-adjacent components.
    a = np.concatenate([comp[:, :-1].ravel(), comp[:-1, :].ravel()])
    b = np.concatenate([comp[:, 1:].ravel(), comp[1:, :].ravel()])
    diff = a != b
    a, b = a[diff], b[diff]
    codes, counts = np.unique(
        np.concatenate([a * ncomp + b, b * ncomp + a]), return_counts=True
    )
    nbrs: list[dict] = [{} for _ in range(ncomp)]
    for code, cnt in zip(codes.tolist(), counts.tolist()):
        i, j = divmod(code, ncomp)
        nbrs[i][j] = cnt

    parent = np.arange(ncomp)
    for o in sorted(range(ncomp), key=lambda c: (sizes[c], c)):
        if sizes[o] >= min_size or not nbrs[o]:
            continue
        target = min(nbrs[o], key=lambda c: (-sizes[c], c))
        parent[o] = target
        sizes[target] += sizes[o]
        sizes[o] = 0
        for n, cnt in nbrs[o].items():
            if n == target:
                continue
            nbrs[target][n] = nbrs[target].get(n, 0) + cnt
            nbrs[n][target] = nbrs[n].get(target, 0) + cnt
            del nbrs[n][o]
        nbrs[target].pop(o, None)
        nbrs[o] = {}

    # Resolve merge chains to their final root.
    root = parent.copy()
    while True:
        nxt = root[root]
        if np.array_equal(nxt, root):
            break
        root = nxt
    merged = root[comp]
    _, first, inverse = np.unique(merged.ravel(), return_index=True, return_inverse=True)
    order = np.argsort(first, kind="stable")
    rank = np.empty_like(order)
    rank[order] = np.arange(len(order))
    return rank[inverse].reshape(labels.shape)


def slic(
    img: Image,
    n_target: int,
    compactness: float = DEFAULT_COMPACTNESS,
    iters: int = DEFAULT_ITERS,
) -> SuperpixelSegmentation:
    """Segment a CIELAB image into roughly ``n_target`` SLIC superpixels.

    Uses the fixed-compactness joint distance
    ``D^2 = d_lab^2 + (d_xy / S)^2 * m^2`` with grid interval
    ``S = sqrt(H * W / n_target)``; the k-means search for each seed is
    limited to a 2S x 2S window.
    """
    if img.colorspace is not Colorspace.LAB:
        raise ColorspaceError(f"slic needs a LAB image, got {img.colorspace.name}")
    if n_target < 1 or iters < 1:
        raise ValueError("n_target and iters must be >= 1")
    lab = img.data
    h, w = lab.shape[:2]
    if n_target > h * w:
        raise SegmentationError(f"n_target={n_target} exceeds pixel count {h * w}")

    step = math.sqrt(h * w / n_target)
    spatial_scale = (compactness / step) ** 2
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    c_pos, c_lab = _initial_seeds(lab, n_target)

    labels = None
    energy = []
    for it in range(iters):
        labels, best = _assign(lab, yy, xx, c_lab, c_pos, labels, step, spatial_scale)
        energy.append(float(best.sum()))
        if it + 1 < iters:
            _update_centers(lab, yy, xx, labels, c_lab, c_pos)

    labels = enforce_connectivity(labels, step * step / 4.0)
    return SuperpixelSegmentation.from_labels(
        labels, lab, energy_trace=energy, grid_interval=step
    )


def build_graph(seg: SuperpixelSegmentation) -> SuperpixelGraph:
    """Adjacency from 4-neighbour label transitions, weighted by mean-Lab distance."""
    labels = seg.labels
    k = seg.num_superpixels
    a = np.concatenate([labels[:, :-1].ravel(), labels[:-1, :].ravel()])
    b = np.concatenate([labels[:, 1:].ravel(), labels[1:, :].ravel()])
    diff = a != b
    lo = np.minimum(a[diff], b[diff])
    hi = np.maximum(a[diff], b[diff])
    codes = np.unique(lo * k + hi)
    edges = np.stack([codes // k, codes % k], axis=1).astype(np.intp)
    delta = seg.mean_lab[edges[:, 0]] - seg.mean_lab[edges[:, 1]]
    weights = np.sqrt((delta * delta).sum(axis=1))
    return SuperpixelGraph(k, edges, weights)


def boundary_superpixels(seg: SuperpixelSegmentation) -> set:
    return set(np.flatnonzero(seg.touches_boundary).tolist())
