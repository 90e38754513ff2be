"""Boundary-connectivity saliency (RBD).

Background probability comes from how strongly a region is tied to the
image border along the superpixel graph; foreground evidence is a
background-weighted color contrast; both are reconciled by a small
quadratic energy solved over superpixels.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy.linalg import cho_factor, cho_solve
from scipy.sparse.csgraph import dijkstra

from .errors import GraphError
from .image_core import Image, Provenance, SaliencyMap, ensure_lab
from .superpixel import (
    DEFAULT_COMPACTNESS,
    DEFAULT_ITERS,
    SuperpixelGraph,
    SuperpixelSegmentation,
    build_graph,
    slic,
)


@dataclass
class RBDParams:
    n_seg: int = 200
    sigma_clr: float = 10.0
    sigma_bnd: float = 1.0
    sigma_spa: float = 0.25
    mu: float = 0.1
    compactness: float = DEFAULT_COMPACTNESS
    iters: int = DEFAULT_ITERS


@dataclass
class ConnectivityStats:
    len_bnd: np.ndarray
    area: np.ndarray
    bnd_con: np.ndarray
    w_bg: np.ndarray


def geodesic_distances(graph: SuperpixelGraph) -> np.ndarray:
    """All-pairs shortest path lengths over the weighted superpixel graph."""
    k = graph.num_nodes
    if k == 1:
        return np.zeros((1, 1))
    e = graph.edges
    # Explicitly stored zeros stay edges in csgraph, which uniform regions need.
    adj = sp.csr_matrix((graph.weights, (e[:, 0], e[:, 1])), shape=(k, k))
    dist = dijkstra(adj, directed=False)
    if not np.all(np.isfinite(dist)):
        raise GraphError("superpixel graph is disconnected")
    return dist


def connectivity_stats(
    seg: SuperpixelSegmentation,
    dist: np.ndarray,
    sigma_clr: float = 10.0,
    sigma_bnd: float = 1.0,
) -> ConnectivityStats:
    if sigma_clr <= 0 or sigma_bnd <= 0:
        raise ValueError("sigma_clr and sigma_bnd must be positive")
    sim = np.exp(-(dist * dist) / (2.0 * sigma_clr * sigma_clr))
    area = sim.sum(axis=1)
    len_bnd = sim[:, seg.touches_boundary].sum(axis=1)
    bnd_con = len_bnd / np.sqrt(area)
    w_bg = 1.0 - np.exp(-(bnd_con * bnd_con) / (2.0 * sigma_bnd * sigma_bnd))
    return ConnectivityStats(len_bnd, area, bnd_con, w_bg)


def minmax_normalize(x: np.ndarray, rtol: float = 1e-9) -> np.ndarray:
    """Rescale to [0, 1]; a (numerically) zero-range input becomes all zeros.

    Ranges below ``rtol`` relative to the data magnitude are rounding noise
    from averaging identical colors, not structure.
    """
    lo, hi = x.min(), x.max()
    if hi - lo <= rtol * max(1.0, abs(hi), abs(lo)):
        return np.zeros_like(x, dtype=np.float64)
    return np.clip((x - lo) / (hi - lo), 0.0, 1.0)


def weighted_contrast(seg: SuperpixelSegmentation, w_bg: np.ndarray, sigma_spa: float) -> np.ndarray:
    h, w = seg.shape
    diag = np.hypot(h, w)
    d_lab = _pairwise(seg.mean_lab)
    d_spa = _pairwise(seg.centroid) / diag
    w_spa = np.exp(-(d_spa * d_spa) / (2.0 * sigma_spa * sigma_spa))
    # The diagonal term has d_lab == 0, so q == p drops out.
    return (d_lab * w_spa) @ w_bg


def _pairwise(x: np.ndarray) -> np.ndarray:
    diff = x[:, None, :] - x[None, :, :]
    return np.sqrt((diff * diff).sum(axis=2))


def refinement_system(
    graph: SuperpixelGraph,
    mean_lab: np.ndarray,
    w_bg: np.ndarray,
    w_fg: np.ndarray,
    sigma_clr: float,
    mu: float,
) -> tuple[np.ndarray, np.ndarray]:
    """Normal equations (A, b) of the quadratic saliency energy.

    Minimising ``sum w_bg s^2 + sum w_fg (s-1)^2 + sum_edges w_ij (s_i-s_j)^2``
    means solving ``(diag(w_bg + w_fg) + L) s = w_fg`` with L the weighted
    graph Laplacian.
    """
    a = np.diag(w_bg + w_fg)
    if len(graph.edges):
        i, j = graph.edges[:, 0], graph.edges[:, 1]
        d = mean_lab[i] - mean_lab[j]
        d2 = (d * d).sum(axis=1)
        ws = np.exp(-d2 / (2.0 * sigma_clr * sigma_clr)) + mu
        np.add.at(a, (i, i), ws)
        np.add.at(a, (j, j), ws)
        np.add.at(a, (i, j), -ws)
        np.add.at(a, (j, i), -ws)
    return a, w_fg.astype(np.float64).copy()


def refinement_energy_gradient(a: np.ndarray, b: np.ndarray, s: np.ndarray) -> np.ndarray:
    return 2.0 * (a @ s - b)


def solve_refinement(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    factor = cho_factor(a, lower=True)
    s = cho_solve(factor, b)
    # One step of iterative refinement keeps the residual near machine precision.
    return s + cho_solve(factor, b - a @ s)


def rbd_superpixel_scores(
    seg: SuperpixelSegmentation, params: RBDParams
) -> tuple[np.ndarray, ConnectivityStats, tuple[np.ndarray, np.ndarray]]:
    graph = build_graph(seg)
    dist = geodesic_distances(graph)
    stats = connectivity_stats(seg, dist, params.sigma_clr, params.sigma_bnd)
    w_fg = minmax_normalize(weighted_contrast(seg, stats.w_bg, params.sigma_spa))
    a, b = refinement_system(graph, seg.mean_lab, stats.w_bg, w_fg, params.sigma_clr, params.mu)
    return solve_refinement(a, b), stats, (a, b)


def rbd_map(img: Image, n_seg: int | None = None, params: RBDParams | None = None) -> SaliencyMap:
    """Unsupervised saliency map for an sRGB (or gray) image at native resolution."""
    params = params or RBDParams()
    if n_seg is not None:
        params = RBDParams(**{**params.__dict__, "n_seg": n_seg})
    lab = ensure_lab(img)
    n = min(params.n_seg, lab.height * lab.width)
    seg = slic(lab, n, params.compactness, params.iters)
    scores, _, _ = rbd_superpixel_scores(seg, params)
    return SaliencyMap(minmax_normalize(scores[seg.labels]), Provenance.RBD)
