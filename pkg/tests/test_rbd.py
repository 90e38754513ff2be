import math

import numpy as np
import pytest

from corpus import corpus, shapes_image
from oracles import brute_geodesic
from salfuse.errors import GraphError
from salfuse.image_core import Colorspace, Image, rgb_to_lab
from salfuse.rbd import (
    RBDParams,
    connectivity_stats,
    geodesic_distances,
    minmax_normalize,
    rbd_map,
    rbd_superpixel_scores,
    refinement_energy_gradient,
)
from salfuse.superpixel import SuperpixelGraph, SuperpixelSegmentation, build_graph, slic


def _graph(k, edges, weights):
    return SuperpixelGraph(k, np.array(edges, dtype=np.intp).reshape(-1, 2), np.array(weights, float))


def random_connected_graph(rng, k, dyadic=True):
    edges = {(i - 1, i) if rng.random() < 0.5 else (int(rng.integers(0, i)), i) for i in range(1, k)}
    for i in range(k):
        for j in range(i + 1, k):
            if rng.random() < 0.35:
                edges.add((i, j))
    edges = sorted(edges)
    if dyadic:
        weights = rng.integers(0, 64, len(edges)) / 8.0
    else:
        weights = rng.uniform(0, 30, len(edges))
    return _graph(k, edges, weights)


def test_geodesic_trivial_cases():
    g = _graph(3, [(0, 1), (1, 2)], [3.0, 4.0])
    d = geodesic_distances(g)
    assert np.all(np.diag(d) == 0)
    assert d[0, 2] == 7.0
    assert np.array_equal(d, d.T)
    assert geodesic_distances(_graph(1, [], [])).tolist() == [[0.0]]


def test_geodesic_shortcut_matches_enumeration():
    # Ring 0-1-2-3-4 with a shortcut 0-3.
    edges = [(0, 1), (1, 2), (2, 3), (3, 4), (0, 4), (0, 3)]
    weights = [2.0, 2.0, 2.0, 9.0, 20.0, 1.0]
    g = _graph(5, edges, weights)
    d = geodesic_distances(g)
    assert np.array_equal(d, brute_geodesic(5, edges, weights))
    assert d[0, 4] == 10.0


def test_geodesic_zero_weights_stay_connected():
    d = geodesic_distances(_graph(3, [(0, 1), (1, 2)], [0.0, 0.0]))
    assert np.all(d == 0)


def test_geodesic_disconnected():
    with pytest.raises(GraphError):
        geodesic_distances(_graph(4, [(0, 1), (2, 3)], [1.0, 1.0]))


@pytest.mark.parametrize("seed", range(5))
def test_triangle_inequality(seed):
    rng = np.random.default_rng(seed)
    g = random_connected_graph(rng, 6, dyadic=False)
    d = geodesic_distances(g)
    assert np.allclose(d, brute_geodesic(6, g.edges.tolist(), g.weights.tolist()), rtol=1e-12)
    assert np.all(d[:, None, :] <= d[:, :, None] + d[None, :, :] + 1e-12)


def _rings():
    # 5x5: outer ring = 0 (touches border), inner ring = 1, center pixel = 2.
    labels = np.zeros((5, 5), int)
    labels[1:4, 1:4] = 1
    labels[2, 2] = 2
    lab = np.zeros((5, 5, 3))
    lab[..., 0] = np.choose(labels, [50.0, 60.0, 80.0])
    return SuperpixelSegmentation.from_labels(labels, lab)


def test_chain_stats_match_hand_computation():
    seg = _rings()
    g = build_graph(seg)
    assert g.edges.tolist() == [[0, 1], [1, 2]]
    d = geodesic_distances(g)
    assert d[0, 2] == 30.0
    s = connectivity_stats(seg, d, sigma_clr=10.0, sigma_bnd=1.0)
    # Frozen from a scalar math-module evaluation of the three formulas.
    assert s.area == pytest.approx([1.6176396562508757, 1.741865942949246, 1.146444279774855], abs=1e-14)
    assert s.len_bnd == pytest.approx([1.0, 0.6065306597126334, 0.011108996538242306], abs=1e-14)
    assert s.bnd_con == pytest.approx([0.7862471920959251, 0.45956335901718814, 0.010375244873014935], abs=1e-14)
    assert s.w_bg == pytest.approx([0.2658870090121094, 0.10021482669272697, 5.382140466370089e-05], abs=1e-14)


def test_uniform_similarity_stats():
    seg = slic(Image(np.tile([40.0, 5.0, -3.0], (30, 30, 1)), Colorspace.LAB), 9)
    d = geodesic_distances(build_graph(seg))
    s = connectivity_stats(seg, d)
    k, b = seg.num_superpixels, int(seg.touches_boundary.sum())
    assert np.all(s.area == k)
    assert np.all(s.len_bnd == b)
    assert np.all(s.bnd_con == b / np.sqrt(k))


def test_isolated_interior_region_limit():
    seg = _rings()
    far = np.array([[0, 1e6, 1e6], [1e6, 0, 1e6], [1e6, 1e6, 0]])
    s = connectivity_stats(seg, far)
    assert s.area[2] == 1.0 and s.len_bnd[2] == 0.0
    assert s.bnd_con[2] == 0.0 and s.w_bg[2] == 0.0


def test_stats_invariants_and_scale_invariance(rng):
    for img in corpus(3, seed=31):
        seg = slic(rgb_to_lab(img), 30)
        g = build_graph(seg)
        d = geodesic_distances(g)
        s = connectivity_stats(seg, d, sigma_clr=10.0)
        assert np.all(s.area >= 1.0)
        assert np.all(s.len_bnd <= s.area)
        assert np.allclose(s.bnd_con, s.len_bnd / np.sqrt(s.area), atol=1e-12, rtol=0)
        assert np.all((s.w_bg >= 0) & (s.w_bg <= 1))

        c = 3.5
        scaled = SuperpixelGraph(g.num_nodes, g.edges, g.weights * c)
        d2 = geodesic_distances(scaled)
        assert np.allclose(d2, c * d, rtol=1e-12)
        s2 = connectivity_stats(seg, d2, sigma_clr=10.0 * c)
        assert np.allclose(s2.bnd_con, s.bnd_con, rtol=1e-10)
        assert np.allclose(s2.area, s.area, rtol=1e-10)


def _square_segmentation():
    # 9x9: top band, left L-shape, right band (all background) and a centre square.
    labels = np.zeros((9, 9), int)
    labels[3:, :3] = 1
    labels[6:, 3:6] = 1
    labels[3:, 6:] = 2
    labels[3:6, 3:6] = 3
    lab = np.tile([50.0, 0.0, 0.0], (9, 9, 1))
    lab[3:6, 3:6] = [50.0, 60.0, 40.0]
    return SuperpixelSegmentation.from_labels(labels, lab)


def _reference_scores(seg, p):
    """Straight-line recomputation of the superpixel scores with dense numpy."""
    k = seg.num_superpixels
    g = build_graph(seg)
    w = np.full((k, k), np.inf)
    np.fill_diagonal(w, 0)
    for (i, j), wt in zip(g.edges, g.weights):
        w[i, j] = w[j, i] = wt
    for m in range(k):  # Floyd-Warshall
        w = np.minimum(w, w[:, m : m + 1] + w[m : m + 1, :])
    sim = np.exp(-(w**2) / (2 * p.sigma_clr**2))
    bnd = sim[:, seg.touches_boundary].sum(1) / np.sqrt(sim.sum(1))
    w_bg = 1 - np.exp(-(bnd**2) / (2 * p.sigma_bnd**2))
    diag = math.hypot(*seg.shape)
    ctr = np.zeros(k)
    for i in range(k):
        for j in range(k):
            if i != j:
                dl = np.linalg.norm(seg.mean_lab[i] - seg.mean_lab[j])
                ds = np.linalg.norm(seg.centroid[i] - seg.centroid[j]) / diag
                ctr[i] += dl * math.exp(-(ds**2) / (2 * p.sigma_spa**2)) * w_bg[j]
    w_fg = (ctr - ctr.min()) / (ctr.max() - ctr.min())
    a = np.diag(w_bg + w_fg)
    for i, j in g.edges:
        dl2 = np.sum((seg.mean_lab[i] - seg.mean_lab[j]) ** 2)
        ws = math.exp(-dl2 / (2 * p.sigma_clr**2)) + p.mu
        a[i, i] += ws
        a[j, j] += ws
        a[i, j] -= ws
        a[j, i] -= ws
    return np.linalg.solve(a, w_fg)


def test_square_scores_above_background():
    seg = _square_segmentation()
    p = RBDParams()
    scores, stats, (a, b) = rbd_superpixel_scores(seg, p)
    assert np.allclose(scores, _reference_scores(seg, p), atol=1e-12)
    assert scores[3] > scores[:3].max()
    assert stats.w_bg[3] < stats.w_bg[:3].min()
    assert np.max(np.abs(refinement_energy_gradient(a, b, scores))) <= 1e-8


def test_uniform_image_gives_zero_map():
    out = rbd_map(Image(np.full((40, 50, 3), 0.6), Colorspace.SRGB))
    assert out.shape == (40, 50)
    assert np.all(out.values == 0.0)


def test_rbd_centered_object_is_salient():
    data = np.full((60, 80, 3), [0.2, 0.5, 0.6])
    data[20:40, 28:52] = [0.9, 0.2, 0.1]
    out = rbd_map(Image(data, Colorspace.SRGB), n_seg=60).values
    assert out.min() >= 0 and out.max() <= 1
    assert out[20:40, 28:52].mean() > 0.8
    assert np.concatenate([out[:5].ravel(), out[-5:].ravel()]).mean() < 0.1


def test_rbd_mirror_symmetry():
    data = np.full((64, 64, 3), [0.3, 0.3, 0.7])
    data[20:44, 16:48] = [0.9, 0.8, 0.1]
    img = Image(data, Colorspace.SRGB)
    a = rbd_map(img, n_seg=64).values
    b = rbd_map(Image(data[:, ::-1].copy(), Colorspace.SRGB), n_seg=64).values[:, ::-1]
    assert np.mean(np.abs(a - b)) < 0.02


def test_refinement_residual_on_real_segmentations():
    rng = np.random.default_rng(2)
    for _ in range(4):
        img = shapes_image(rng, 64, 80)
        seg = slic(rgb_to_lab(img), 80)
        s, _, (a, b) = rbd_superpixel_scores(seg, RBDParams())
        assert np.max(np.abs(refinement_energy_gradient(a, b, s))) <= 1e-8


def test_minmax_zero_range():
    assert np.all(minmax_normalize(np.full(5, 3.0)) == 0)
    assert minmax_normalize(np.array([1.0, 3.0, 2.0])).tolist() == [0.0, 1.0, 0.5]
