"""Slow, independent re-implementations used only to check the library."""

import itertools
import math
from fractions import Fraction

import numpy as np

SRGB_TO_XYZ = [
    [0.4124564, 0.3575761, 0.1804375],
    [0.2126729, 0.7151522, 0.0721750],
    [0.0193339, 0.1191920, 0.9503041],
]
WHITE = [sum(row) for row in SRGB_TO_XYZ]


def lab_of_rgb(r, g, b):
    def lin(c):
        return c / 12.92 if c <= 0.04045 else ((c + 0.055) / 1.055) ** 2.4

    rgb = [lin(r), lin(g), lin(b)]
    xyz = [sum(m * c for m, c in zip(row, rgb)) for row in SRGB_TO_XYZ]
    delta = 6 / 29

    def f(t):
        return t ** (1 / 3) if t > delta**3 else t / (3 * delta * delta) + 4 / 29

    fx, fy, fz = (f(v / w) for v, w in zip(xyz, WHITE))
    return 116 * fy - 16, 500 * (fx - fy), 200 * (fy - fz)


def rgb_of_lab(lab):
    """Inverse CIELAB -> sRGB for an N x 3 array (round-trip checks only)."""
    lab = np.asarray(lab, dtype=np.float64)
    fy = (lab[:, 0] + 16) / 116
    fx = fy + lab[:, 1] / 500
    fz = fy - lab[:, 2] / 200
    delta = 6 / 29

    def finv(t):
        return np.where(t > delta, t**3, 3 * delta * delta * (t - 4 / 29))

    xyz = np.stack([finv(fx), finv(fy), finv(fz)], axis=1) * np.array(WHITE)
    lin = xyz @ np.linalg.inv(np.array(SRGB_TO_XYZ)).T
    return np.where(
        lin <= 0.0031308, 12.92 * lin, 1.055 * np.sign(lin) * np.abs(lin) ** (1 / 2.4) - 0.055
    )


def bilinear_pixel(img, y, x):
    """Bilinear sample of a 2-D list/array at fractional (y, x)."""
    h, w = len(img), len(img[0])
    y0, x0 = min(int(math.floor(y)), h - 1), min(int(math.floor(x)), w - 1)
    y1, x1 = min(y0 + 1, h - 1), min(x0 + 1, w - 1)
    fy, fx = y - y0, x - x0
    return (
        img[y0][x0] * (1 - fy) * (1 - fx)
        + img[y0][x1] * (1 - fy) * fx
        + img[y1][x0] * fy * (1 - fx)
        + img[y1][x1] * fy * fx
    )


def all_simple_path_lengths(k, edges, weights, src, dst):
    adj = {i: {} for i in range(k)}
    for (a, b), w in zip(edges, weights):
        adj[a][b] = min(w, adj[a].get(b, math.inf))
        adj[b][a] = min(w, adj[b].get(a, math.inf))
    best = math.inf
    stack = [(src, (src,), 0.0)]
    while stack:
        node, path, length = stack.pop()
        if node == dst:
            best = min(best, length)
            continue
        for nxt, w in adj[node].items():
            if nxt not in path:
                stack.append((nxt, path + (nxt,), length + w))
    return best


def brute_geodesic(k, edges, weights):
    return np.array(
        [[all_simple_path_lengths(k, edges, weights, i, j) for j in range(k)] for i in range(k)]
    )


def exact_mae(s, gt):
    s, gt = np.asarray(s, float).ravel(), np.asarray(gt, float).ravel()
    total = sum((abs(Fraction(a) - Fraction(b)) for a, b in zip(s, gt)), Fraction(0))
    return float(total) / len(s)


def brute_confusion(s, gt):
    s, gt = np.asarray(s, float).ravel(), np.asarray(gt).ravel()
    levels = [int(math.floor(v * 255 + 0.5)) for v in s]
    out = []
    for t in range(256):
        tp = fp = fn = tn = 0
        for q, g in zip(levels, gt):
            det = q >= t
            if det and g == 1:
                tp += 1
            elif det:
                fp += 1
            elif g == 1:
                fn += 1
            else:
                tn += 1
        out.append((tp, fp, fn, tn))
    return np.array(out)


def conv_loops(x, kernel, bias):
    """Direct-loop same-padded cross-correlation of one H x W x Cin sample."""
    h, w, cin = x.shape
    kh, kw, _, cout = kernel.shape
    ph, pw = kh // 2, kw // 2
    out = np.zeros((h, w, cout))
    for r in range(h):
        for c in range(w):
            for o in range(cout):
                acc = bias[o]
                for i in range(kh):
                    for j in range(kw):
                        rr, cc = r + i - ph, c + j - pw
                        if 0 <= rr < h and 0 <= cc < w:
                            for ci in range(cin):
                                acc += x[rr, cc, ci] * kernel[i, j, ci, o]
                out[r, c, o] = acc
    return out


def fused_foreground_loops(params, deep, rbd):
    """Straight-line re-evaluation of the fusion network, pixel by pixel."""
    x = np.stack([deep, rbd], axis=-1)
    hidden = np.maximum(conv_loops(x, params.w1, params.b1), 0.0)
    logits = conv_loops(hidden, params.w2, params.b2)
    out = np.empty(deep.shape)
    for r in range(deep.shape[0]):
        for c in range(deep.shape[1]):
            z0, z1 = logits[r, c]
            out[r, c] = 1.0 / (1.0 + math.exp(z0 - z1))
    return out


def central_difference(f, x, eps=1e-5):
    """Numerical gradient of scalar f at array x (x is perturbed in place)."""
    grad = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        idx = it.multi_index
        orig = x[idx]
        x[idx] = orig + eps
        fp = f()
        x[idx] = orig - eps
        fm = f()
        x[idx] = orig
        grad[idx] = (fp - fm) / (2 * eps)
    return grad


def max_relative_error(analytic, numeric, floor=1e-7):
    a, n = np.asarray(analytic), np.asarray(numeric)
    denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
    return float(np.max(np.abs(a - n) / denom))


def nearest_center_labels(lab, centers_lab, centers_pos, step, compactness):
    """Unwindowed SLIC assignment of every pixel, ties to the lowest id."""
    h, w = lab.shape[:2]
    labels = np.empty((h, w), dtype=int)
    for r, c in itertools.product(range(h), range(w)):
        best, best_k = math.inf, -1
        for k in range(len(centers_pos)):
            d_lab = sum((lab[r, c, ch] - centers_lab[k][ch]) ** 2 for ch in range(3))
            d_xy = (r - centers_pos[k][0]) ** 2 + (c - centers_pos[k][1]) ** 2
            d = math.sqrt(d_lab + d_xy / step**2 * compactness**2)
            if d < best:
                best, best_k = d, k
        labels[r, c] = best_k
    return labels


def flood_fill_components(mask):
    """Number of 4-connected components of a boolean mask."""
    h, w = mask.shape
    seen = np.zeros_like(mask, dtype=bool)
    count = 0
    for r, c in itertools.product(range(h), range(w)):
        if mask[r, c] and not seen[r, c]:
            count += 1
            stack = [(r, c)]
            seen[r, c] = True
            while stack:
                y, x = stack.pop()
                for dy, dx in ((1, 0), (-1, 0), (0, 1), (0, -1)):
                    ny, nx = y + dy, x + dx
                    if 0 <= ny < h and 0 <= nx < w and mask[ny, nx] and not seen[ny, nx]:
                        seen[ny, nx] = True
                        stack.append((ny, nx))
    return count
