"""Two-layer convolutional fusion of deep and RBD saliency maps, plus its trainer.

Tensors are channels-last: a single sample is H x W x C and a batch is
N x H x W x C. Kernels are kh x kw x Cin x Cout. Channel 0 of the network
output is background, channel 1 is salient.
"""

from __future__ import annotations

import os
import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import ShapeError, TrainingError
from .image_core import Provenance, SaliencyMap, binarize_gt

MODEL_MAGIC = b"SFN1"


@dataclass(frozen=True)
class Arch:
    k1: int = 3
    hidden: int = 8
    k2: int = 3
    activation: str = "relu"

    def __post_init__(self):
        if self.k1 % 2 == 0 or self.k2 % 2 == 0:
            raise ShapeError(f"kernel sizes must be odd, got {self.k1} and {self.k2}")
        if self.hidden < 1:
            raise ShapeError("hidden channel count must be >= 1")
        if self.activation != "relu":
            raise ValueError(f"unsupported activation {self.activation!r}")


@dataclass
class FusionParams:
    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray
    arch: Arch = field(default_factory=Arch)

    def __post_init__(self):
        a = self.arch
        shapes = {
            "w1": (a.k1, a.k1, 2, a.hidden),
            "b1": (a.hidden,),
            "w2": (a.k2, a.k2, a.hidden, 2),
            "b2": (2,),
        }
        for name, shape in shapes.items():
            arr = np.asarray(getattr(self, name), dtype=np.float64)
            if arr.shape != shape:
                raise ShapeError(f"{name} must have shape {shape}, got {arr.shape}")
            setattr(self, name, arr)

    @classmethod
    def zeros(cls, arch: Arch | None = None) -> "FusionParams":
        a = arch or Arch()
        return cls(
            np.zeros((a.k1, a.k1, 2, a.hidden)),
            np.zeros(a.hidden),
            np.zeros((a.k2, a.k2, a.hidden, 2)),
            np.zeros(2),
            a,
        )

    def arrays(self) -> list:
        return [self.w1, self.b1, self.w2, self.b2]

    def copy(self) -> "FusionParams":
        return FusionParams(*(x.copy() for x in self.arrays()), arch=self.arch)

    def save(self, path) -> None:
        """Write the model file.

        Layout: ``SFN1``, then little-endian u32 k1, hidden, k2, then w1, b1,
        w2, b2 as little-endian float64 in C order.
        """
        a = self.arch
        with open(os.fspath(path), "wb") as fh:
            fh.write(MODEL_MAGIC)
            fh.write(struct.pack("<III", a.k1, a.hidden, a.k2))
            for arr in self.arrays():
                fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())

    @classmethod
    def load(cls, path) -> "FusionParams":
        with open(os.fspath(path), "rb") as fh:
            blob = fh.read()
        if blob[:4] != MODEL_MAGIC:
            raise ValueError(f"{path}: not a fusion model file (bad magic)")
        if len(blob) < 16:
            raise ValueError(f"{path}: truncated header")
        k1, hidden, k2 = struct.unpack("<III", blob[4:16])
        arch = Arch(k1, hidden, k2)
        shapes = [(k1, k1, 2, hidden), (hidden,), (k2, k2, hidden, 2), (2,)]
        need = sum(int(np.prod(s)) for s in shapes) * 8
        if len(blob) != 16 + need:
            raise ValueError(f"{path}: expected {16 + need} bytes, found {len(blob)}")
        arrays, off = [], 16
        for s in shapes:
            n = int(np.prod(s))
            arrays.append(np.frombuffer(blob, dtype="<f8", count=n, offset=off).reshape(s).copy())
            off += n * 8
        return cls(*arrays, arch=arch)


@dataclass
class TrainConfig:
    base_lr: float = 1e-4
    momentum: float = 0.9
    power: float = 0.9
    max_iter: int = 2000
    batch: int = 1
    seed: int = 0

    def __post_init__(self):
        if self.base_lr <= 0:
            raise ValueError("base_lr must be positive")
        if not 0.0 <= self.momentum < 1.0:
            raise ValueError("momentum must lie in [0, 1)")
        if self.power <= 0:
            raise ValueError("power must be positive")
        if self.max_iter < 1 or self.batch < 1:
            raise ValueError("max_iter and batch must be >= 1")


def poly_lr(cfg: TrainConfig, t: int) -> float:
    return cfg.base_lr * (1.0 - t / cfg.max_iter) ** cfg.power


def _as_batch(x: np.ndarray) -> tuple[np.ndarray, bool]:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 3:
        return x[None], True
    if x.ndim == 4:
        return x, False
    raise ShapeError(f"expected HxWxC or NxHxWxC tensor, got shape {x.shape}")


def conv2d_forward(x: np.ndarray, kernel: np.ndarray, bias: np.ndarray) -> np.ndarray:
    """Same-padded cross-correlation with zero padding, plus per-channel bias."""
    xb, single = _as_batch(x)
    kh, kw, cin, cout = kernel.shape
    if kh % 2 == 0 or kw % 2 == 0:
        raise ShapeError(f"same padding needs odd kernel sizes, got {kh}x{kw}")
    if xb.shape[3] != cin or bias.shape != (cout,):
        raise ShapeError(
            f"input has {xb.shape[3]} channels, kernel expects {cin}; bias {bias.shape} vs {cout}"
        )
    n, h, w, _ = xb.shape
    ph, pw = kh // 2, kw // 2
    xp = np.pad(xb, ((0, 0), (ph, ph), (pw, pw), (0, 0)))
    out = np.empty((n, h, w, cout))
    out[...] = bias
    for i in range(kh):
        for j in range(kw):
            out += xp[:, i : i + h, j : j + w, :] @ kernel[i, j]
    return out[0] if single else out


def conv2d_backward(
    grad_out: np.ndarray, x: np.ndarray, kernel: np.ndarray
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Gradients of conv2d_forward w.r.t. input, kernel and bias."""
    xb, single = _as_batch(x)
    gb, _ = _as_batch(grad_out)
    kh, kw, cin, cout = kernel.shape
    if xb.shape[3] != cin or gb.shape[:3] != xb.shape[:3] or gb.shape[3] != cout:
        raise ShapeError(
            f"shape mismatch: input {xb.shape}, grad {gb.shape}, kernel {kernel.shape}"
        )
    n, h, w, _ = xb.shape
    ph, pw = kh // 2, kw // 2
    xp = np.pad(xb, ((0, 0), (ph, ph), (pw, pw), (0, 0)))
    dxp = np.zeros_like(xp)
    dk = np.empty_like(kernel, dtype=np.float64)
    g2 = gb.reshape(-1, cout)
    for i in range(kh):
        for j in range(kw):
            window = xp[:, i : i + h, j : j + w, :]
            dk[i, j] = window.reshape(-1, cin).T @ g2
            dxp[:, i : i + h, j : j + w, :] += gb @ kernel[i, j].T
    dx = dxp[:, ph : ph + h, pw : pw + w, :]
    db = g2.sum(axis=0)
    return (dx[0] if single else dx), dk, db


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def softmax_xent(logits: np.ndarray, target: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean per-pixel two-class softmax cross-entropy and its logit gradient."""
    logits = np.asarray(logits, dtype=np.float64)
    target = np.asarray(target)
    if logits.shape[-1] != 2 or logits.shape[:-1] != target.shape:
        raise ShapeError(f"logits {logits.shape} do not match target {target.shape}")
    if not np.all((target == 0) | (target == 1)):
        raise ValueError("target must be a binary mask")
    t = target.astype(np.intp)
    z = logits - logits.max(axis=-1, keepdims=True)
    log_norm = np.log(np.exp(z).sum(axis=-1))
    picked = np.take_along_axis(z, t[..., None], axis=-1)[..., 0]
    count = t.size
    loss = float((log_norm - picked).sum() / count)
    grad = softmax(logits)
    np.put_along_axis(grad, t[..., None], np.take_along_axis(grad, t[..., None], axis=-1) - 1.0, -1)
    return loss, grad / count


def forward_logits(params: FusionParams, x: np.ndarray) -> tuple[np.ndarray, tuple]:
    pre = conv2d_forward(x, params.w1, params.b1)
    hidden = np.maximum(pre, 0.0)
    logits = conv2d_forward(hidden, params.w2, params.b2)
    return logits, (x, pre, hidden)


def backward(params: FusionParams, cache: tuple, dlogits: np.ndarray) -> list:
    """Parameter gradients [dw1, db1, dw2, db2] given the logit gradient."""
    x, pre, hidden = cache
    dhidden, dw2, db2 = conv2d_backward(dlogits, hidden, params.w2)
    dpre = dhidden * (pre > 0)
    _, dw1, db1 = conv2d_backward(dpre, x, params.w1)
    return [dw1, db1, dw2, db2]


def stack_inputs(s_deep, s_rbd) -> np.ndarray:
    deep = s_deep.values if isinstance(s_deep, SaliencyMap) else np.asarray(s_deep, dtype=float)
    rbd = s_rbd.values if isinstance(s_rbd, SaliencyMap) else np.asarray(s_rbd, dtype=float)
    if deep.shape != rbd.shape:
        raise ShapeError(f"deep map {deep.shape} and RBD map {rbd.shape} differ in size")
    return np.stack([deep, rbd], axis=-1)


def fuse_probabilities(params: FusionParams, s_deep, s_rbd) -> np.ndarray:
    """Per-pixel (background, salient) probabilities, H x W x 2."""
    logits, _ = forward_logits(params, stack_inputs(s_deep, s_rbd))
    return softmax(logits)


def fuse_forward(params: FusionParams, s_deep, s_rbd) -> SaliencyMap:
    return SaliencyMap(fuse_probabilities(params, s_deep, s_rbd)[..., 1], Provenance.FUSED)


def xavier_init(arch: Arch, rng: np.random.Generator) -> FusionParams:
    def uniform(kh, kw, cin, cout):
        bound = np.sqrt(6.0 / (kh * kw * cin + kh * kw * cout))
        return rng.uniform(-bound, bound, size=(kh, kw, cin, cout))

    w1 = uniform(arch.k1, arch.k1, 2, arch.hidden)
    w2 = uniform(arch.k2, arch.k2, arch.hidden, 2)
    return FusionParams(w1, np.zeros(arch.hidden), w2, np.zeros(2), arch)


def prepare_dataset(dataset) -> tuple[np.ndarray, np.ndarray]:
    """Stack (s_deep, s_rbd, gt) triples into N x H x W x 2 inputs and N x H x W masks."""
    if not dataset:
        raise TrainingError("training dataset is empty")
    xs, ts = [], []
    for s_deep, s_rbd, gt in dataset:
        x = stack_inputs(s_deep, s_rbd)
        g = gt.values if isinstance(gt, SaliencyMap) else np.asarray(gt, dtype=np.float64)
        if g.shape != x.shape[:2]:
            raise ShapeError(f"ground truth {g.shape} does not match maps {x.shape[:2]}")
        xs.append(x)
        ts.append(binarize_gt(g))
    if len({x.shape for x in xs}) != 1:
        raise ShapeError("all training triples must share one size")
    return np.stack(xs), np.stack(ts)


def train(
    dataset, cfg: TrainConfig, init_seed: int | None = None, arch: Arch | None = None
) -> tuple[FusionParams, list]:
    """SGD with momentum and poly learning-rate decay, from Xavier initialisation.

    Returns the final parameters and the per-iteration loss trace.
    """
    x_all, t_all = prepare_dataset(dataset)
    arch = arch or Arch()
    params = xavier_init(arch, np.random.default_rng(cfg.seed if init_seed is None else init_seed))
    velocity = [np.zeros_like(p) for p in params.arrays()]
    order_rng = np.random.default_rng(cfg.seed)
    n = len(x_all)
    order, cursor = order_rng.permutation(n), 0
    losses = []
    for t in range(cfg.max_iter):
        idx = []
        while len(idx) < cfg.batch:
            if cursor == n:
                order, cursor = order_rng.permutation(n), 0
            idx.append(order[cursor])
            cursor += 1
        logits, cache = forward_logits(params, x_all[idx])
        loss, dlogits = softmax_xent(logits, t_all[idx])
        if not np.isfinite(loss):
            raise TrainingError(f"loss became non-finite at iteration {t}")
        losses.append(loss)
        lr = poly_lr(cfg, t)
        for p, v, g in zip(params.arrays(), velocity, backward(params, cache, dlogits)):
            v *= cfg.momentum
            v += lr * g
            p -= v
    return params, losses
