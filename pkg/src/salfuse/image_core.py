"""Raster types, PNG/JPEG I/O, sRGB to CIELAB conversion and bilinear resizing."""

from __future__ import annotations

import enum
import os
from dataclasses import dataclass

import numpy as np
from PIL import Image as PILImage
from PIL import UnidentifiedImageError

from .errors import ColorspaceError, CorruptImageError, ImageFormatError, ShapeError

_SUPPORTED_FORMATS = {"PNG", "JPEG", "MPO"}

# sRGB primaries to CIEXYZ, D65.
_SRGB_TO_XYZ = np.array(
    [
        [0.4124564, 0.3575761, 0.1804375],
        [0.2126729, 0.7151522, 0.0721750],
        [0.0193339, 0.1191920, 0.9503041],
    ]
)
# White point taken as the image of sRGB white so that (1,1,1) lands on a=b=0.
D65_WHITE = _SRGB_TO_XYZ.sum(axis=1)

_LAB_EPS = (6.0 / 29.0) ** 3
_LAB_KAPPA = 3.0 * (6.0 / 29.0) ** 2


class Colorspace(enum.Enum):
    SRGB = "srgb"
    LAB = "lab"
    GRAY = "gray"


class Provenance(enum.Enum):
    RBD = "rbd"
    DEEP = "deep"
    FUSED = "fused"
    MSSF = "mssf"


@dataclass
class Image:
    """An H x W x C float64 raster.

    SRGB and GRAY samples live in [0, 1]; LAB samples are L in [0, 100]
    and a, b roughly in [-128, 127].
    """

    data: np.ndarray
    colorspace: Colorspace

    def __post_init__(self):
        data = np.asarray(self.data, dtype=np.float64)
        if data.ndim == 2:
            data = data[:, :, None]
        if data.ndim != 3 or data.shape[2] not in (1, 3):
            raise ShapeError(f"image data must be HxWx1 or HxWx3, got {data.shape}")
        if data.shape[0] < 1 or data.shape[1] < 1:
            raise ShapeError(f"image must be non-empty, got {data.shape}")
        expected = 1 if self.colorspace is Colorspace.GRAY else 3
        if data.shape[2] != expected:
            raise ColorspaceError(
                f"{self.colorspace.name} image needs {expected} channel(s), got {data.shape[2]}"
            )
        self.data = data

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def channels(self) -> int:
        return self.data.shape[2]

    @property
    def shape(self) -> tuple[int, int]:
        return self.data.shape[0], self.data.shape[1]


@dataclass
class SaliencyMap:
    """Per-pixel saliency in [0, 1] tagged with the stage that produced it."""

    values: np.ndarray
    provenance: Provenance

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        if values.ndim == 3 and values.shape[2] == 1:
            values = values[:, :, 0]
        if values.ndim != 2 or values.shape[0] < 1 or values.shape[1] < 1:
            raise ShapeError(f"saliency map must be a non-empty HxW array, got {values.shape}")
        if not np.all(np.isfinite(values)):
            raise ValueError("saliency map contains non-finite values")
        if values.min() < 0.0 or values.max() > 1.0:
            raise ValueError(
                f"saliency values must lie in [0, 1], got [{values.min()}, {values.max()}]"
            )
        self.values = values

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape


def quantize(values: np.ndarray) -> np.ndarray:
    """Map [0, 1] samples to 0..255 with round-half-up."""
    return np.clip(np.floor(np.asarray(values, dtype=np.float64) * 255.0 + 0.5), 0, 255).astype(
        np.uint8
    )


def load_image(path) -> Image:
    """Read a PNG or JPEG file into an SRGB (or GRAY) image scaled to [0, 1]."""
    path = os.fspath(path)
    if not os.path.exists(path):
        raise FileNotFoundError(f"image not found: {path}")
    try:
        with PILImage.open(path) as pil:
            if pil.format not in _SUPPORTED_FORMATS:
                raise ImageFormatError(f"{path}: unsupported format {pil.format!r}")
            pil.load()
            mode = pil.mode
            if mode in ("I;16", "I;16B", "I;16L", "I"):
                arr = np.asarray(pil, dtype=np.float64)
                scale = 65535.0 if mode.startswith("I;16") or arr.max() > 255 else 255.0
                return Image(arr / scale, Colorspace.GRAY)
            if mode in ("1", "L", "LA", "P") and _is_gray(pil):
                arr = np.asarray(pil.convert("L"), dtype=np.float64)
                return Image(arr / 255.0, Colorspace.GRAY)
            arr = np.asarray(pil.convert("RGB"), dtype=np.float64)
    except UnidentifiedImageError as exc:
        raise ImageFormatError(f"{path}: not a readable PNG or JPEG") from exc
    except (OSError, SyntaxError) as exc:
        raise CorruptImageError(f"{path}: corrupt image data ({exc})") from exc
    return Image(arr / 255.0, Colorspace.SRGB)


def _is_gray(pil) -> bool:
    if pil.mode != "P":
        return True
    palette = pil.convert("RGB")
    arr = np.asarray(palette)
    return bool(np.all(arr[..., 0] == arr[..., 1]) and np.all(arr[..., 1] == arr[..., 2]))


def save_gray(img, path) -> None:
    """Write a saliency map or GRAY image as an 8-bit grayscale PNG."""
    if isinstance(img, SaliencyMap):
        values = img.values
    elif isinstance(img, Image):
        if img.colorspace is not Colorspace.GRAY:
            raise ColorspaceError(f"save_gray needs a GRAY image, got {img.colorspace.name}")
        values = img.data[:, :, 0]
    else:
        values = np.asarray(img, dtype=np.float64)
    if values.min() < 0.0 or values.max() > 1.0:
        raise ValueError("save_gray expects samples in [0, 1]")
    PILImage.fromarray(quantize(values), mode="L").save(os.fspath(path), format="PNG")


def save_rgb(img: Image, path) -> None:
    if img.colorspace is not Colorspace.SRGB:
        raise ColorspaceError(f"save_rgb needs an SRGB image, got {img.colorspace.name}")
    PILImage.fromarray(quantize(img.data), mode="RGB").save(os.fspath(path), format="PNG")


def load_map(path, provenance: Provenance = Provenance.DEEP) -> SaliencyMap:
    """Load a grayscale PNG as a saliency map; RGB files are averaged to gray."""
    img = load_image(path)
    data = img.data.mean(axis=2) if img.channels == 3 else img.data[:, :, 0]
    return SaliencyMap(data, provenance)


def _srgb_to_linear(c: np.ndarray) -> np.ndarray:
    return np.where(c <= 0.04045, c / 12.92, ((c + 0.055) / 1.055) ** 2.4)


def _lab_f(t: np.ndarray) -> np.ndarray:
    return np.where(t > _LAB_EPS, np.cbrt(t), t / _LAB_KAPPA + 4.0 / 29.0)


def rgb_to_lab(img: Image) -> Image:
    """Convert an sRGB image to CIELAB under D65."""
    if img.colorspace is not Colorspace.SRGB:
        raise ColorspaceError(f"rgb_to_lab needs an SRGB image, got {img.colorspace.name}")
    linear = _srgb_to_linear(np.clip(img.data, 0.0, 1.0))
    xyz = linear @ _SRGB_TO_XYZ.T
    f = _lab_f(xyz / D65_WHITE)
    lab = np.empty_like(f)
    lab[..., 0] = 116.0 * f[..., 1] - 16.0
    lab[..., 1] = 500.0 * (f[..., 0] - f[..., 1])
    lab[..., 2] = 200.0 * (f[..., 1] - f[..., 2])
    # Black maps to L = 116*(4/29) - 16, which is 0 up to rounding.
    lab[..., 0] = np.maximum(lab[..., 0], 0.0)
    return Image(lab, Colorspace.LAB)


def ensure_lab(img: Image) -> Image:
    if img.colorspace is Colorspace.LAB:
        return img
    if img.colorspace is Colorspace.GRAY:
        img = Image(np.repeat(img.data, 3, axis=2), Colorspace.SRGB)
    return rgb_to_lab(img)


def _axis_weights(n_in: int, n_out: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    if n_out == 1 or n_in == 1:
        pos = np.zeros(n_out)
    else:
        pos = np.arange(n_out) * (n_in - 1) / (n_out - 1)
    lo = np.minimum(np.floor(pos).astype(np.intp), n_in - 1)
    hi = np.minimum(lo + 1, n_in - 1)
    return lo, hi, pos - lo


def resize_array(data: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Corner-aligned bilinear resize of an H x W (x C) array."""
    out_h, out_w = int(out_h), int(out_w)
    if out_h < 1 or out_w < 1:
        raise ShapeError(f"resize target must be at least 1x1, got {out_h}x{out_w}")
    data = np.asarray(data, dtype=np.float64)
    if data.shape[:2] == (out_h, out_w):
        return data.copy()
    lo, hi, frac = _axis_weights(data.shape[0], out_h)
    extra = (1,) * (data.ndim - 2)
    top, bottom = data[lo], data[hi]
    rows = top + frac.reshape((-1, 1) + extra) * (bottom - top)
    lo, hi, frac = _axis_weights(data.shape[1], out_w)
    left, right = rows[:, lo], rows[:, hi]
    out = left + frac.reshape((1, -1) + extra) * (right - left)
    # Keep the convex-combination bound exact under rounding.
    return np.clip(out, data.min(), data.max())


def resize_bilinear(img, out_h: int, out_w: int):
    """Resize an Image or SaliencyMap with a corner-aligned bilinear grid."""
    if isinstance(img, SaliencyMap):
        return SaliencyMap(resize_array(img.values, out_h, out_w), img.provenance)
    return Image(resize_array(img.data, out_h, out_w), img.colorspace)


def binarize_gt(values) -> np.ndarray:
    """Ground-truth mask: a sample is salient when its 8-bit value is >= 128."""
    if isinstance(values, SaliencyMap):
        values = values.values
    return (quantize(values) >= 128).astype(np.uint8)
