"""Image I/O, color conversion, bicubic degradation, Y-channel metrics.

Metrics follow the common super-resolution protocol: convert to the luma
channel of studio-swing YCbCr (peak 1.0), crop a border equal to the scale
factor, then PSNR / SSIM. The degradation resampler is a separable cubic
(a = -0.5) that widens its kernel when downscaling (antialias) and replicates
edges.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction

import numpy as np
from PIL import Image

from .tensor import DimensionError


@dataclass
class ImageU8:
    """Interleaved 8-bit sRGB, pixels[H, W, 3]."""

    pixels: np.ndarray

    def __post_init__(self):
        if self.pixels.ndim != 3 or self.pixels.shape[2] != 3 or self.pixels.dtype != np.uint8:
            raise DimensionError(f"ImageU8 wants uint8 [H, W, 3], got {self.pixels.dtype} {self.pixels.shape}")

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]


@dataclass
class PlaneF:
    """Single float channel, nominal range [0, 1], values[H, W]."""

    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 2:
            raise DimensionError(f"PlaneF wants [H, W], got {self.values.shape}")
        if not np.isfinite(self.values).all():
            raise DimensionError("PlaneF values must be finite")

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]


# -- I/O ----------------------------------------------------------------------


def read_png(path: str) -> ImageU8:
    with Image.open(path) as im:
        return ImageU8(np.asarray(im.convert("RGB"), dtype=np.uint8))


def write_png(img: ImageU8, path: str) -> None:
    Image.fromarray(img.pixels, mode="RGB").save(path, format="PNG")


def write_png_gray(plane: PlaneF, path: str) -> None:
    u8 = np.clip(np.rint(plane.values * 255.0), 0, 255).astype(np.uint8)
    Image.fromarray(u8, mode="L").save(path, format="PNG")


def to_float_rgb(img: ImageU8) -> np.ndarray:
    """[3, H, W] in [0, 1]."""
    return (img.pixels.astype(np.float64) / 255.0).transpose(2, 0, 1)


def to_u8(rgb: np.ndarray) -> ImageU8:
    """[3, H, W] floats in [0, 1] -> clipped, rounded ImageU8."""
    arr = np.clip(np.rint(np.asarray(rgb) * 255.0), 0, 255).astype(np.uint8)
    return ImageU8(arr.transpose(1, 2, 0))


# -- color --------------------------------------------------------------------

_Y_WEIGHTS = np.array([65.481, 128.553, 24.966])


def rgb_to_y(img: ImageU8) -> PlaneF:
    """Studio-swing BT.601 luma: 0 maps to 16/255, full white to 235/255."""
    rgb = img.pixels.astype(np.float64)  # 0..255
    y = (16.0 + rgb @ _Y_WEIGHTS / 255.0) / 255.0
    return PlaneF(y)


def rgb_float_to_y(rgb: np.ndarray) -> PlaneF:
    """Same conversion for [3, H, W] floats in [0, 1] (no quantization)."""
    y = (16.0 + np.tensordot(_Y_WEIGHTS, np.asarray(rgb), axes=1)) / 255.0
    return PlaneF(y)


# -- resampling ---------------------------------------------------------------


def _cubic(t: np.ndarray) -> np.ndarray:
    # Keys kernel with a = -0.5.
    at = np.abs(t)
    at2 = at * at
    at3 = at2 * at
    inner = 1.5 * at3 - 2.5 * at2 + 1.0
    outer = -0.5 * at3 + 2.5 * at2 - 4.0 * at + 2.0
    return np.where(at <= 1.0, inner, np.where(at < 2.0, outer, 0.0))


def _resample_weights(n_in: int, n_out: int, scale: float) -> tuple[np.ndarray, np.ndarray]:
    """Per-output tap indices (edge-clipped) and normalized weights."""
    kscale = min(scale, 1.0)  # widen the kernel when shrinking
    radius = 2.0 / kscale
    centers = (np.arange(n_out) + 0.5) / scale - 0.5
    left = np.ceil(centers - radius).astype(np.int64)
    width = int(np.floor(2.0 * radius)) + 2
    taps = left[:, None] + np.arange(width)[None, :]
    weights = _cubic((taps - centers[:, None]) * kscale)
    weights /= weights.sum(axis=1, keepdims=True)
    return np.clip(taps, 0, n_in - 1), weights


def _resample_axis0(arr: np.ndarray, n_out: int, scale: float) -> np.ndarray:
    """Resample axis 0 of a [H, W] array to n_out rows."""
    taps, weights = _resample_weights(arr.shape[0], n_out, scale)
    return np.einsum("ot,otw->ow", weights, arr[taps], optimize=True)


def bicubic_resize(p: PlaneF, scale: Fraction | float) -> PlaneF:
    """Deterministic separable resample; output size rounds half up."""
    s = float(scale)
    if s <= 0:
        raise DimensionError(f"scale must be positive, got {scale}")
    if s == 1.0:
        return PlaneF(p.values.copy())
    h_out = max(1, int(np.floor(p.height * s + 0.5)))
    w_out = max(1, int(np.floor(p.width * s + 0.5)))
    out = _resample_axis0(p.values, h_out, s)
    out = _resample_axis0(out.T, w_out, s).T
    return PlaneF(out)


def resize_rgb(rgb: np.ndarray, scale: Fraction | float) -> np.ndarray:
    """Channel-wise bicubic_resize for [3, H, W] float arrays."""
    planes = [bicubic_resize(PlaneF(c), scale).values for c in np.asarray(rgb, dtype=np.float64)]
    return np.stack(planes)


# -- metrics ------------------------------------------------------------------


def _crop_pair(a: PlaneF, b: PlaneF, crop: int) -> tuple[np.ndarray, np.ndarray]:
    if a.values.shape != b.values.shape:
        raise DimensionError(f"metric inputs differ: {a.values.shape} vs {b.values.shape}")
    if crop == 0:
        return a.values, b.values
    if crop < 0 or 2 * crop >= min(a.height, a.width):
        raise DimensionError(f"crop {crop} leaves no pixels of {a.values.shape}")
    return a.values[crop:-crop, crop:-crop], b.values[crop:-crop, crop:-crop]


def psnr(a: PlaneF, b: PlaneF, crop: int = 0) -> float:
    """10*log10(1 / MSE) on [0, 1] planes; identical planes give +inf."""
    x, y = _crop_pair(a, b, crop)
    mse = float(np.mean((x - y) ** 2))
    if mse == 0.0:
        return float("inf")
    return 10.0 * np.log10(1.0 / mse)


def _gaussian_window(size: int = 11, sigma: float = 1.5) -> np.ndarray:
    half = (size - 1) / 2.0
    g = np.exp(-((np.arange(size) - half) ** 2) / (2.0 * sigma * sigma))
    return g / g.sum()


def _filter_valid(x: np.ndarray, g: np.ndarray) -> np.ndarray:
    # Separable 'valid' correlation; reduction order fixed for determinism.
    k = g.size
    rows = sum(g[i] * x[i : x.shape[0] - k + 1 + i, :] for i in range(k))
    return sum(g[j] * rows[:, j : rows.shape[1] - k + 1 + j] for j in range(k))


def ssim(a: PlaneF, b: PlaneF, crop: int = 0) -> float:
    """Mean local SSIM, 11x11 Gaussian sigma 1.5, K1=0.01 K2=0.03, range 1."""
    x, y = _crop_pair(a, b, crop)
    if min(x.shape) < 11:
        raise DimensionError(f"ssim needs at least 11x11 after crop, got {x.shape}")
    c1, c2 = 0.01 ** 2, 0.03 ** 2
    g = _gaussian_window()
    mu_x = _filter_valid(x, g)
    mu_y = _filter_valid(y, g)
    xx = _filter_valid(x * x, g) - mu_x * mu_x
    yy = _filter_valid(y * y, g) - mu_y * mu_y
    xy = _filter_valid(x * y, g) - mu_x * mu_y
    num = (2.0 * mu_x * mu_y + c1) * (2.0 * xy + c2)
    den = (mu_x * mu_x + mu_y * mu_y + c1) * (xx + yy + c2)
    return float(np.mean(num / den))
