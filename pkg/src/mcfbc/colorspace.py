"""Color-space conversions between RGB and YCbCr / YUV / HSV.

All tensors are channel-first ``(3, H, W)`` floats in ``[0, 1]``. Chroma
channels carry a +0.5 offset so that 0.5 means neutral. YCbCr uses the
BT.601 full-range matrix; YUV uses the analog BT.601 U/V scale factors
rescaled to ``[0, 1]``.
"""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import InvalidColorSpace, ShapeMismatch

SPACES = ("RGB", "YCbCr", "YUV", "HSV")

_LUMA = np.array([0.299, 0.587, 0.114])

# BT.601 full range, chroma in [-0.5, 0.5] before the offset.
_YCBCR = np.array([
    [0.299, 0.587, 0.114],
    [-0.168736, -0.331264, 0.5],
    [0.5, -0.418688, -0.081312],
])
_YCBCR_INV = np.linalg.inv(_YCBCR)

_U_SCALE = 0.492
_V_SCALE = 0.877
_U_MAX = _U_SCALE * (1.0 - _LUMA[2])
_V_MAX = _V_SCALE * (1.0 - _LUMA[0])


@dataclass
class ImageTensor:
    data: np.ndarray
    space: str = "RGB"

    def __post_init__(self):
        if self.space not in SPACES:
            raise InvalidColorSpace(f"unknown color space {self.space!r}")
        if self.data.ndim != 3 or self.data.shape[0] != 3:
            raise ShapeMismatch(f"expected (3, H, W), got {self.data.shape}")

    @property
    def shape(self):
        return self.data.shape


def _check(img: ImageTensor, space: str):
    if img.space != space:
        raise InvalidColorSpace(f"expected {space} input, got {img.space}")


def _apply(matrix, data, offset):
    out = np.tensordot(matrix, data, axes=(1, 0))
    out += np.asarray(offset, dtype=out.dtype).reshape(3, 1, 1)
    return out


def rgb_to_ycbcr(img: ImageTensor, clamp: bool = True) -> ImageTensor:
    _check(img, "RGB")
    out = _apply(_YCBCR, img.data, (0.0, 0.5, 0.5))
    if clamp:
        np.clip(out, 0.0, 1.0, out=out)
    return ImageTensor(out.astype(img.data.dtype, copy=False), "YCbCr")


def ycbcr_to_rgb(img: ImageTensor, clamp: bool = True) -> ImageTensor:
    _check(img, "YCbCr")
    centered = img.data - np.array([0.0, 0.5, 0.5], dtype=img.data.dtype).reshape(3, 1, 1)
    out = np.tensordot(_YCBCR_INV, centered, axes=(1, 0))
    if clamp:
        np.clip(out, 0.0, 1.0, out=out)
    return ImageTensor(out.astype(img.data.dtype, copy=False), "RGB")


def rgb_to_yuv(img: ImageTensor) -> ImageTensor:
    _check(img, "RGB")
    r, g, b = img.data
    y = _LUMA[0] * r + _LUMA[1] * g + _LUMA[2] * b
    u = _U_SCALE * (b - y)
    v = _V_SCALE * (r - y)
    out = np.stack([y, 0.5 + 0.5 * u / _U_MAX, 0.5 + 0.5 * v / _V_MAX])
    np.clip(out, 0.0, 1.0, out=out)
    return ImageTensor(out.astype(img.data.dtype, copy=False), "YUV")


def yuv_to_rgb(img: ImageTensor) -> ImageTensor:
    _check(img, "YUV")
    y, u01, v01 = img.data
    b = y + (u01 - 0.5) * 2.0 * _U_MAX / _U_SCALE
    r = y + (v01 - 0.5) * 2.0 * _V_MAX / _V_SCALE
    g = (y - _LUMA[0] * r - _LUMA[2] * b) / _LUMA[1]
    out = np.clip(np.stack([r, g, b]), 0.0, 1.0)
    return ImageTensor(out.astype(img.data.dtype, copy=False), "RGB")


def rgb_to_hsv(img: ImageTensor) -> ImageTensor:
    """Hexcone HSV with hue as a fraction of a full turn; achromatic hue is 0."""
    _check(img, "RGB")
    r, g, b = img.data
    v = img.data.max(axis=0)
    delta = v - img.data.min(axis=0)
    chromatic = delta > 0
    safe = np.where(chromatic, delta, 1.0)
    s = np.where(v > 0, delta / np.where(v > 0, v, 1.0), 0.0)

    h = np.zeros_like(v)
    is_r = chromatic & (v == r)
    is_g = chromatic & ~is_r & (v == g)
    is_b = chromatic & ~is_r & ~is_g
    h = np.where(is_r, ((g - b) / safe) % 6.0, h)
    h = np.where(is_g, (b - r) / safe + 2.0, h)
    h = np.where(is_b, (r - g) / safe + 4.0, h)
    h = h / 6.0
    h = np.where(h >= 1.0, h - 1.0, h)
    out = np.clip(np.stack([h, s, v]), 0.0, 1.0)
    return ImageTensor(out.astype(img.data.dtype, copy=False), "HSV")


def hsv_to_rgb(img: ImageTensor) -> ImageTensor:
    _check(img, "HSV")
    h, s, v = img.data
    h6 = (h % 1.0) * 6.0
    sector = np.floor(h6).astype(int) % 6
    f = h6 - np.floor(h6)
    p = v * (1 - s)
    q = v * (1 - s * f)
    t = v * (1 - s * (1 - f))
    choices_r = [v, q, p, p, t, v]
    choices_g = [t, v, v, q, p, p]
    choices_b = [p, p, t, v, v, q]
    out = np.stack([
        np.choose(sector, choices_r),
        np.choose(sector, choices_g),
        np.choose(sector, choices_b),
    ])
    np.clip(out, 0.0, 1.0, out=out)
    return ImageTensor(out.astype(img.data.dtype, copy=False), "RGB")


_FROM_RGB = {"YCbCr": rgb_to_ycbcr, "YUV": rgb_to_yuv, "HSV": rgb_to_hsv}
_TO_RGB = {"YCbCr": ycbcr_to_rgb, "YUV": yuv_to_rgb, "HSV": hsv_to_rgb}


def convert(img: ImageTensor, space: str) -> ImageTensor:
    """Convert between any two supported spaces, routing through RGB."""
    if space not in SPACES:
        raise InvalidColorSpace(f"unknown color space {space!r}")
    if img.space == space:
        return ImageTensor(img.data.copy(), space)
    if img.space != "RGB":
        img = _TO_RGB[img.space](img)
    if space == "RGB":
        return img
    return _FROM_RGB[space](img)


def convert_batch(rgb: np.ndarray, space: str) -> np.ndarray:
    """Convert an ``(N, 3, H, W)`` RGB batch to ``space``."""
    if space == "RGB":
        return rgb.copy()
    # The conversions are per-pixel, so fold the batch into the width axis.
    n, c, h, w = rgb.shape
    folded = rgb.transpose(1, 2, 0, 3).reshape(c, h, n * w)
    out = convert(ImageTensor(folded, "RGB"), space).data
    return out.reshape(c, h, n, w).transpose(2, 0, 1, 3).copy()


def quantize(data: np.ndarray) -> np.ndarray:
    return np.clip(np.rint(np.asarray(data) * 255.0), 0, 255).astype(np.uint8)


def dequantize(data: np.ndarray, dtype=np.float64) -> np.ndarray:
    return np.asarray(data, dtype=dtype) / 255.0


def read_image(path, dtype=np.float64) -> ImageTensor:
    """Decode an 8-bit PNG or binary PPM into an RGB tensor."""
    with Image.open(path) as im:
        arr = np.asarray(im.convert("RGB"))
    return ImageTensor(dequantize(arr.transpose(2, 0, 1), dtype), "RGB")


def write_image(img: ImageTensor | np.ndarray, path) -> None:
    """Encode channel data as 8-bit; format follows the suffix (.png, .ppm)."""
    data = img.data if isinstance(img, ImageTensor) else img
    arr = quantize(data).transpose(1, 2, 0)
    fmt = "PPM" if Path(path).suffix.lower() in (".ppm", ".pnm") else "PNG"
    Image.fromarray(np.ascontiguousarray(arr)).save(path, format=fmt)
