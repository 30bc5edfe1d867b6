"""Grayscale image type, conversions, filtering helpers and PNG I/O.

Images are float64 arrays in [0, 1]. On disk they are 8-bit PNG
(grayscale ``L`` mode); ``quantize8`` gives the exact array a PNG
round trip produces.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from PIL import Image
from scipy import ndimage

from .errors import FormatError, RejectedInputError

MIN_SIDE = 32
LUMA_601 = (0.299, 0.587, 0.114)


def to_luma(img):
    """ITU-R BT.601 luma for ``(H, W, 3)`` input; 2-D input passes through."""
    arr = np.asarray(img, dtype=np.float64)
    if arr.ndim == 3 and arr.shape[2] in (3, 4):
        r, g, b = LUMA_601
        return r * arr[..., 0] + g * arr[..., 1] + b * arr[..., 2]
    if arr.ndim == 3 and arr.shape[2] == 1:
        return arr[..., 0]
    if arr.ndim != 2:
        raise RejectedInputError(f"expected a 2-D gray or (H, W, 3) color image, got shape {arr.shape}")
    return arr


@dataclass(frozen=True)
class GrayImage:
    pixels: np.ndarray

    def __post_init__(self):
        px = to_luma(self.pixels)
        h, w = px.shape
        if h < MIN_SIDE or w < MIN_SIDE:
            raise RejectedInputError(f"image {h}x{w} is smaller than {MIN_SIDE}x{MIN_SIDE}")
        if not np.all(np.isfinite(px)):
            raise RejectedInputError("image contains non-finite pixels")
        if px.min() < -1e-9 or px.max() > 1 + 1e-9:
            raise RejectedInputError("pixel values must lie in [0, 1]")
        px = np.array(px, dtype=np.float64)
        px.setflags(write=False)
        object.__setattr__(self, "pixels", px)

    @property
    def height(self):
        return self.pixels.shape[0]

    @property
    def width(self):
        return self.pixels.shape[1]


def as_gray(img):
    """Return validated 2-D pixels from a GrayImage, gray array or RGB array."""
    if isinstance(img, GrayImage):
        return img.pixels
    return GrayImage(img).pixels


def gaussian_blur(img, sigma):
    if sigma < 0:
        raise RejectedInputError("blur sigma must be nonnegative")
    img = np.asarray(img, dtype=np.float64)
    if sigma == 0:
        return img.copy()
    return ndimage.gaussian_filter(img, sigma, mode="reflect")


def laplacian_energy(img):
    lap = ndimage.laplace(np.asarray(img, dtype=np.float64), mode="reflect")
    return float(np.mean(lap**2))


def resize(img, shape):
    """Bilinear resize with corner pixels aligned."""
    img = np.asarray(img, dtype=np.float64)
    h, w = img.shape
    oh, ow = int(shape[0]), int(shape[1])
    if (oh, ow) == (h, w):
        return img.copy()
    ys = np.linspace(0.0, h - 1.0, oh)
    xs = np.linspace(0.0, w - 1.0, ow)
    grid = np.meshgrid(ys, xs, indexing="ij")
    return ndimage.map_coordinates(img, grid, order=1, mode="nearest")


def half_scale(img):
    """2x2 block average; an odd trailing row/column is dropped."""
    img = np.asarray(img, dtype=np.float64)
    h, w = (img.shape[0] // 2) * 2, (img.shape[1] // 2) * 2
    x = img[:h, :w]
    return 0.25 * (x[0::2, 0::2] + x[1::2, 0::2] + x[0::2, 1::2] + x[1::2, 1::2])


def quantize8(img):
    return np.round(np.clip(img, 0.0, 1.0) * 255.0) / 255.0


def save_png(path, img):
    arr = np.round(np.clip(np.asarray(img, dtype=np.float64), 0.0, 1.0) * 255.0).astype(np.uint8)
    Image.fromarray(arr, mode="L").save(path, format="PNG")


def load_png(path):
    try:
        with Image.open(path) as im:
            im.load()
            if im.mode in ("RGB", "RGBA"):
                arr = np.asarray(im.convert("RGB"), dtype=np.float64) / 255.0
                return to_luma(arr)
            return np.asarray(im.convert("L"), dtype=np.float64) / 255.0
    except OSError as exc:
        raise FormatError(f"cannot read image {path}: {exc}") from None
