"""In-memory image container and raster utilities."""

from __future__ import annotations

import numpy as np

from .errors import ContractViolation


class PlanarImage:
    """An H x W x C float64 raster. sRGB images keep values in [0, 1]."""

    __slots__ = ("data",)

    def __init__(self, data):
        arr = np.asarray(data, dtype=np.float64)
        if arr.ndim != 3:
            raise ContractViolation(f"PlanarImage needs an HxWxC array, got {arr.shape}")
        self.data = arr

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def channels(self) -> int:
        return self.data.shape[2]

    def require_srgb(self) -> "PlanarImage":
        if self.channels != 3:
            raise ContractViolation(f"expected 3 channels, got {self.channels}")
        if self.data.min() < 0.0 or self.data.max() > 1.0:
            raise ContractViolation("sRGB values must lie in [0, 1]")
        return self

    def __repr__(self):
        return f"PlanarImage({self.height}x{self.width}x{self.channels})"


def as_array(img) -> np.ndarray:
    """Accept a PlanarImage or a bare HxWxC array and return the array."""
    if isinstance(img, PlanarImage):
        return img.data
    arr = np.asarray(img, dtype=np.float64)
    if arr.ndim != 3:
        raise ContractViolation(f"expected an HxWxC array, got shape {arr.shape}")
    return arr


def random_crop(img, size: int, rng: np.random.Generator):
    """Uniformly positioned size x size crop; deterministic given the rng state."""
    arr = as_array(img)
    h, w = arr.shape[:2]
    if size > h or size > w:
        raise ContractViolation(f"crop size {size} exceeds image {h}x{w}")
    top = int(rng.integers(0, h - size + 1))
    left = int(rng.integers(0, w - size + 1))
    out = arr[top : top + size, left : left + size]
    return PlanarImage(out) if isinstance(img, PlanarImage) else out


def crop_pair(a, b, size: int, rng: np.random.Generator):
    """One crop window applied to two aligned images."""
    aa, bb = as_array(a), as_array(b)
    if aa.shape[:2] != bb.shape[:2]:
        raise ContractViolation("paired crop requires equal spatial dimensions")
    h, w = aa.shape[:2]
    if size > h or size > w:
        raise ContractViolation(f"crop size {size} exceeds image {h}x{w}")
    top = int(rng.integers(0, h - size + 1))
    left = int(rng.integers(0, w - size + 1))
    return (
        aa[top : top + size, left : left + size],
        bb[top : top + size, left : left + size],
    )


def resize_bilinear(img, height: int, width: int):
    """Bilinear resample using half-pixel-center sampling with edge clamping."""
    arr = as_array(img)
    h, w = arr.shape[:2]
    if (h, w) == (height, width):
        out = arr.copy()
    else:
        ys = (np.arange(height) + 0.5) * (h / height) - 0.5
        xs = (np.arange(width) + 0.5) * (w / width) - 0.5
        y0 = np.clip(np.floor(ys).astype(np.int64), 0, h - 1)
        x0 = np.clip(np.floor(xs).astype(np.int64), 0, w - 1)
        y1 = np.minimum(y0 + 1, h - 1)
        x1 = np.minimum(x0 + 1, w - 1)
        fy = np.clip(ys - y0, 0.0, 1.0)[:, None, None]
        fx = np.clip(xs - x0, 0.0, 1.0)[None, :, None]
        top = arr[y0][:, x0] * (1 - fx) + arr[y0][:, x1] * fx
        bot = arr[y1][:, x0] * (1 - fx) + arr[y1][:, x1] * fx
        out = top * (1 - fy) + bot * fy
    return PlanarImage(out) if isinstance(img, PlanarImage) else out
