"""Grayscale reduction, smoothing, gradients, edges and resampling."""

from __future__ import annotations

import numpy as np
from scipy import ndimage

from ..pixcodec import ImageCube
from . import _kernels


def _as_array(cube) -> np.ndarray:
    return cube.data if isinstance(cube, ImageCube) else np.asarray(cube)


def grayscale(cube) -> np.ndarray:
    """Unweighted per-pixel mean over channels, as float64."""
    data = _as_array(cube)
    if data.ndim == 2:
        return data.astype(np.float64)
    if data.ndim != 3 or data.shape[2] < 1:
        raise ValueError(f"expected an H x W x C cube, got shape {data.shape}")
    return data.mean(axis=2, dtype=np.float64)


def gaussian_smooth(img: np.ndarray, sigma: float) -> np.ndarray:
    """Separable Gaussian blur with reflected borders."""
    img = np.asarray(img, dtype=np.float64)
    if sigma <= 0:
        return img.copy()
    return ndimage.gaussian_filter(img, sigma, mode="reflect", truncate=4.0)


def sobel(img: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Sobel derivatives (d/dx, d/dy) scaled to intensity units per pixel."""
    img = np.asarray(img, dtype=np.float64)
    gx = ndimage.sobel(img, axis=1, mode="reflect") / 8.0
    gy = ndimage.sobel(img, axis=0, mode="reflect") / 8.0
    return gx, gy


def _non_max_suppress(mag, gx, gy):
    h, w = mag.shape
    pad = np.pad(mag, 1, mode="constant")
    angle = np.mod(np.rad2deg(np.arctan2(gy, gx)), 180.0)
    # quantise direction into 0/45/90/135 degrees
    q = (np.floor((angle + 22.5) / 45.0).astype(int)) % 4
    keep = np.zeros_like(mag, dtype=bool)
    for k, (dy, dx) in enumerate(((0, 1), (1, 1), (1, 0), (1, -1))):
        fwd = pad[1 + dy : 1 + dy + h, 1 + dx : 1 + dx + w]
        bwd = pad[1 - dy : 1 - dy + h, 1 - dx : 1 - dx + w]
        keep |= (q == k) & (mag >= fwd) & (mag > bwd)
    return keep


def edge_detect(
    img: np.ndarray,
    low: float = 0.015,
    high: float = 0.04,
    sigma: float = 0.0,
    return_gradients: bool = False,
):
    """Gradient-magnitude edges with non-maximum thinning and hysteresis.

    ``low``/``high`` are in intensity units per pixel.  Weak edge pixels
    survive only when 8-connected to a strong one.
    """
    if low > high:
        raise ValueError("low threshold must not exceed high threshold")
    src = gaussian_smooth(img, sigma) if sigma > 0 else np.asarray(img, dtype=np.float64)
    gx, gy = sobel(src)
    mag = np.hypot(gx, gy)
    thin = _non_max_suppress(mag, gx, gy)
    weak = thin & (mag >= low)
    strong = thin & (mag >= high)
    labels, n = _kernels.label(weak, eight=True)
    if n == 0:
        edges = np.zeros_like(weak)
    else:
        good = np.zeros(n + 1, dtype=bool)
        good[np.unique(labels[strong])] = True
        good[0] = False
        edges = good[labels]
    if return_gradients:
        return edges, gx, gy
    return edges


def bilinear_resize_horizontal(cube, factor: float):
    """Shrink the width by ``factor`` (0 < factor <= 1) with linear interpolation.

    Output column ``j`` samples source position ``(j + 0.5) * W / W' - 0.5``,
    clamped to the valid range.  Accepts an :class:`ImageCube` or an array and
    returns the same kind.
    """
    if not 0 < factor <= 1:
        raise ValueError(f"horizontal factor must lie in (0, 1], got {factor}")
    data = _as_array(cube)
    w = data.shape[1]
    new_w = max(1, int(round(w * factor)))
    if new_w == w:
        out = data.astype(np.float32 if data.dtype == np.float32 else np.float64, copy=True)
    else:
        src = (np.arange(new_w) + 0.5) * (w / new_w) - 0.5
        src = np.clip(src, 0.0, w - 1.0)
        x0 = np.floor(src).astype(np.int64)
        x1 = np.minimum(x0 + 1, w - 1)
        frac = src - x0
        shape = (1, new_w) + (1,) * (data.ndim - 2)
        frac = frac.reshape(shape)
        d = data.astype(np.float64)
        out = d[:, x0] * (1.0 - frac) + d[:, x1] * frac
        if data.dtype == np.float32:
            out = out.astype(np.float32)
    if isinstance(cube, ImageCube):
        return ImageCube(out, cube.modality, cube.bit_depth, reflectance=True, meta=dict(cube.meta))
    return out


def resize_scale(width: int, factor: float) -> float:
    """Effective x scale actually applied by :func:`bilinear_resize_horizontal`."""
    return max(1, int(round(width * factor))) / width
