"""Otsu thresholding and connected-component bookkeeping."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import DegenerateHistogramError, InsufficientRegionsError
from . import _kernels


def otsu_from_histogram(hist) -> int:
    """Index ``k`` maximising between-class variance for classes ``[0..k]`` and ``[k+1..]``.

    Ties go to the smallest ``k``.
    """
    hist = np.asarray(hist, dtype=np.float64)
    if hist.ndim != 1 or hist.size < 2:
        raise DegenerateHistogramError("need at least two histogram bins")
    total = hist.sum()
    if total <= 0 or np.count_nonzero(hist) < 2:
        raise DegenerateHistogramError("histogram has fewer than two populated bins")
    idx = np.arange(hist.size, dtype=np.float64)
    w0 = np.cumsum(hist)[:-1]
    s0 = np.cumsum(hist * idx)[:-1]
    w1 = total - w0
    s_total = (hist * idx).sum()
    with np.errstate(divide="ignore", invalid="ignore"):
        mu0 = s0 / w0
        mu1 = (s_total - s0) / w1
        var = w0 * w1 * (mu0 - mu1) ** 2
    var = np.where((w0 > 0) & (w1 > 0), var, -1.0)
    best = var.max()
    # relative slack absorbs float noise between mathematically equal candidates
    return int(np.flatnonzero(var >= best - 1e-12 * max(best, 1.0))[0])


def histogram_edges(img: np.ndarray, bins: int = 256) -> np.ndarray:
    lo, hi = float(np.min(img)), float(np.max(img))
    if np.issubdtype(np.asarray(img).dtype, np.integer) and hi - lo + 1 <= bins:
        return np.arange(lo - 0.5, hi + 1.0, 1.0)
    return np.linspace(lo, hi, bins + 1)


def otsu_threshold(img, bins: int = 256, mask=None) -> float:
    """Otsu threshold of ``img``; pixels ``> threshold`` form the foreground."""
    values = np.asarray(img)
    if mask is not None:
        values = values[np.asarray(mask, dtype=bool)]
    values = values.ravel()
    if values.size == 0 or values.min() == values.max():
        raise DegenerateHistogramError("image is constant; Otsu threshold undefined")
    edges = histogram_edges(values, bins)
    hist, _ = np.histogram(values, bins=edges)
    k = otsu_from_histogram(hist)
    return float(edges[k + 1])


def binarize(img, threshold: float) -> np.ndarray:
    return np.asarray(img) > threshold


@dataclass
class Regions:
    """Labelled connected components.

    ``labels`` is 0 for background and 1..n in order of each region's first
    pixel in raster scan order.
    """

    labels: np.ndarray
    areas: np.ndarray
    first_index: np.ndarray

    @property
    def count(self) -> int:
        return len(self.areas)

    def mask(self, label: int) -> np.ndarray:
        return self.labels == label


def connected_components(mask, connectivity: int = 8) -> Regions:
    if connectivity not in (4, 8):
        raise ValueError("connectivity must be 4 or 8")
    mask = np.asarray(mask, dtype=bool)
    labels, n = _kernels.label(mask, eight=connectivity == 8)
    flat = labels.ravel()
    areas = np.bincount(flat, minlength=n + 1)[1:]
    first = np.full(n + 1, flat.size, dtype=np.int64)
    nz = np.flatnonzero(flat)
    np.minimum.at(first, flat[nz], nz)
    return Regions(labels, areas.astype(np.int64), first[1:])


def largest_components(regions: Regions, k: int = 1) -> np.ndarray:
    """Union of the ``k`` largest regions; ties prefer the earlier-scanned region."""
    if regions.count < k:
        raise InsufficientRegionsError(f"need {k} regions, found {regions.count}")
    order = np.lexsort((regions.first_index, -regions.areas))
    keep = np.zeros(regions.count + 1, dtype=bool)
    keep[order[:k] + 1] = True
    return keep[regions.labels]
