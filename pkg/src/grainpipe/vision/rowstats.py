"""Robust per-row statistics over (masked) image regions."""

from __future__ import annotations

import numpy as np


def row_quantile(region, mask=None, q: float = 0.75):
    """Per-row, per-channel quantile over unmasked pixels.

    Uses linear interpolation between order statistics.  Returns
    ``(values, present)`` where ``values`` is (H, C) and rows without any
    selected pixel are NaN with ``present`` False.
    """
    data = np.asarray(region, dtype=np.float64)
    if data.ndim == 2:
        data = data[:, :, None]
    h, w, c = data.shape
    if mask is None:
        mask = np.ones((h, w), dtype=bool)
    mask = np.asarray(mask, dtype=bool)
    present = mask.any(axis=1)
    values = np.full((h, c), np.nan)
    rows = np.flatnonzero(present)
    if rows.size:
        # NaNs sort last, so each row's valid samples lead; interpolate order statistics
        sub = np.sort(np.where(mask[rows][:, :, None], data[rows], np.nan), axis=1)
        n = mask[rows].sum(axis=1)
        pos = (n - 1) * q
        lo = np.floor(pos).astype(np.int64)
        hi = np.minimum(lo + 1, n - 1)
        frac = (pos - lo)[:, None]
        r = np.arange(rows.size)
        a, b = sub[r, lo], sub[r, hi]
        values[rows] = a + (b - a) * frac
    return values, present


def row_median(img, row_filter=None):
    """Per-row, per-channel median of the rows selected by ``row_filter``."""
    data = np.asarray(img, dtype=np.float64)
    if data.ndim == 2:
        data = data[:, :, None]
    if row_filter is not None:
        sel = np.asarray(row_filter)
        if sel.dtype == bool:
            sel = np.flatnonzero(sel)
        data = data[sel]
    return np.median(data, axis=1)
