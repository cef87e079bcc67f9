"""Kernel masks and mean pseudo-absorbance spectra of single cells."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DeadPixelError, DegenerateHistogramError, EmptyMaskError
from .vision import connected_components, largest_components, otsu_threshold

TRIM_CHANNELS = 10
BAND_NM = (900.0, 1700.0)


def segment_kernel(cell, polygon_mask=None) -> np.ndarray:
    """Largest bright 8-connected region of a cell image.

    ``cell`` is an (h, w, C) or (h, w) array, or anything with ``data`` and
    ``mask`` attributes (a :class:`~grainpipe.gridtrack.CellImage`).  The
    Otsu threshold is chosen over the polygon pixels only; pixels outside
    the polygon are never foreground.
    """
    if not isinstance(cell, np.ndarray) and hasattr(cell, "mask"):
        polygon_mask = cell.mask if polygon_mask is None else polygon_mask
        cell = cell.data
    img = np.asarray(cell, dtype=np.float64)
    gray = img.mean(axis=2) if img.ndim == 3 else img
    inside = np.ones(gray.shape, dtype=bool) if polygon_mask is None else np.asarray(polygon_mask, dtype=bool)
    if not inside.any():
        raise EmptyMaskError("cell polygon covers no pixels")
    try:
        t = otsu_threshold(gray, mask=inside)
    except DegenerateHistogramError as exc:
        raise EmptyMaskError("cell is uniform; no foreground to separate") from exc
    fg = (gray > t) & inside
    regions = connected_components(fg, connectivity=8)
    if regions.count == 0:
        raise EmptyMaskError("no pixel above the Otsu threshold")
    return largest_components(regions, 1)


def repair_zero_reflectance(spectrum) -> np.ndarray:
    """Fill zero channels by linear interpolation between their nonzero neighbours.

    Runs touching either end take the nearest nonzero value.  Non-positive
    readings count as zeros.
    """
    s = np.asarray(spectrum, dtype=np.float64)
    good = s > 0
    if not good.any():
        raise DeadPixelError("every channel reads zero")
    if good.all():
        return s.copy()
    k = np.arange(s.size)
    out = s.copy()
    # np.interp holds the end values constant outside the known range
    out[~good] = np.interp(k[~good], k[good], s[good])
    return out


def repair_cube(pixels) -> tuple[np.ndarray, np.ndarray]:
    """Row-wise :func:`repair_zero_reflectance` for an (n, C) array.

    Returns the repaired rows and a boolean array marking dead pixels, whose
    rows are left untouched.
    """
    p = np.asarray(pixels, dtype=np.float64)
    good = p > 0
    dead = ~good.any(axis=1)
    out = p.copy()
    for i in np.flatnonzero(~good.all(axis=1) & ~dead):
        out[i] = repair_zero_reflectance(p[i])
    return out, dead


def wavelengths(channels: int, band=BAND_NM) -> np.ndarray:
    """Centre wavelength of each channel, uniformly spread over ``band``."""
    lo, hi = band
    if channels == 1:
        return np.array([lo])
    return lo + np.arange(channels) * (hi - lo) / (channels - 1)


@dataclass
class Spectrum:
    values: np.ndarray
    wavelengths: np.ndarray
    n_pixels: int
    dead_pixels: int = 0
    log_base: str = "10"
    meta: dict = field(default_factory=dict)

    def to_csv(self, path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with path.open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["wavelength_nm", "absorbance"])
            for lam, v in zip(self.wavelengths, self.values):
                w.writerow([f"{lam:.6f}", repr(float(v))])
        return path

    def sidecar(self, dish="", day=None, cell=None) -> dict:
        return {
            "dish": dish,
            "day": day,
            "cell": list(cell) if cell is not None else None,
            "n_pixels": int(self.n_pixels),
            "log_base": self.log_base,
            "dead_pixels": int(self.dead_pixels),
            **self.meta,
        }

    def save(self, path, dish="", day=None, cell=None) -> Path:
        """CSV at ``path`` plus ``<path>.json`` with the provenance sidecar."""
        path = self.to_csv(path)
        side = path.with_name(path.name + ".json")
        side.write_text(json.dumps(self.sidecar(dish, day, cell), indent=1, sort_keys=True) + "\n")
        return side

    @classmethod
    def from_csv(cls, path) -> Spectrum:
        path = Path(path)
        with path.open(newline="") as fh:
            rows = list(csv.reader(fh))
        if not rows or rows[0] != ["wavelength_nm", "absorbance"]:
            raise ValueError(f"{path}: not a spectrum CSV")
        arr = np.array([[float(a), float(b)] for a, b in rows[1:]])
        side_path = path.with_name(path.name + ".json")
        side = json.loads(side_path.read_text()) if side_path.exists() else {}
        return cls(arr[:, 1], arr[:, 0], int(side.get("n_pixels", 0)), int(side.get("dead_pixels", 0)),
                   str(side.get("log_base", "10")))


def mean_pseudo_absorbance(
    cube,
    mask,
    trim: int = TRIM_CHANNELS,
    natural_log: bool = False,
    clip_reflectance: bool = False,
    band=BAND_NM,
) -> Spectrum:
    """Per-channel mean of ``-log(reflectance)`` over the masked pixels.

    Zero channels are repaired first; pixels with every channel zero are
    dropped and counted.  ``trim`` channels are removed from each end.
    ``clip_reflectance`` caps reflectance at 1 before the logarithm.
    """
    if not isinstance(cube, np.ndarray):
        cube = getattr(cube, "data", cube)
    data = np.asarray(cube, dtype=np.float64)
    if data.ndim == 2:
        data = data[:, :, None]
    m = np.asarray(mask, dtype=bool)
    if m.shape != data.shape[:2]:
        raise ValueError(f"mask shape {m.shape} does not match image {data.shape[:2]}")
    if not m.any():
        raise EmptyMaskError("segmentation mask is empty")
    c = data.shape[2]
    if c <= 2 * trim:
        raise ValueError(f"cannot trim {trim} channels from each end of {c}")
    pixels, dead = repair_cube(data[m])
    if dead.all():
        raise DeadPixelError(f"all {dead.size} masked pixels are dead")
    pixels = pixels[~dead]
    if clip_reflectance:
        pixels = np.minimum(pixels, 1.0)
    logs = np.log(pixels) if natural_log else np.log10(pixels)
    values = -logs.mean(axis=0)
    keep = slice(trim, c - trim)
    return Spectrum(
        values[keep],
        wavelengths(c, band)[keep],
        int(pixels.shape[0]),
        int(dead.sum()),
        "e" if natural_log else "10",
    )


__all__ = [
    "Spectrum",
    "mean_pseudo_absorbance",
    "repair_cube",
    "repair_zero_reflectance",
    "segment_kernel",
    "wavelengths",
]
