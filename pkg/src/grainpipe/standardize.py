"""Raw line-scan frame to white/dark-corrected, size-standardized plate.

The frame carries two bright reference strips at the plate ends.  Every scan
row gets its own white level (upper quartile over the strip pixels of that
row) and dark level (row median of a shutter-closed frame), and the crop
between the strips is normalised as ``(I - D) / (W - D)``.  Four
chessboards then measure the anamorphic stretch of the line scanner, which
is undone by shrinking the width.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .errors import (
    ChessboardDetectionError,
    DegenerateHistogramError,
    InsufficientRegionsError,
    InvalidGeometryError,
    InvalidReferenceError,
    ReferenceNotFoundError,
)
from .pixcodec import ImageCube
from .vision import (
    bilinear_resize_horizontal,
    connected_components,
    gaussian_smooth,
    grayscale,
    largest_components,
    otsu_threshold,
    resize_scale,
    row_median,
    row_quantile,
)

log = logging.getLogger(__name__)

WHITE_QUANTILE = 0.75


@dataclass
class WhiteReferences:
    """Mask of the two reference strips and the bounding box of their union.

    ``bbox`` is ``(row0, row1, col0, col1)`` with exclusive upper ends.
    """

    mask: np.ndarray
    bbox: tuple[int, int, int, int]

    @property
    def rows(self) -> np.ndarray:
        return np.flatnonzero(self.mask.any(axis=1))


@dataclass
class RowReferences:
    rows: np.ndarray
    white: np.ndarray  # (R, C)
    dark: np.ndarray  # (R, C)

    def __post_init__(self):
        self.rows = np.asarray(self.rows, dtype=np.int64)
        self.white = np.asarray(self.white, dtype=np.float64)
        self.dark = np.asarray(self.dark, dtype=np.float64)
        if self.white.shape != self.dark.shape or self.white.shape[0] != self.rows.size:
            raise ValueError("white, dark and rows disagree in shape")

    def for_rows(self, rows) -> tuple[np.ndarray, np.ndarray]:
        """White and dark levels for arbitrary frame rows.

        Rows without a reference of their own borrow the nearest retained row.
        """
        rows = np.asarray(rows, dtype=np.int64)
        pos = np.searchsorted(self.rows, rows)
        exact = (pos < self.rows.size) & (self.rows[np.minimum(pos, self.rows.size - 1)] == rows)
        if not exact.all():
            log.warning("%d crop rows lack a white reference; using nearest row", int((~exact).sum()))
            lo = np.clip(pos - 1, 0, self.rows.size - 1)
            hi = np.clip(pos, 0, self.rows.size - 1)
            pos = np.where(np.abs(self.rows[lo] - rows) <= np.abs(self.rows[hi] - rows), lo, hi)
        return self.white[pos], self.dark[pos]


@dataclass
class PlateImage:
    """Corrected plate.

    ``crop_origin`` is the raw ``(row, col)`` of the plate's top-left pixel.
    ``size_factor`` is the requested horizontal shrink, ``x_scale`` the one
    actually realised by integer output width.  Plate ``x`` relates to raw
    ``x`` as ``x = (raw_x - col0 + 0.5) * x_scale - 0.5``.  ``source`` keeps
    the plate as it was before horizontal resampling, for detectors that
    need unresampled edges.
    """

    cube: ImageCube
    crop_origin: tuple[int, int]
    size_factor: float = 1.0
    x_scale: float = 1.0
    meta: dict = field(default_factory=dict)
    source: PlateImage | None = field(default=None, repr=False, compare=False)

    @property
    def data(self) -> np.ndarray:
        return self.cube.data

    @property
    def shape(self) -> tuple[int, int]:
        return self.cube.height, self.cube.width

    def gray(self) -> np.ndarray:
        return grayscale(self.cube)

    def to_raw(self, pts) -> np.ndarray:
        p = np.array(pts, dtype=np.float64)
        p[..., 0] = (p[..., 0] + 0.5) / self.x_scale - 0.5 + self.crop_origin[1]
        p[..., 1] = p[..., 1] + self.crop_origin[0]
        return p

    def from_raw(self, pts) -> np.ndarray:
        p = np.array(pts, dtype=np.float64)
        p[..., 0] = (p[..., 0] - self.crop_origin[1] + 0.5) * self.x_scale - 0.5
        p[..., 1] = p[..., 1] - self.crop_origin[0]
        return p


@dataclass
class Chessboard:
    corners: np.ndarray  # (n-1, n-1, 2) inner corners, [row, col] of the lattice
    center: np.ndarray
    square_width: float
    square_height: float
    response: float = 0.0

    def to_dict(self) -> dict:
        return {
            "center": self.center.tolist(),
            "square_width": self.square_width,
            "square_height": self.square_height,
        }


# ----------------------------------------------------------------- references


def locate_white_references(raw: ImageCube) -> WhiteReferences:
    """Bright-strip mask: grayscale, Otsu, two largest 8-connected regions."""
    gray = grayscale(raw)
    try:
        t = otsu_threshold(gray)
        regions = connected_components(gray > t, connectivity=8)
        mask = largest_components(regions, 2)
    except (InsufficientRegionsError, DegenerateHistogramError) as exc:
        raise ReferenceNotFoundError(f"white references not found: {exc}") from exc
    rows = np.flatnonzero(mask.any(axis=1))
    cols = np.flatnonzero(mask.any(axis=0))
    return WhiteReferences(mask, (int(rows[0]), int(rows[-1]) + 1, int(cols[0]), int(cols[-1]) + 1))


def build_row_references(raw: ImageCube, white: WhiteReferences, dark_frame: ImageCube | None = None) -> RowReferences:
    """Per-row white (upper quartile over the strips) and dark (row median) levels.

    Without a dark frame the dark level is zero, as for the RGB camera.
    """
    values, present = row_quantile(raw.data, white.mask, q=WHITE_QUANTILE)
    rows = np.flatnonzero(present)
    w = values[rows]
    if dark_frame is None:
        d = np.zeros_like(w)
    else:
        if dark_frame.height != raw.height or dark_frame.channels != raw.channels:
            raise InvalidReferenceError(
                f"dark frame {dark_frame.data.shape} does not match raw frame {raw.data.shape}"
            )
        # only the rows that carry a white reference are kept
        d = row_median(dark_frame.data, rows)
    bad = np.argwhere(~(w > d))
    if bad.size:
        r, c = bad[0]
        raise InvalidReferenceError(
            f"white level {w[r, c]:.4g} not above dark level {d[r, c]:.4g} at row {rows[r]}, channel {c}"
        )
    return RowReferences(rows, w, d)


def correct_intensity(
    raw: ImageCube,
    refs: RowReferences,
    bbox: tuple[int, int, int, int] | None = None,
    clamp: bool = False,
) -> PlateImage:
    """``(I - D) / (W - D)`` with row-indexed references, on the ``bbox`` crop."""
    r0, r1, c0, c1 = bbox if bbox is not None else (0, raw.height, 0, raw.width)
    crop = raw.data[r0:r1, c0:c1].astype(np.float64)
    if crop.ndim == 2:
        crop = crop[:, :, None]
    w, d = refs.for_rows(np.arange(r0, r1))
    out = (crop - d[:, None, :]) / (w - d)[:, None, :]
    if clamp:
        out = np.clip(out, 0.0, 1.0)
    cube = ImageCube(out, raw.modality, raw.bit_depth, reflectance=True, meta=dict(raw.meta))
    return PlateImage(cube, (r0, c0))


# ---------------------------------------------------------------- chessboards


def _saddle_response(gray: np.ndarray, sigma: float):
    g = gaussian_smooth(gray, sigma)
    gy, gx = np.gradient(g)
    gyy, gyx = np.gradient(gy)
    gxy, gxx = np.gradient(gx)
    det = gxx * gyy - 0.5 * (gxy + gyx) ** 2
    return g, np.maximum(-det, 0.0)


def _local_maxima(resp, radius, floor):
    peak = ndimage.maximum_filter(resp, size=2 * radius + 1, mode="constant")
    ys, xs = np.nonzero((resp == peak) & (resp > floor))
    order = np.argsort(-resp[ys, xs], kind="stable")
    return ys[order], xs[order]


def _refine_saddle(g, y, x, half=2, iters=3):
    """Stationary point of a quadratic fitted to the smoothed image."""
    h, w = g.shape
    cy, cx = float(y), float(x)
    dy, dx = np.mgrid[-half : half + 1, -half : half + 1]
    A = np.column_stack([np.ones(dx.size), dx.ravel(), dy.ravel(), dx.ravel() ** 2, dx.ravel() * dy.ravel(), dy.ravel() ** 2])
    for _ in range(iters):
        iy, ix = int(round(cy)), int(round(cx))
        if iy - half < 0 or ix - half < 0 or iy + half >= h or ix + half >= w:
            return None
        z = g[iy - half : iy + half + 1, ix - half : ix + half + 1].ravel()
        c = np.linalg.lstsq(A, z, rcond=None)[0]
        H = np.array([[2 * c[3], c[4]], [c[4], 2 * c[5]]])
        if np.linalg.det(H) >= 0:
            return None
        off = -np.linalg.solve(H, c[1:3])
        if np.abs(off).max() > half:
            return None
        nx, ny = ix + off[0], iy + off[1]
        if abs(nx - cx) < 1e-3 and abs(ny - cy) < 1e-3:
            cx, cy = nx, ny
            break
        cx, cy = nx, ny
    return cx, cy


def _fit_lattice(pts, resp, seed_idx, n, tol):
    """Try to grow an ``n x n`` lattice around ``pts[seed_idx]``.

    Returns ``(indices (n, n), a, b)`` where ``a`` is the near-horizontal step
    and ``b`` the near-vertical one, or ``None``.
    """
    p0 = pts[seed_idx]
    d = pts - p0
    dist = np.hypot(d[:, 0], d[:, 1])
    near = np.argsort(dist)[1:9]
    if near.size < 4:
        return None
    # basis: nearest neighbour, then the nearest one not parallel to it
    a = d[near[0]]
    b = None
    for k in near[1:]:
        v = d[k]
        cos = abs(v @ a) / (np.hypot(*v) * np.hypot(*a))
        if cos < 0.5:
            b = v
            break
    if b is None:
        return None
    if abs(a[0]) < abs(b[0]):
        a, b = b, a
    if a[0] < 0:
        a = -a
    if b[1] < 0:
        b = -b
    basis = np.column_stack([a, b])
    if abs(np.linalg.det(basis)) < 1e-6:
        return None
    coords = np.linalg.solve(basis, d.T).T
    ij = np.rint(coords)
    ok = np.hypot(*((coords - ij) @ basis.T).T) <= tol
    # pick the n x n window of lattice positions containing the seed with most hits
    best = None
    for i0 in range(-(n - 1), 1):
        for j0 in range(-(n - 1), 1):
            idx = np.full((n, n), -1)
            for k in np.flatnonzero(ok):
                i, j = int(ij[k, 1]) - i0, int(ij[k, 0]) - j0
                if 0 <= i < n and 0 <= j < n:
                    if idx[i, j] < 0 or resp[k] > resp[idx[i, j]]:
                        idx[i, j] = k
            if (idx >= 0).all():
                score = resp[idx].sum()
                if best is None or score > best[0]:
                    best = (score, idx)
    if best is None:
        return None
    return best[1]


def _lattice_steps(corners):
    """Median horizontal and vertical lattice steps."""
    a = np.median((corners[:, 1:] - corners[:, :-1]).reshape(-1, 2), axis=0)
    b = np.median((corners[1:] - corners[:-1]).reshape(-1, 2), axis=0)
    return a, b


def detect_chessboards(plate: PlateImage, pattern: int = 4, sigma: float = 1.5, rel_floor: float = 0.15) -> list[Chessboard]:
    """Locate four ``pattern x pattern`` chessboards from saddle points.

    Saddles of the smoothed grayscale are refined to subpixel precision and
    grouped into ``(pattern-1)^2`` lattices.  Square width and height are the
    per-axis extents of the median lattice steps, so they measure scale only
    and not the small rotation of a board.  When more than one lattice is
    found in a plate quadrant the one nearest its corner wins; boards come out
    ordered top-left, top-right, bottom-left, bottom-right.
    """
    n = pattern - 1
    if n < 2:
        raise ValueError("pattern must have at least 3 squares per side")
    gray = plate.gray()
    g, resp = _saddle_response(gray, sigma)
    if resp.max() <= 0:
        raise ChessboardDetectionError("no saddle points found (0 boards)")
    ys, xs = _local_maxima(resp, 3, rel_floor * resp.max())
    pts, r = [], []
    for y, x in zip(ys, xs):
        ref = _refine_saddle(g, y, x)
        if ref is not None:
            pts.append(ref)
            r.append(resp[y, x])
    pts = np.asarray(pts, dtype=np.float64).reshape(-1, 2)
    r = np.asarray(r)

    used = np.zeros(len(pts), dtype=bool)
    boards: list[Chessboard] = []
    for seed in range(len(pts)):
        if used[seed]:
            continue
        idx = _fit_lattice(pts, r, seed, n, tol=1.5)
        if idx is None or used[idx].any():
            continue
        corners = pts[idx]
        a, b = _lattice_steps(corners)
        # a lattice should be nearly square in the corrected frame up to stretch
        if np.hypot(*a) < 4 or np.hypot(*b) < 4:
            continue
        used[idx] = True
        boards.append(
            Chessboard(
                corners=corners,
                center=corners.reshape(-1, 2).mean(axis=0),
                square_width=float(np.hypot(a[0], b[0])),
                square_height=float(np.hypot(a[1], b[1])),
                response=float(r[idx].mean()),
            )
        )

    h, w = plate.shape
    mid = np.array([w / 2.0, h / 2.0])
    quadrant_corner = [np.array([0.0, 0.0]), np.array([w, 0.0]), np.array([0.0, h]), np.array([w, h])]
    chosen: list[Chessboard | None] = [None] * 4
    for bd in boards:
        q = int(bd.center[0] > mid[0]) + 2 * int(bd.center[1] > mid[1])
        cur = chosen[q]
        if cur is None or np.hypot(*(bd.center - quadrant_corner[q])) < np.hypot(*(cur.center - quadrant_corner[q])):
            chosen[q] = bd
    found = sum(c is not None for c in chosen)
    if found != 4:
        raise ChessboardDetectionError(f"expected 4 chessboards, found {found}")
    return chosen  # type: ignore[return-value]


def size_factor(boards: list[Chessboard]) -> float:
    h = float(np.mean([b.square_height for b in boards]))
    w = float(np.mean([b.square_width for b in boards]))
    return h / w


def size_correct(plate: PlateImage, boards: list[Chessboard], tolerance: float = 1e-3) -> PlateImage:
    """Shrink the width by mean square height / mean square width.

    Factors within ``tolerance`` above 1 are treated as 1 (measurement noise
    on an already-standardized plate); larger ones are an error.
    """
    f = size_factor(boards)
    if f > 1.0 + tolerance:
        raise InvalidGeometryError(f"squares are taller than wide (factor {f:.4f} > 1)")
    f = min(f, 1.0)
    cube = bilinear_resize_horizontal(plate.cube, f)
    scale = resize_scale(plate.cube.width, f) * plate.x_scale
    meta = dict(plate.meta, size_factor=f)
    return PlateImage(cube, plate.crop_origin, plate.size_factor * f, scale, meta, source=plate.source or plate)


def rescale_boards(boards: list[Chessboard], plate_before: PlateImage, plate_after: PlateImage) -> list[Chessboard]:
    """Map board geometry measured before size correction into the corrected plate."""
    out = []
    for b in boards:
        corners = plate_after.from_raw(plate_before.to_raw(b.corners))
        a, bb = _lattice_steps(corners)
        out.append(
            Chessboard(
                corners,
                corners.reshape(-1, 2).mean(axis=0),
                float(np.hypot(a[0], bb[0])),
                float(np.hypot(a[1], bb[1])),
                b.response,
            )
        )
    return out


@dataclass
class Standardized:
    plate: PlateImage
    boards: list[Chessboard]
    references: RowReferences
    white: WhiteReferences


def standardize(
    raw: ImageCube,
    dark_frame: ImageCube | None = None,
    pattern: int = 4,
    clamp: bool = False,
    resize: bool = True,
) -> Standardized:
    """Full chain: references, correction, chessboards and size correction."""
    white = locate_white_references(raw)
    refs = build_row_references(raw, white, dark_frame if raw.modality == "HSI" else None)
    plate = correct_intensity(raw, refs, white.bbox, clamp=clamp)
    boards = detect_chessboards(plate, pattern)
    if resize:
        fixed = size_correct(plate, boards)
        boards = rescale_boards(boards, plate, fixed)
        plate = fixed
    return Standardized(plate, boards, refs, white)
