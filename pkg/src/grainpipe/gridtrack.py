"""Carry a detected grid to later sessions and cut out the 25 cells.

RGB sessions are registered to the reference through the eight marker
corners; the concurrent HSI frame is registered to its RGB partner through
the four chessboard centres, which are fixed to the plate.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ChessboardDetectionError, EstimationFailedError, InvalidGeometryError, MarkerCountError, TrackingError
from .fiducial import MarkerDetection, detect_markers
from .gridfind import GridModel
from .pixcodec import ImageCube, read_cube, write_cube
from .standardize import Chessboard, PlateImage, detect_chessboards
from .vision import Affine2D, estimate_affine_ransac


@dataclass
class Localization:
    grid: GridModel
    transform: Affine2D
    inliers: np.ndarray
    residuals: np.ndarray


def _marker_correspondences(reference: list[MarkerDetection], current: list[MarkerDetection]):
    cur = {m.id: m for m in current}
    src, dst = [], []
    for m in sorted(reference, key=lambda m: m.id):
        if m.id not in cur:
            raise TrackingError(f"marker {m.id} of the reference grid is missing from the session image")
        src.append(m.corners)
        dst.append(cur[m.id].corners)
    if not src:
        raise TrackingError("reference grid carries no markers")
    return np.vstack(src), np.vstack(dst)


def localize_rgb(
    reference: GridModel,
    current_plate: PlateImage | None = None,
    markers: list[MarkerDetection] | None = None,
    inlier_tol_px: float = 2.0,
    seed: int = 0,
) -> Localization:
    """Affine from reference marker corners to the session's, applied to the whole grid.

    Corners are paired by marker id and canonical corner order.  ``markers``
    overrides detection on ``current_plate``.
    """
    if markers is None:
        if current_plate is None:
            raise ValueError("need a plate or explicit markers")
        try:
            markers = detect_markers(current_plate, expected=None)
        except MarkerCountError as exc:  # pragma: no cover - expected=None never raises
            raise TrackingError(str(exc)) from exc
    src, dst = _marker_correspondences(reference.markers, markers)
    try:
        fit = estimate_affine_ransac(src, dst, inlier_tol_px=inlier_tol_px, seed=seed)
    except EstimationFailedError as exc:
        raise TrackingError(f"marker registration failed: {exc}") from exc
    grid = reference.transformed(fit.transform)
    grid.meta = dict(reference.meta, transform=fit.transform.to_list(), inliers=fit.inliers.tolist())
    return Localization(grid, fit.transform, fit.inliers, fit.residuals)


def order_by_quadrant(centers) -> np.ndarray:
    """Reorder four points as top-left, top-right, bottom-left, bottom-right.

    The quadrant of each point is the sign of its offset from the centroid.
    """
    c = np.asarray(centers, dtype=np.float64).reshape(-1, 2)
    if len(c) != 4:
        raise ChessboardDetectionError(f"expected 4 chessboards, got {len(c)}")
    mid = c.mean(axis=0)
    q = (c[:, 0] > mid[0]).astype(int) + 2 * (c[:, 1] > mid[1]).astype(int)
    if sorted(q.tolist()) != [0, 1, 2, 3]:
        raise ChessboardDetectionError("chessboard centres do not occupy four distinct quadrants")
    out = np.empty_like(c)
    out[q] = c
    return out


def localize_hsi(
    rgb_grid: GridModel,
    rgb_boards,
    hsi_plate: PlateImage | None = None,
    hsi_boards=None,
    pattern: int = 4,
    inlier_tol_px: float = 2.0,
    seed: int = 0,
) -> Localization:
    """Affine from the RGB chessboard centres to the HSI ones, applied to the RGB grid."""
    if hsi_boards is None:
        if hsi_plate is None:
            raise ValueError("need an HSI plate or explicit board centres")
        hsi_boards = detect_chessboards(hsi_plate, pattern)
    src = order_by_quadrant(_centers(rgb_boards))
    dst = order_by_quadrant(_centers(hsi_boards))
    try:
        fit = estimate_affine_ransac(src, dst, inlier_tol_px=inlier_tol_px, seed=seed)
    except EstimationFailedError as exc:
        raise TrackingError(f"chessboard registration failed: {exc}") from exc
    grid = rgb_grid.transformed(fit.transform)
    grid.chessboard_centers = dst
    grid.meta = dict(rgb_grid.meta, transform=fit.transform.to_list(), inliers=fit.inliers.tolist())
    return Localization(grid, fit.transform, fit.inliers, fit.residuals)


def _centers(boards):
    if len(boards) and isinstance(boards[0], Chessboard):
        return np.array([b.center for b in boards])
    return np.asarray(boards, dtype=np.float64)


# ------------------------------------------------------------------- cells


@dataclass
class CellImage:
    """Bounding-rectangle crop of one grid cell, zero outside its polygon."""

    cell: tuple[int, int]
    data: np.ndarray  # (h, w, C)
    mask: np.ndarray  # (h, w) polygon mask
    polygon: np.ndarray  # (4, 2) plate coordinates
    offset: tuple[int, int]  # plate (row, col) of data[0, 0]
    meta: dict = field(default_factory=dict)

    @property
    def zeroed_fraction(self) -> float:
        return 1.0 - float(self.mask.mean())


def polygon_area(poly) -> float:
    p = np.asarray(poly, dtype=np.float64)
    x, y = p[:, 0], p[:, 1]
    return 0.5 * abs(float(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1))))


def points_in_polygon(poly, xs, ys, eps: float = 1e-9) -> np.ndarray:
    """Convex-polygon containment, boundary included."""
    p = np.asarray(poly, dtype=np.float64)
    c = p.mean(axis=0)
    inside = np.ones(np.broadcast(xs, ys).shape, dtype=bool)
    for k in range(len(p)):
        a, b = p[k], p[(k + 1) % len(p)]
        side_c = (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])
        side = (b[0] - a[0]) * (ys - a[1]) - (b[1] - a[1]) * (xs - a[0])
        inside &= side * np.sign(side_c) >= -eps * max(1.0, abs(side_c))
    return inside


def cell_polygon(grid: GridModel, cell) -> np.ndarray:
    i, j = cell
    n = grid.size - 1
    if not (0 <= i < n and 0 <= j < n):
        raise InvalidGeometryError(f"cell {cell} outside the {n} x {n} grid")
    p = grid.points
    return np.array([p[i, j], p[i + 1, j], p[i + 1, j + 1], p[i, j + 1]])


def extract_cell(plate, grid: GridModel, cell, min_area: float = 25.0) -> CellImage:
    """Circumscribed-rectangle crop of a cell with pixels outside its polygon set to zero."""
    cell = (int(cell[0]), int(cell[1]))
    poly = cell_polygon(grid, cell)
    if polygon_area(poly) < min_area:
        raise InvalidGeometryError(f"cell {cell} polygon area {polygon_area(poly):.1f} below {min_area}")
    data = plate if isinstance(plate, np.ndarray) else plate.data
    if data.ndim == 2:
        data = data[:, :, None]
    h, w = data.shape[:2]
    c0 = max(int(np.floor(poly[:, 0].min() + 1e-9)), 0)
    c1 = min(int(np.ceil(poly[:, 0].max() - 1e-9)), w - 1)
    r0 = max(int(np.floor(poly[:, 1].min() + 1e-9)), 0)
    r1 = min(int(np.ceil(poly[:, 1].max() - 1e-9)), h - 1)
    if c1 < c0 or r1 < r0:
        raise InvalidGeometryError(f"cell {cell} lies outside the image")
    yy, xx = np.mgrid[r0 : r1 + 1, c0 : c1 + 1]
    mask = points_in_polygon(poly, xx.astype(np.float64), yy.astype(np.float64))
    crop = np.where(mask[:, :, None], data[r0 : r1 + 1, c0 : c1 + 1], 0)
    return CellImage(cell, crop, mask, poly, (r0, c0))


def extract_all_cells(plate, grid: GridModel) -> list[CellImage]:
    """All cells, ``i`` (x index) outer, ``j`` inner."""
    n = grid.size - 1
    if n < 1:
        raise InvalidGeometryError("grid has no cells")
    return [extract_cell(plate, grid, (i, j)) for i in range(n) for j in range(n)]


# ------------------------------------------------------------- persistence


def save_cell(cell: CellImage, path, modality: str = "RGB", bit_depth: int = 8, provenance: dict | None = None) -> Path:
    """Cell image as a cube container plus a sidecar JSON with polygon and provenance."""
    path = Path(path)
    cube = ImageCube(cell.data.astype(np.float32), modality, bit_depth, reflectance=True)
    write_cube(cube, path)
    side = {
        "cell": list(cell.cell),
        "polygon": cell.polygon.tolist(),
        "offset": list(cell.offset),
        "mask_pixels": int(cell.mask.sum()),
        **(provenance or {}),
    }
    sidecar = path.with_name(path.name + ".cell.json")
    sidecar.write_text(json.dumps(side, indent=1, sort_keys=True) + "\n")
    return sidecar


def load_cell(path) -> tuple[CellImage, dict]:
    """Inverse of :func:`save_cell`; ``path`` may name the cube header too."""
    path = Path(path)
    if path.name.endswith(".cube.json"):
        path = path.with_name(path.name[: -len(".cube.json")])
    side = json.loads(path.with_name(path.name + ".cell.json").read_text())
    cube = read_cube(path)
    poly = np.asarray(side["polygon"], dtype=np.float64)
    r0, c0 = side["offset"]
    h, w = cube.height, cube.width
    yy, xx = np.mgrid[r0 : r0 + h, c0 : c0 + w]
    mask = points_in_polygon(poly, xx.astype(np.float64), yy.astype(np.float64))
    cell = CellImage(tuple(side["cell"]), cube.data.astype(np.float64), mask, poly, (r0, c0), side)
    return cell, side
