"""One-time lattice detection on a white-paper reference plate.

The dish is found with a circle transform, the grid bars inside it with a
line transform whose paired bar borders are averaged into centrelines.  The
two markers fix the lattice orientation: from each marker, the two nearest
grid intersections lying towards the dish centre share a border line; the
other line through either of them runs across the grid away from the
marker and its intersections, counted outwards, number the lines of the
other family.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import GridIncompleteError, NoDishFoundError, OrientationError
from .fiducial import MarkerDetection, marker_center
from .vision import (
    Circle,
    HoughLine,
    average_similar_lines,
    edge_detect,
    gaussian_smooth,
    grayscale,
    hough_circles,
    hough_lines,
    intersect,
    select_dish_circle,
)

N_LINES = 6
EXCLUDED_POINTS = frozenset({(0, 0), (0, 5), (5, 0), (5, 5), (3, 0), (2, 0), (0, 3), (0, 2)})


@dataclass
class GridModel:
    """Lattice points ``points[x, y]`` in plate pixel coordinates plus anchors."""

    points: np.ndarray  # (6, 6, 2)
    markers: list[MarkerDetection] = field(default_factory=list)
    chessboard_centers: np.ndarray | None = None
    dish: Circle | None = None
    dish_id: str = ""
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=np.float64)
        if self.points.ndim != 3 or self.points.shape[2] != 2 or self.points.shape[0] != self.points.shape[1]:
            raise ValueError(f"points must be (n, n, 2), got {self.points.shape}")
        if self.chessboard_centers is not None:
            self.chessboard_centers = np.asarray(self.chessboard_centers, dtype=np.float64).reshape(-1, 2)

    @property
    def size(self) -> int:
        return self.points.shape[0]

    def point(self, x: int, y: int) -> np.ndarray:
        return self.points[x, y]

    def transformed(self, affine) -> "GridModel":
        """Every point and anchor mapped through ``affine``."""
        markers = [MarkerDetection(m.id, affine.apply(m.corners)) for m in self.markers]
        boards = None if self.chessboard_centers is None else affine.apply(self.chessboard_centers)
        dish = None
        if self.dish is not None:
            c = affine.apply(np.array(self.dish.center))
            dish = Circle(float(c[0]), float(c[1]), self.dish.radius * math.sqrt(abs(affine.det)), self.dish.votes)
        return GridModel(affine.apply(self.points), markers, boards, dish, self.dish_id, dict(self.meta))

    def to_dict(self) -> dict:
        n = self.size
        return {
            "dish_id": self.dish_id,
            "points": {f"{x},{y}": self.points[x, y].tolist() for y in range(n) for x in range(n)},
            "markers": [m.to_dict() for m in self.markers],
            "chessboard_centers": None if self.chessboard_centers is None else self.chessboard_centers.tolist(),
            "dish_circle": None if self.dish is None else self.dish.to_dict(),
            "meta": self.meta,
        }

    @classmethod
    def from_dict(cls, d) -> "GridModel":
        keys = [tuple(int(v) for v in k.split(",")) for k in d["points"]]
        n = max(max(k) for k in keys) + 1
        pts = np.full((n, n, 2), np.nan)
        for k, (x, y) in zip(d["points"], keys):
            pts[x, y] = d["points"][k]
        if np.isnan(pts).any():
            raise GridIncompleteError("grid file lacks some lattice points")
        return cls(
            pts,
            [MarkerDetection.from_dict(m) for m in d.get("markers", [])],
            d.get("chessboard_centers"),
            Circle.from_dict(d["dish_circle"]) if d.get("dish_circle") else None,
            d.get("dish_id", ""),
            d.get("meta", {}),
        )

    def save(self, path) -> None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(self.to_dict(), indent=1, sort_keys=True) + "\n")

    @classmethod
    def load(cls, path) -> "GridModel":
        return cls.from_dict(json.loads(Path(path).read_text()))


@dataclass
class OrientedAxis:
    anchor_marker_id: int
    base_line: int  # index into the line list
    ordered_points: np.ndarray  # (k, 2), nearest first
    cross_lines: list[int]  # the other line through each ordered point


@dataclass
class Intersections:
    points: np.ndarray  # (N, 2)
    pairs: list[tuple[int, int]]
    lines: list[HoughLine]


# ------------------------------------------------------------------- dish


def find_dish(plate, band=(0.25, 0.48), sigma: float = 1.5, low: float = 0.01, high: float = 0.03) -> Circle:
    """Dish rim: smoothed edges, gradient-directed circle votes, nearest to the image centre."""
    data = plate if isinstance(plate, np.ndarray) else plate.data
    g = gaussian_smooth(grayscale(data), sigma)
    edges, gx, gy = edge_detect(g, low, high, return_gradients=True)
    h, w = g.shape
    circles = hough_circles(edges, band[0] * h, band[1] * h, (gx, gy), max_circles=8)
    if not circles:
        raise NoDishFoundError("no circle candidates")
    return select_dish_circle(circles, (band[0] * h, band[1] * h), (w / 2.0, h / 2.0))


# ------------------------------------------------------------------- lines


def _polygon_mask(shape, poly) -> np.ndarray:
    """Pixels whose centres lie inside a convex polygon given clockwise on screen."""
    h, w = shape
    poly = np.asarray(poly, dtype=np.float64)
    x0, y0 = np.floor(poly.min(axis=0)).astype(int)
    x1, y1 = np.ceil(poly.max(axis=0)).astype(int)
    x0, y0 = max(x0, 0), max(y0, 0)
    x1, y1 = min(x1, w - 1), min(y1, h - 1)
    mask = np.zeros(shape, dtype=bool)
    if x1 < x0 or y1 < y0:
        return mask
    yy, xx = np.mgrid[y0 : y1 + 1, x0 : x1 + 1]
    inside = np.ones(yy.shape, dtype=bool)
    sign = 0.0
    for k in range(len(poly)):
        p, q = poly[k], poly[(k + 1) % len(poly)]
        cross = (q[0] - p[0]) * (yy - p[1]) - (q[1] - p[1]) * (xx - p[0])
        if sign == 0.0:
            c = poly.mean(axis=0)
            sign = np.sign((q[0] - p[0]) * (c[1] - p[1]) - (q[1] - p[1]) * (c[0] - p[0])) or 1.0
        inside &= cross * sign >= 0
    mask[y0 : y1 + 1, x0 : x1 + 1] = inside
    return mask


def _grown_quad(corners, grow: float) -> np.ndarray:
    c = np.asarray(corners, dtype=np.float64)
    centre = c.mean(axis=0)
    return centre + (c - centre) * grow


def _two_means(d, iters: int = 10) -> np.ndarray:
    """Boolean split of 1-D values into a low and a high cluster."""
    lo, hi = float(d.min()), float(d.max())
    high = d > (lo + hi) / 2
    for _ in range(iters):
        if high.all() or not high.any():
            break
        cut = (d[~high].mean() + d[high].mean()) / 2
        new = d > cut
        if (new == high).all():
            break
        high = new
    return high


def _refine_centreline(line: HoughLine, pts, normals, half_width: float, tol_deg: float, rounds: int = 2) -> HoughLine:
    """Least-squares centreline from the two border edge sets of one bar.

    Edge pixels within ``half_width`` of the line whose gradient is within
    ``tol_deg`` of its normal are split into two borders by their offset; a
    common direction is fitted to both (each centred on its own mean) and
    the centreline sits midway between the two border offsets.
    """
    cos_tol = math.cos(math.radians(tol_deg))
    for _ in range(rounds):
        d = line.distance(pts)
        sel = (np.abs(d) <= half_width) & (np.abs(normals @ line.normal) >= cos_tol)
        if sel.sum() < 10:
            return line
        high = _two_means(d[sel])
        sides = [q for q in (pts[sel][~high], pts[sel][high]) if len(q) >= 5]
        if not sides:
            return line
        centred = np.vstack([q - q.mean(axis=0) for q in sides])
        _, _, vt = np.linalg.svd(centred, full_matrices=False)
        direction = vt[0]
        normal = np.array([-direction[1], direction[0]])
        if normal @ line.normal < 0:
            normal = -normal
        rho = float(np.mean([q.mean(axis=0) @ normal for q in sides]))
        line = HoughLine(rho, math.atan2(normal[1], normal[0]), line.votes).normalized()
    return line


def _suppress_duplicates(lines, rho_tol, theta_tol_deg):
    kept: list[HoughLine] = []
    tol = math.radians(theta_tol_deg)
    for ln in sorted(lines, key=lambda ln: -ln.votes):
        if not any(_same_line(ln, k, rho_tol, tol) for k in kept):
            kept.append(ln)
    return kept


def _same_line(a: HoughLine, b: HoughLine, rho_tol, theta_tol) -> bool:
    dt = abs(a.theta - b.theta)
    rho = a.rho
    if dt > math.pi / 2:  # across the theta wrap the normal flips
        dt, rho = math.pi - dt, -rho
    return dt <= theta_tol and abs(rho - b.rho) <= rho_tol


def find_grid_lines(
    plate,
    dish: Circle,
    markers: list[MarkerDetection],
    dish_fraction: float = 0.95,
    marker_grow: float = 1.6,
    sigma: float = 1.0,
    low: float = 0.02,
    high: float = 0.05,
    vote_fraction: float = 0.3,
    rho_tol: float = 10.0,
    theta_tol_deg: float = 2.0,
    refine: bool = True,
) -> list[HoughLine]:
    """Averaged bar centrelines inside the dish with the markers masked out.

    Both borders of a bar vote as separate lines; averaging lines closer than
    ``rho_tol`` pixels and ``theta_tol_deg`` degrees merges them into the
    bar's centreline, which ``refine`` then fits to the border pixels.
    """
    data = plate if isinstance(plate, np.ndarray) else plate.data
    g = gaussian_smooth(grayscale(data), sigma)
    h, w = g.shape
    edges, gx, gy = edge_detect(g, low, high, return_gradients=True)
    yy, xx = np.mgrid[0:h, 0:w]
    mask = (xx - dish.x) ** 2 + (yy - dish.y) ** 2 <= (dish_fraction * dish.radius) ** 2
    for m in markers:
        mask &= ~_polygon_mask((h, w), _grown_quad(m.corners, marker_grow))
    edges &= mask
    lines = hough_lines(edges, (gx, gy), vote_fraction=vote_fraction)
    lines = average_similar_lines(lines, rho_tol, theta_tol_deg)
    if refine and lines:
        ys, xs = np.nonzero(edges)
        pts = np.column_stack([xs, ys]).astype(np.float64)
        mag = np.hypot(gx[ys, xs], gy[ys, xs])
        normals = np.column_stack([gx[ys, xs], gy[ys, xs]]) / np.maximum(mag, 1e-12)[:, None]
        for _ in range(3):
            lines = [_refine_centreline(ln, pts, normals, rho_tol / 2, 10.0) for ln in lines]
            # two peaks on one bar end up close after refinement; keep the better supported
            merged = _suppress_duplicates(lines, rho_tol, 2 * theta_tol_deg)
            if len(merged) == len(lines):
                break
            lines = merged
    return lines


def grid_intersections(lines: list[HoughLine], shape, min_angle_deg: float = 70.0) -> Intersections:
    """Intersections inside the image of line pairs crossing at ``min_angle_deg`` or more."""
    h, w = shape
    pts, pairs = [], []
    min_sin = math.sin(math.radians(min_angle_deg))
    for i in range(len(lines)):
        for j in range(i + 1, len(lines)):
            if abs(math.sin(lines[j].theta - lines[i].theta)) < min_sin:
                continue
            p = intersect(lines[i], lines[j])
            if p is None or not (0 <= p[0] < w and 0 <= p[1] < h):
                continue
            pts.append(p)
            pairs.append((i, j))
    return Intersections(np.asarray(pts, dtype=np.float64).reshape(-1, 2), pairs, list(lines))


# ------------------------------------------------------------- orientation


def _ahead(points, origin, direction) -> np.ndarray:
    """Points whose vector from ``origin`` is less than 90 degrees from ``direction``."""
    return (points - origin) @ direction > 0


def _axis_from_member(inter: Intersections, member: int, partner: int, origin, direction, keep: int):
    shared = set(inter.pairs[member]) & set(inter.pairs[partner])
    if len(shared) != 1:
        raise OrientationError("the two nearest intersections do not share exactly one line")
    base = (set(inter.pairs[member]) - shared).pop()
    on_base = [k for k, pr in enumerate(inter.pairs) if base in pr]
    on_base = [k for k in on_base if _ahead(inter.points[k : k + 1], origin, direction)[0]]
    on_base.sort(key=lambda k: (float(np.hypot(*(inter.points[k] - origin))), k))
    if len(on_base) < keep:
        raise GridIncompleteError(f"only {len(on_base)} qualifying intersections on a base line, need {keep}")
    chosen = on_base[:keep]
    cross = [inter.pairs[k][0] if inter.pairs[k][1] == base else inter.pairs[k][1] for k in chosen]
    return base, inter.points[chosen], cross


def orient_axes(
    inter: Intersections,
    markers: list[MarkerDetection],
    dish: Circle,
    keep: int = N_LINES,
    member: int | None = None,
) -> tuple[OrientedAxis, OrientedAxis]:
    """One oriented axis per marker (lowest id first).

    ``member`` picks which of the two nearest intersections supplies the base
    line (0 or 1); by default both are tried and must agree on the numbered
    cross lines.
    """
    if len(markers) < 2:
        raise OrientationError(f"need 2 markers, got {len(markers)}")
    if len(inter.points) < 10:
        raise OrientationError(f"need at least 10 grid intersections, got {len(inter.points)}")
    centre = np.array(dish.center)
    axes = []
    for m in sorted(markers, key=lambda m: m.id)[:2]:
        origin = marker_center(m)
        direction = centre - origin
        ahead = np.flatnonzero(_ahead(inter.points, origin, direction))
        if ahead.size < 2:
            raise OrientationError(f"fewer than two intersections ahead of marker {m.id}")
        dist = np.hypot(*(inter.points[ahead] - origin).T)
        order = ahead[np.lexsort((ahead, dist))]
        a, b = int(order[0]), int(order[1])
        choices = (0, 1) if member is None else (member,)
        results = []
        for c in choices:
            mem, par = (a, b) if c == 0 else (b, a)
            results.append(_axis_from_member(inter, mem, par, origin, direction, keep))
        if len(results) == 2 and results[0][2] != results[1][2]:
            raise OrientationError(f"numbering from marker {m.id} depends on the chosen intersection")
        base, pts, cross = results[0]
        axes.append(OrientedAxis(m.id, base, pts, cross))
    return axes[0], axes[1]


def assign_lattice(axes, lines: list[HoughLine], shape=None) -> np.ndarray:
    """``points[x, y]`` from the two numbered line families.

    The first axis numbers the lines of constant ``y``, the second those of
    constant ``x``.
    """
    ax_y, ax_x = axes
    y_lines, x_lines = ax_y.cross_lines, ax_x.cross_lines
    if set(y_lines) & set(x_lines):
        raise OrientationError("both axes number the same line; the lattice is degenerate")
    n = len(y_lines)
    if len(x_lines) != n:
        raise GridIncompleteError("axes have different lengths")
    pts = np.empty((n, n, 2))
    for x, lx in enumerate(x_lines):
        for y, ly in enumerate(y_lines):
            p = intersect(lines[lx], lines[ly])
            if p is None:
                raise OrientationError(f"lines for x={x} and y={y} are parallel")
            if shape is not None and not (0 <= p[0] < shape[1] and 0 <= p[1] < shape[0]):
                raise GridIncompleteError(f"lattice point ({x},{y}) falls outside the image")
            pts[x, y] = p
    return pts


# --------------------------------------------------------------- refinement


def _descend(g, start, radius):
    h, w = g.shape
    y0, x0 = int(round(start[1])), int(round(start[0]))
    if not (0 <= y0 < h and 0 <= x0 < w):
        return None
    y, x = y0, x0
    while True:
        best = (g[y, x], y, x)
        for dy in (-1, 0, 1):
            for dx in (-1, 0, 1):
                ny, nx = y + dy, x + dx
                if (dy or dx) and 0 <= ny < h and 0 <= nx < w and (ny - y0) ** 2 + (nx - x0) ** 2 <= radius**2:
                    if g[ny, nx] < best[0]:
                        best = (g[ny, nx], ny, nx)
        if best[1] == y and best[2] == x:
            break
        y, x = best[1], best[2]
    return y, x, (y, x) != (y0, x0)


def _subpixel_min(g, y, x):
    h, w = g.shape
    if not (0 < y < h - 1 and 0 < x < w - 1):
        return float(x), float(y)
    dx = g[y, x + 1] - g[y, x - 1]
    dy = g[y + 1, x] - g[y - 1, x]
    dxx = g[y, x + 1] - 2 * g[y, x] + g[y, x - 1]
    dyy = g[y + 1, x] - 2 * g[y, x] + g[y - 1, x]
    dxy = (g[y + 1, x + 1] - g[y + 1, x - 1] - g[y - 1, x + 1] + g[y - 1, x - 1]) / 4
    hess = np.array([[dxx, dxy], [dxy, dyy]])
    if np.linalg.det(hess) <= 0 or dxx <= 0:
        return float(x), float(y)
    off = -np.linalg.solve(hess, [dx / 2, dy / 2])
    off = np.clip(off, -0.5, 0.5)
    return x + off[0], y + off[1]


def refine_to_intensity_minima(
    points: np.ndarray,
    plate,
    excluded=EXCLUDED_POINTS,
    radius: float = 15.0,
    sigma: float = 3.0,
) -> np.ndarray:
    """Move each non-excluded lattice point downhill on the smoothed grayscale.

    Descent goes pixel by pixel to the lowest 8-neighbour while staying
    within ``radius`` of the start, then a quadratic fit gives the subpixel
    minimum.  A point with no lower neighbour keeps its exact position.
    """
    data = plate if isinstance(plate, np.ndarray) else plate.data
    g = gaussian_smooth(grayscale(data), sigma)
    out = np.array(points, dtype=np.float64, copy=True)
    n = out.shape[0]
    for x in range(n):
        for y in range(out.shape[1]):
            if (x, y) in excluded:
                continue
            res = _descend(g, out[x, y], radius)
            if res is None or not res[2]:
                continue
            out[x, y] = _subpixel_min(g, res[0], res[1])
    return out


# ---------------------------------------------------------------- pipeline


def detect_grid(
    plate,
    markers: list[MarkerDetection],
    chessboard_centers=None,
    dish_id: str = "",
    refine: bool = True,
    excluded=EXCLUDED_POINTS,
    min_angle_deg: float = 70.0,
    dish_band=(0.25, 0.48),
    line_options: dict | None = None,
) -> GridModel:
    """Dish, lines, orientation, lattice and refinement in one call.

    ``line_options`` are passed through to :func:`find_grid_lines`.
    """
    dish = find_dish(plate, band=tuple(dish_band))
    lines = find_grid_lines(plate, dish, markers, **(line_options or {}))
    h, w = plate.data.shape[:2]
    inter = grid_intersections(lines, (h, w), min_angle_deg)
    axes = orient_axes(inter, markers, dish)
    pts = assign_lattice(axes, lines, (h, w))
    raw_pts = pts.copy()
    if refine:
        pts = refine_to_intensity_minima(pts, plate, excluded)
    grid = GridModel(pts, sorted(markers, key=lambda m: m.id), chessboard_centers, dish, dish_id)
    check_grid(grid)
    grid.meta["line_count"] = len(lines)
    grid.meta["max_refine_shift"] = float(np.abs(pts - raw_pts).max())
    return grid


def check_grid(grid: GridModel, dilation: float = 1.1) -> None:
    """Structural checks: every point inside the dilated dish, monotone rows."""
    if grid.dish is not None:
        d = np.hypot(grid.points[..., 0] - grid.dish.x, grid.points[..., 1] - grid.dish.y)
        if (d > dilation * grid.dish.radius).any():
            raise GridIncompleteError("lattice points outside the dish")
    # along fixed y, projections on the x direction must increase strictly
    ex = grid.points[-1, :, :].mean(axis=0) - grid.points[0, :, :].mean(axis=0)
    ey = grid.points[:, -1, :].mean(axis=0) - grid.points[:, 0, :].mean(axis=0)
    if (np.diff(grid.points @ ex, axis=0) <= 0).any() or (np.diff(grid.points @ ey, axis=1) <= 0).any():
        raise OrientationError("lattice is not orientation-consistent")


__all__ = [
    "EXCLUDED_POINTS",
    "GridModel",
    "Intersections",
    "OrientedAxis",
    "assign_lattice",
    "check_grid",
    "detect_grid",
    "find_dish",
    "find_grid_lines",
    "grid_intersections",
    "orient_axes",
    "refine_to_intensity_minima",
]
