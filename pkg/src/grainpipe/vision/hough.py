"""Hough circle and line transforms plus line algebra."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from ..errors import NoDishFoundError
from . import _kernels


@dataclass(frozen=True)
class Circle:
    x: float
    y: float
    radius: float
    votes: float = 0.0

    @property
    def center(self) -> tuple[float, float]:
        return (self.x, self.y)

    def to_dict(self):
        return {"center": [self.x, self.y], "radius": self.radius}

    @classmethod
    def from_dict(cls, d):
        return cls(float(d["center"][0]), float(d["center"][1]), float(d["radius"]))


@dataclass(frozen=True)
class HoughLine:
    """Line ``x cos(theta) + y sin(theta) = rho`` with theta in [0, pi)."""

    rho: float
    theta: float
    votes: float = 0.0

    def normalized(self) -> "HoughLine":
        n = math.floor(self.theta / math.pi)
        theta = self.theta - n * math.pi
        rho = -self.rho if n % 2 else self.rho
        if theta >= math.pi:
            theta -= math.pi
            rho = -rho
        return HoughLine(rho, theta, self.votes)

    @property
    def normal(self) -> np.ndarray:
        return np.array([math.cos(self.theta), math.sin(self.theta)])

    @property
    def direction(self) -> np.ndarray:
        return np.array([-math.sin(self.theta), math.cos(self.theta)])

    def distance(self, pts) -> np.ndarray:
        """Signed distance of points (N, 2) in (x, y) order."""
        pts = np.atleast_2d(np.asarray(pts, dtype=np.float64))
        return pts @ self.normal - self.rho

    @classmethod
    def through(cls, p, q) -> "HoughLine":
        d = np.asarray(q, float) - np.asarray(p, float)
        theta = math.atan2(d[1], d[0]) + math.pi / 2
        rho = p[0] * math.cos(theta) + p[1] * math.sin(theta)
        return cls(rho, theta).normalized()


# ---------------------------------------------------------------- circles


def _local_peaks(acc, min_distance, threshold):
    size = 2 * int(min_distance) + 1
    mx = ndimage.maximum_filter(acc, size=size, mode="constant", cval=-np.inf)
    ys, xs = np.nonzero((acc == mx) & (acc >= threshold))
    order = np.lexsort((xs, ys, -acc[ys, xs]))
    taken = []
    for i in order:
        y, x = ys[i], xs[i]
        if all((y - ty) ** 2 + (x - tx) ** 2 > min_distance**2 for ty, tx in taken):
            taken.append((y, x))
    return taken


def _fit_circle(xs, ys):
    """Algebraic least-squares circle (Kasa)."""
    a = np.column_stack([xs, ys, np.ones_like(xs)])
    b = xs**2 + ys**2
    sol, *_ = np.linalg.lstsq(a, b, rcond=None)
    cx, cy = sol[0] / 2, sol[1] / 2
    r = math.sqrt(max(sol[2] + cx**2 + cy**2, 0.0))
    return cx, cy, r


def hough_circles(
    edges,
    r_min: float,
    r_max: float,
    gradients=None,
    *,
    max_circles: int = 5,
    min_distance: float | None = None,
    vote_fraction: float = 0.3,
    n_angles: int = 180,
    refine: bool = True,
) -> list[Circle]:
    """Circle candidates ranked by support (edge pixels on the fitted rim).

    With ``gradients=(gx, gy)`` each edge pixel votes for centres along its
    gradient ray; otherwise it votes on full rings (slower).
    """
    edges = np.asarray(edges, dtype=bool)
    ys, xs = np.nonzero(edges)
    if ys.size == 0 or r_max < r_min:
        return []
    h, w = edges.shape
    radii = np.arange(math.floor(r_min), math.ceil(r_max) + 1, dtype=np.float64)
    if gradients is not None:
        gx, gy = gradients
        gxs, gys = gx[ys, xs], gy[ys, xs]
        norm = np.hypot(gxs, gys)
        ok = norm > 0
        ys, xs = ys[ok], xs[ok]
        ux, uy = gxs[ok] / norm[ok], gys[ok] / norm[ok]
        acc = _kernels.center_votes(ys, xs, uy, ux, radii, (h, w)).astype(np.float64)
        acc = ndimage.gaussian_filter(acc, 1.0)
    else:
        stacked = _kernels.circle_votes(ys, xs, radii, n_angles, (h, w))
        acc = ndimage.gaussian_filter(stacked.max(axis=0).astype(np.float64), 1.0)
    if acc.max() <= 0:
        return []
    min_distance = min_distance if min_distance is not None else max(5.0, r_min / 2)
    peaks = _local_peaks(acc, min_distance, vote_fraction * acc.max())

    exs, eys = np.nonzero(edges)[1].astype(np.float64), np.nonzero(edges)[0].astype(np.float64)
    out = []
    for py, px in peaks[: 4 * max_circles]:
        d = np.hypot(exs - px, eys - py)
        sel = (d >= r_min - 2) & (d <= r_max + 2)
        if not sel.any():
            continue
        hist = np.bincount(np.round(d[sel]).astype(np.int64))
        smooth = np.convolve(hist, [1, 1, 1], mode="same")
        lo = int(max(math.floor(r_min), 0))
        hi = min(int(math.ceil(r_max)), len(smooth) - 1)
        if hi < lo:
            continue
        r0 = lo + int(np.argmax(smooth[lo : hi + 1]))
        on = np.abs(d - r0) <= 2.0
        support = int(on.sum())
        cx, cy, r = float(px), float(py), float(np.mean(d[on]))
        if refine and support >= 8:
            fx, fy, fr = _fit_circle(exs[on], eys[on])
            if abs(fx - px) < 3 and abs(fy - py) < 3 and abs(fr - r0) < 3:
                cx, cy, r = fx, fy, fr
        out.append(Circle(cx, cy, r, float(support)))
    out.sort(key=lambda c: (-c.votes, c.y, c.x))
    return out[:max_circles]


def select_dish_circle(circles, size_band, image_center) -> Circle:
    """Among circles whose radius lies in ``size_band``, the one nearest ``image_center``."""
    lo, hi = size_band
    cands = [c for c in circles if lo <= c.radius <= hi]
    if not cands:
        raise NoDishFoundError(f"no circle with radius in [{lo:.1f}, {hi:.1f}]")
    cx, cy = image_center
    return min(cands, key=lambda c: (math.hypot(c.x - cx, c.y - cy), -c.votes))


# ---------------------------------------------------------------- lines


def hough_lines(
    edges,
    gradients=None,
    *,
    orientation_tol_deg: float = 10.0,
    theta_step_deg: float = 0.5,
    rho_step: float = 1.0,
    min_votes: int | None = None,
    vote_fraction: float = 0.35,
    nms_theta_deg: float = 2.0,
    nms_rho: float = 4.0,
    max_lines: int = 200,
) -> list[HoughLine]:
    """Standard (rho, theta) voting; peaks above the vote threshold, strongest first.

    The threshold is ``min_votes`` when given, else ``vote_fraction`` of the
    strongest peak.  With ``gradients=(gx, gy)`` an edge pixel votes only for
    angles within ``orientation_tol_deg`` of its gradient direction, which
    keeps diagonals through crossings of a grid from collecting votes.
    """
    edges = np.asarray(edges, dtype=bool)
    ys, xs = np.nonzero(edges)
    if ys.size == 0:
        return []
    h, w = edges.shape
    n_theta = int(round(180.0 / theta_step_deg))
    thetas = np.arange(n_theta) * (np.pi / n_theta)
    n_half = int(math.ceil(math.hypot(h, w) / rho_step))
    rho_min = -n_half * rho_step
    n_rho = 2 * n_half + 1
    t_center = t_half = None
    if gradients is not None:
        gx, gy = gradients
        ang = np.mod(np.arctan2(gy[ys, xs], gx[ys, xs]), np.pi)
        t_center = np.rint(ang / (np.pi / n_theta)).astype(np.int64) % n_theta
        t_half = int(math.ceil(orientation_tol_deg / theta_step_deg))
    acc = _kernels.hough_lines_accumulate(
        ys, xs, np.cos(thetas), np.sin(thetas), rho_min, rho_step, n_rho, t_center, t_half
    )
    if acc.max() == 0:
        return []
    thr = min_votes if min_votes is not None else max(2, vote_fraction * acc.max())

    t_half = max(1, int(round(nms_theta_deg / theta_step_deg)))
    r_half = max(1, int(round(nms_rho / rho_step)))
    # theta wraps onto -rho at pi: pad by mirroring
    padded = np.concatenate([acc[::-1, -t_half:], acc, acc[::-1, :t_half]], axis=1)
    mx = ndimage.maximum_filter(padded, size=(2 * r_half + 1, 2 * t_half + 1), mode="constant", cval=0)
    mx = mx[:, t_half:-t_half]
    ri, ti = np.nonzero((acc == mx) & (acc >= thr))
    votes = acc[ri, ti]
    order = np.lexsort((ri, ti, -votes))
    out: list[HoughLine] = []
    for k in order:
        cand = HoughLine(rho_min + ri[k] * rho_step, float(thetas[ti[k]]), float(votes[k]))
        if any(_close(cand, o, nms_rho, math.radians(nms_theta_deg)) for o in out):
            continue
        out.append(cand)
        if len(out) >= max_lines:
            break
    return out


def _aligned(line: HoughLine, ref: HoughLine) -> tuple[float, float]:
    """(rho, theta) of ``line`` expressed in the branch nearest ``ref.theta``."""
    rho, theta = line.rho, line.theta
    if theta - ref.theta > math.pi / 2:
        return -rho, theta - math.pi
    if ref.theta - theta > math.pi / 2:
        return -rho, theta + math.pi
    return rho, theta


def _close(a: HoughLine, b: HoughLine, rho_tol, theta_tol) -> bool:
    rho, theta = _aligned(a, b)
    return abs(theta - b.theta) <= theta_tol and abs(rho - b.rho) <= rho_tol


def average_similar_lines(lines, rho_tol: float = 10.0, theta_tol_deg: float = 2.0) -> list[HoughLine]:
    """Greedy clustering in (rho, theta) with circular theta; each cluster becomes its mean."""
    theta_tol = math.radians(theta_tol_deg)
    clusters: list[list[tuple[float, float, float]]] = []
    means: list[HoughLine] = []
    for line in lines:
        line = line.normalized()
        for ci, m in enumerate(means):
            if _close(line, m, rho_tol, theta_tol):
                rho, theta = _aligned(line, m)
                clusters[ci].append((rho, theta, line.votes))
                arr = np.array(clusters[ci])
                means[ci] = HoughLine(arr[:, 0].mean(), arr[:, 1].mean(), arr[:, 2].sum())
                break
        else:
            clusters.append([(line.rho, line.theta, line.votes)])
            means.append(line)
    return [m.normalized() for m in means]


def intersect(a: HoughLine, b: HoughLine):
    """Intersection point (x, y) of two lines, or ``None`` when near-parallel."""
    s = math.sin(b.theta - a.theta)
    if abs(s) < 1e-6:
        return None
    m = np.array([[math.cos(a.theta), math.sin(a.theta)], [math.cos(b.theta), math.sin(b.theta)]])
    return np.linalg.solve(m, np.array([a.rho, b.rho]))


def line_intersections(lines, bounds, return_pairs: bool = False):
    """Pairwise intersections inside ``[0, width) x [0, height)``.

    ``bounds`` is ``(width, height)``.  With ``return_pairs`` the index pair
    of the two lines through each point is returned as well.
    """
    width, height = bounds
    pts, pairs = [], []
    for i in range(len(lines)):
        for j in range(i + 1, len(lines)):
            p = intersect(lines[i], lines[j])
            if p is None:
                continue
            if 0 <= p[0] < width and 0 <= p[1] < height:
                pts.append(p)
                pairs.append((i, j))
    pts = np.array(pts, dtype=np.float64).reshape(-1, 2)
    if return_pairs:
        return pts, pairs
    return pts
