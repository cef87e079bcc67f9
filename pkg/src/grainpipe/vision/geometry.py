"""Planar affine transforms and RANSAC estimation."""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np

from ..errors import EstimationFailedError


@dataclass(frozen=True)
class Affine2D:
    """2 x 3 matrix acting on column vectors ``(x, y, 1)``.

    ``(b @ a).apply(p) == b.apply(a.apply(p))``.
    """

    matrix: np.ndarray

    def __post_init__(self):
        m = np.asarray(self.matrix, dtype=np.float64).reshape(2, 3)
        if not np.all(np.isfinite(m)):
            raise ValueError("affine matrix has non-finite entries")
        object.__setattr__(self, "matrix", m)

    @classmethod
    def identity(cls) -> "Affine2D":
        return cls(np.eye(2, 3))

    @classmethod
    def from_params(cls, rotation_deg=0.0, scale=1.0, translation=(0.0, 0.0), center=(0.0, 0.0)):
        """Rotation and uniform scale about ``center`` followed by a translation."""
        a = math.radians(rotation_deg)
        lin = scale * np.array([[math.cos(a), -math.sin(a)], [math.sin(a), math.cos(a)]])
        c = np.asarray(center, dtype=np.float64)
        t = c - lin @ c + np.asarray(translation, dtype=np.float64)
        return cls(np.column_stack([lin, t]))

    @property
    def linear(self) -> np.ndarray:
        return self.matrix[:, :2]

    @property
    def translation(self) -> np.ndarray:
        return self.matrix[:, 2]

    @property
    def det(self) -> float:
        return float(np.linalg.det(self.linear))

    def homogeneous(self) -> np.ndarray:
        return np.vstack([self.matrix, [0.0, 0.0, 1.0]])

    def __matmul__(self, other: "Affine2D") -> "Affine2D":
        return Affine2D((self.homogeneous() @ other.homogeneous())[:2])

    def inverse(self) -> "Affine2D":
        if abs(self.det) <= 1e-9:
            raise ValueError("affine transform is not invertible")
        return Affine2D(np.linalg.inv(self.homogeneous())[:2])

    def apply(self, pts) -> np.ndarray:
        return apply_affine(self, pts)

    def to_list(self):
        return self.matrix.tolist()


def apply_affine(t: Affine2D, pts) -> np.ndarray:
    pts = np.asarray(pts, dtype=np.float64)
    flat = pts.reshape(-1, 2)
    out = flat @ t.linear.T + t.translation
    return out.reshape(pts.shape)


def fit_affine_lstsq(src, dst) -> Affine2D:
    """Least-squares affine mapping ``src`` onto ``dst`` (both N x 2, N >= 3)."""
    src = np.asarray(src, dtype=np.float64).reshape(-1, 2)
    dst = np.asarray(dst, dtype=np.float64).reshape(-1, 2)
    if len(src) < 3:
        raise EstimationFailedError("affine fit needs at least 3 correspondences")
    # centring improves conditioning for pixel-scale coordinates
    cs, cd = src.mean(axis=0), dst.mean(axis=0)
    a = np.column_stack([src - cs, np.ones(len(src))])
    sol, _, rank, _ = np.linalg.lstsq(a, dst - cd, rcond=None)
    if rank < 3:
        raise EstimationFailedError("degenerate (collinear) correspondences")
    lin = sol[:2].T
    t = cd + sol[2] - lin @ cs
    return Affine2D(np.column_stack([lin, t]))


def _minimal_fit(src3, dst3):
    a = np.column_stack([src3, np.ones(3)])
    if abs(np.linalg.det(a)) < 1e-9:
        return None
    return np.linalg.solve(a, dst3).T


@dataclass
class RansacResult:
    transform: Affine2D
    inliers: np.ndarray
    residuals: np.ndarray


def estimate_affine_ransac(
    src_pts,
    dst_pts,
    inlier_tol_px: float = 2.0,
    iterations: int = 2000,
    seed: int = 0,
) -> RansacResult:
    """Affine with the largest consensus set, refit by least squares on its inliers.

    When ``C(n, 3) <= iterations`` every minimal sample is tried, so small
    problems are solved exhaustively; otherwise samples come from a seeded
    generator.  Consensus ties go to the lower residual sum.
    """
    src = np.asarray(src_pts, dtype=np.float64).reshape(-1, 2)
    dst = np.asarray(dst_pts, dtype=np.float64).reshape(-1, 2)
    n = len(src)
    if n != len(dst):
        raise ValueError("source and destination point counts differ")
    if n < 3:
        raise EstimationFailedError(f"need at least 3 correspondences, got {n}")

    if math.comb(n, 3) <= iterations:
        samples = itertools.combinations(range(n), 3)
    else:
        rng = np.random.default_rng(seed)
        samples = (tuple(rng.choice(n, 3, replace=False)) for _ in range(iterations))

    src_h = np.column_stack([src, np.ones(n)])
    best_count, best_cost, best_mask = 0, math.inf, None
    for idx in samples:
        idx = list(idx)
        m = _minimal_fit(src[idx], dst[idx])
        if m is None:
            continue
        err = np.linalg.norm(src_h @ m.T - dst, axis=1)
        mask = err <= inlier_tol_px
        count = int(mask.sum())
        cost = float(np.minimum(err, inlier_tol_px).sum())
        if count > best_count or (count == best_count and cost < best_cost):
            best_count, best_cost, best_mask = count, cost, mask

    if best_mask is None or best_count < 3:
        raise EstimationFailedError(f"best consensus has {best_count} inliers (< 3)")
    model = fit_affine_lstsq(src[best_mask], dst[best_mask])
    resid = np.linalg.norm(model.apply(src) - dst, axis=1)
    return RansacResult(model, np.flatnonzero(best_mask), resid)
