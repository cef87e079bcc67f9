"""Square binary marker detection on corrected plates.

Dark-bordered markers are found as filled dark blobs whose outline is close
to a quadrilateral.  Each side is refined to the strongest dark-to-light
transition along its normal, the four refined lines are intersected, and the
quad is rectified by a homography to read the 6 x 6 cell pattern.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import ndimage

from .errors import FormatError, MarkerCountError
from .markers import MARKER_BITS, MARKER_CELLS, MARKER_CODES, match_code
from .vision import connected_components, gaussian_smooth, grayscale


@dataclass
class MarkerDetection:
    """Marker id and its corners, clockwise from the canonical top-left."""

    id: int
    corners: np.ndarray  # (4, 2)
    homography: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        self.id = int(self.id)
        self.corners = np.asarray(self.corners, dtype=np.float64).reshape(4, 2)

    @property
    def center(self) -> np.ndarray:
        return marker_center(self)

    def to_dict(self) -> dict:
        return {"id": self.id, "corners": self.corners.tolist()}

    @classmethod
    def from_dict(cls, d) -> "MarkerDetection":
        return cls(d["id"], d["corners"])


def marker_center(m: MarkerDetection) -> np.ndarray:
    """Mean of the four corners."""
    return np.asarray(m.corners, dtype=np.float64).mean(axis=0)


def load_marker_file(path) -> list[MarkerDetection]:
    """Read ``[{"id": int, "corners": [[x, y] x 4]}, ...]``."""
    try:
        items = json.loads(Path(path).read_text())
        out = [MarkerDetection.from_dict(d) for d in items]
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"bad marker file {path}: {exc}") from exc
    return out


def save_marker_file(markers, path) -> None:
    Path(path).write_text(json.dumps([m.to_dict() for m in markers], indent=1, sort_keys=True) + "\n")


# ------------------------------------------------------------------ geometry


def homography_from_points(src, dst) -> np.ndarray:
    """3 x 3 projective map sending 4 ``src`` points onto ``dst``."""
    src = np.asarray(src, dtype=np.float64)
    dst = np.asarray(dst, dtype=np.float64)
    a = np.zeros((8, 8))
    b = np.zeros(8)
    for k, ((x, y), (u, v)) in enumerate(zip(src, dst)):
        a[2 * k] = [x, y, 1, 0, 0, 0, -u * x, -u * y]
        a[2 * k + 1] = [0, 0, 0, x, y, 1, -v * x, -v * y]
        b[2 * k], b[2 * k + 1] = u, v
    h = np.linalg.solve(a, b)
    return np.append(h, 1.0).reshape(3, 3)


def apply_homography(hm, pts) -> np.ndarray:
    pts = np.asarray(pts, dtype=np.float64)
    flat = pts.reshape(-1, 2)
    q = np.column_stack([flat, np.ones(len(flat))]) @ hm.T
    return (q[:, :2] / q[:, 2:3]).reshape(pts.shape)


def _order_clockwise(quad) -> np.ndarray:
    """Clockwise on screen (y down), starting from the corner nearest the top-left."""
    c = quad.mean(axis=0)
    ang = np.arctan2(quad[:, 1] - c[1], quad[:, 0] - c[0])
    q = quad[np.argsort(ang)]
    start = int(np.argmin(q[:, 0] + q[:, 1]))
    return np.roll(q, -start, axis=0)


def _quad_from_blob(ys, xs) -> np.ndarray | None:
    """Four extreme points of a filled blob: a diagonal pair, then the far points on each side of it."""
    pts = np.column_stack([xs, ys]).astype(np.float64)
    c = pts.mean(axis=0)
    p0 = pts[np.argmax(np.hypot(*(pts - c).T))]
    p2 = pts[np.argmax(np.hypot(*(pts - p0).T))]
    d = p2 - p0
    side = d[0] * (pts[:, 1] - p0[1]) - d[1] * (pts[:, 0] - p0[0])
    if side.max() <= 0 or side.min() >= 0:
        return None
    p1 = pts[np.argmax(side)]
    p3 = pts[np.argmin(side)]
    return _order_clockwise(np.array([p0, p1, p2, p3]))


def _quad_area(q) -> float:
    x, y = q[:, 0], q[:, 1]
    return 0.5 * abs(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1)))


def _fit_line(pts):
    c = pts.mean(axis=0)
    _, _, vt = np.linalg.svd(pts - c)
    return c, vt[0]


def _cross(l1, l2):
    (c1, d1), (c2, d2) = l1, l2
    a = np.column_stack([d1, -d2])
    if abs(np.linalg.det(a)) < 1e-9:
        return None
    t = np.linalg.solve(a, c2 - c1)
    return c1 + t[0] * d1


def _flank_centroid(prof) -> float | None:
    """Position of the rising edge in a 1-D profile, in sample units.

    The centroid of the contiguous run of positive differences around the
    largest one; for area-sampled step edges this is unbiased.
    """
    der = np.diff(prof)
    i = int(np.argmax(der))
    if der[i] <= 0:
        return None
    lo, hi = i, i + 1
    while lo > 0 and der[lo - 1] > 0:
        lo -= 1
    while hi < der.size and der[hi] > 0:
        hi += 1
    wgt = der[lo:hi]
    return float((wgt * (np.arange(lo, hi) + 0.5)).sum() / wgt.sum())


def _refine_quad(g, quad, search: int = 3):
    """Move each side onto the dark-to-light transition across it.

    Edges are scanned along whichever pixel axis is closer to the side's
    normal, one scan per pixel row or column, so profiles use the pixel
    values directly without interpolation.
    """
    h, w = g.shape
    centre = quad.mean(axis=0)
    lines = []
    for k in range(4):
        p, q = quad[k], quad[(k + 1) % 4]
        d = q - p
        if np.hypot(*d) < 4:
            return None
        n = np.array([-d[1], d[0]])
        if np.dot(n, (p + q) / 2 - centre) < 0:
            n = -n
        horizontal_scan = abs(n[0]) >= abs(n[1])
        a, b = (0, 1) if horizontal_scan else (1, 0)  # scan axis, running axis
        lo_run, hi_run = sorted((p[b], q[b]))
        span = hi_run - lo_run
        edge = []
        for r in range(int(np.ceil(lo_run + 0.1 * span)), int(np.floor(hi_run - 0.1 * span)) + 1):
            # side position on this row/column
            base = p[a] + (r - p[b]) * d[a] / d[b]
            sgn = 1 if n[a] > 0 else -1
            c0 = int(np.floor(base)) - search
            idx = np.arange(c0, c0 + 2 * search + 2)
            if idx[0] < 0 or idx[-1] >= (w if horizontal_scan else h) or not (0 <= r < (h if horizontal_scan else w)):
                continue
            prof = g[r, idx] if horizontal_scan else g[idx, r]
            if sgn < 0:
                prof = prof[::-1]
            s = _flank_centroid(prof)
            if s is None:
                continue
            pos = idx[0] + s if sgn > 0 else idx[-1] - s
            edge.append((pos, r) if horizontal_scan else (r, pos))
        if len(edge) < 4:
            return None
        edge = np.array(edge, dtype=np.float64)
        c, u = _fit_line(edge)
        # one pass of outlier rejection against the first fit
        off = (edge - c) @ np.array([-u[1], u[0]])
        dev = np.abs(off - np.median(off))
        keep = dev <= 3.0 * 1.4826 * np.median(dev) + 0.05
        lines.append(_fit_line(edge[keep]) if keep.sum() >= 4 else (c, u))
    out = []
    for k in range(4):
        x = _cross(lines[k - 1], lines[k])
        if x is None:
            return None
        out.append(x)
    return np.array(out)


def _read_cells(g, quad, cells=MARKER_CELLS):
    """Mean intensity at the centre of each cell of the rectified quad."""
    canon = np.array([[0, 0], [cells, 0], [cells, cells], [0, cells]], dtype=np.float64)
    hm = homography_from_points(canon, quad)
    # 3 x 3 sub-samples around each cell centre
    sub = np.array([-0.2, 0.0, 0.2])
    cy, cx = np.mgrid[0:cells, 0:cells] + 0.5
    sx = (cx[:, :, None, None] + sub[None, None, None, :]).repeat(3, axis=2)
    sy = (cy[:, :, None, None] + sub[None, None, :, None]).repeat(3, axis=3)
    img = apply_homography(hm, np.stack([sx, sy], axis=-1))
    vals = ndimage.map_coordinates(g, [img[..., 1].ravel(), img[..., 0].ravel()], order=1, mode="nearest")
    return vals.reshape(cells, cells, 9).mean(axis=2), hm


def _decode(cells_val):
    lo, hi = cells_val.min(), cells_val.max()
    if hi - lo < 0.1 * max(abs(hi), 1e-6):
        return None
    t = 0.5 * (lo + hi)
    bits = (cells_val > t).astype(np.uint8)
    border = np.concatenate([bits[0], bits[-1], bits[1:-1, 0], bits[1:-1, -1]])
    if border.any():
        return None
    return match_code(bits[1:-1, 1:-1])


def detect_markers(
    plate,
    dictionary=MARKER_CODES,
    expected: int | None = 2,
    window: int = 21,
    min_contrast: float = 0.15,
    min_area: int = 30,
) -> list[MarkerDetection]:
    """Find markers of the built-in dictionary; sorted by id.

    Dark pixels are those below the midpoint of the local min and max over a
    ``window``-sized neighbourhood with at least ``min_contrast`` spread.
    Only exact dictionary matches are accepted.  With ``expected`` set, any
    other count raises :class:`MarkerCountError`.
    """
    if tuple(dictionary) != MARKER_CODES:
        raise ValueError("only the built-in marker dictionary is supported")
    source = getattr(plate, "source", None)
    if source is not None:
        # Edges are located on the image before horizontal resampling, whose
        # linear interpolation shifts them by a phase-dependent fraction.
        found = detect_markers(source, dictionary, expected, window, min_contrast, min_area)
        canon = np.array([[0, 0], [MARKER_CELLS, 0], [MARKER_CELLS, MARKER_CELLS], [0, MARKER_CELLS]], float)
        out = []
        for m in found:
            corners = plate.from_raw(source.to_raw(m.corners))
            out.append(MarkerDetection(m.id, corners, homography_from_points(canon, corners)))
        return out
    data = plate if isinstance(plate, np.ndarray) else plate.data
    gray = grayscale(data)
    g = gaussian_smooth(gray, 0.7)
    hi = ndimage.maximum_filter(g, size=window, mode="nearest")
    lo = ndimage.minimum_filter(g, size=window, mode="nearest")
    dark = (g < 0.5 * (hi + lo)) & (hi - lo >= min_contrast)

    regions = connected_components(dark, connectivity=8)
    slices = ndimage.find_objects(regions.labels)
    found: dict[int, MarkerDetection] = {}
    h, w = g.shape
    for lab, sl in enumerate(slices, start=1):
        if sl is None or regions.areas[lab - 1] < min_area:
            continue
        r0, r1 = max(sl[0].start - 1, 0), min(sl[0].stop + 1, h)
        c0, c1 = max(sl[1].start - 1, 0), min(sl[1].stop + 1, w)
        bh, bw = r1 - r0, c1 - c0
        if bh < 8 or bw < 8 or max(bh, bw) > 3 * min(bh, bw):
            continue
        blob = ndimage.binary_fill_holes(regions.labels[r0:r1, c0:c1] == lab)
        ys, xs = np.nonzero(blob)
        quad = _quad_from_blob(ys + r0, xs + c0)
        if quad is None:
            continue
        area = _quad_area(quad)
        if area <= 0 or ys.size / area < 0.8 or ys.size / area > 1.35:
            continue
        quad = _refine_quad(gray, quad)
        if quad is None:
            continue
        vals, _ = _read_cells(g, quad)
        m = _decode(vals)
        if m is None:
            continue
        mid, k = m
        canon_corners = np.array([quad[(j - k) % 4] for j in range(4)])
        canon = np.array([[0, 0], [MARKER_CELLS, 0], [MARKER_CELLS, MARKER_CELLS], [0, MARKER_CELLS]], float)
        det = MarkerDetection(mid, canon_corners, homography_from_points(canon, canon_corners))
        prev = found.get(mid)
        if prev is None or _quad_area(det.corners) > _quad_area(prev.corners):
            found[mid] = det
    out = [found[k] for k in sorted(found)]
    if expected is not None and len(out) != expected:
        ids = [m.id for m in out]
        raise MarkerCountError(f"expected {expected} markers, found {len(out)} (ids {ids})", ids)
    return out


__all__ = [
    "MARKER_BITS",
    "MarkerDetection",
    "apply_homography",
    "detect_markers",
    "homography_from_points",
    "load_marker_file",
    "marker_center",
    "save_marker_file",
]
