"""Deterministic synthetic line-scan frames with exact ground truth.

Geometry lives in *plate units*: one unit is one pixel of an ideal
size-corrected RGB plate.  A camera maps plate units to raw pixels with a
uniform scale, a horizontal (anamorphic) stretch and an offset.  Dish-fixed
objects (paper, grid, markers, kernels) additionally move by a per-session
affine; plate-fixed objects (white strips, chessboards) do not.

Pixel ``(row, col)`` has its centre at raw ``(x=col, y=row)``.  Rendering
supersamples every pixel on an ``S x S`` grid and averages material
spectra, so edges are anti-aliased.
"""

from __future__ import annotations

import copy
import math
from dataclasses import asdict, dataclass, field
from typing import Any

import numpy as np

from .markers import MARKER_CELLS, marker_pattern
from .pixcodec import ImageCube
from .vision.geometry import Affine2D

# material labels
BACKGROUND, PLATE, STRIP, BOARD_BLACK, BOARD_WHITE, PAPER, RING, BAR = range(8)
MARKER_WHITE, MARKER_BLACK, GLINT, SPECK = 8, 9, 10, 11
KERNEL0 = 16  # kernel k -> KERNEL0 + k, its sprout -> KERNEL0 + 32 + k
N_LABELS = KERNEL0 + 64

RGB_FULL_SCALE = 250.0
HSI_FULL_SCALE = 3600.0
PTFE = 0.97

_GRAY = {
    BACKGROUND: 0.03,
    PLATE: 0.30,
    STRIP: PTFE,
    BOARD_BLACK: 0.05,
    BOARD_WHITE: 0.88,
    RING: 0.08,
    BAR: 0.08,
    MARKER_WHITE: 0.88,
    MARKER_BLACK: 0.05,
    GLINT: 0.95,
    SPECK: PTFE,
}
PAPER_ALBEDO = {"white": 0.45, "black": 0.06}
SPROUT = 0.85


@dataclass
class Camera:
    scale: float = 1.0
    stretch: float = 1.35
    margin: tuple[int, int] = (8, 10)  # raw rows, cols outside the plate

    def frame_shape(self, plate_size) -> tuple[int, int]:
        pw, ph = plate_size
        h = int(math.ceil(self.scale * ph + 2 * self.margin[0])) + 1
        w = int(math.ceil(self.scale * self.stretch * pw + 2 * self.margin[1])) + 1
        return h, w

    def to_raw(self, pts) -> np.ndarray:
        p = np.asarray(pts, dtype=np.float64)
        out = np.empty_like(p)
        out[..., 0] = self.margin[1] + self.scale * self.stretch * p[..., 0]
        out[..., 1] = self.margin[0] + self.scale * p[..., 1]
        return out

    def x_to_world(self, xr):
        return (xr - self.margin[1]) / (self.scale * self.stretch)

    def y_to_world(self, yr):
        return (yr - self.margin[0]) / self.scale


RGB_CAMERA = Camera(1.0, 1.35, (8, 10))
HSI_CAMERA = Camera(0.8, 1.12, (6, 8))


@dataclass
class SceneSpec:
    """Everything needed to render one plate; the same spec renders the same frame."""

    seed: int = 0
    modality: str = "RGB"
    paper: str = "white"
    plate_size: tuple[float, float] = (460.0, 400.0)
    strip_width: float = 22.0
    dish_center: tuple[float, float] = (230.0, 200.0)
    dish_radius: float = 165.0
    grid_rotation_deg: float = 0.0
    grid_offset: tuple[float, float] = (0.0, 0.0)
    grid_spacing: float = 38.0
    grid_lines: int = 6
    bar_width: float = 4.0
    marker_ids: tuple[int, int] = (3, 7)
    marker_cell: float = 5.0
    marker_quarter_turns: tuple[int, int] = (0, 0)
    mirror: bool = False
    board_squares: int = 4
    board_square: float = 16.0
    board_rotation_deg: tuple[float, float, float, float] = (0.0, 0.0, 0.0, 0.0)
    stretch: float = 1.35
    camera_scale: float = 1.0
    hsi_stretch: float = 1.12
    hsi_scale: float = 0.8
    illumination: float = 0.15
    illumination_tilt: float = 0.05
    noise: float = 0.0
    channels: int = 40
    kernels: bool = False
    sprout_days: dict[str, int] = field(default_factory=dict)
    glints: bool = False
    dropout_rate: float = 0.0
    missing_cells: list[tuple[int, int]] = field(default_factory=list)
    decoys: list[dict[str, Any]] = field(default_factory=list)
    quantize: bool = True
    supersample: int = 4

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "SceneSpec":
        d = dict(d)
        for key in ("plate_size", "dish_center", "grid_offset", "marker_ids", "marker_quarter_turns",
                    "board_rotation_deg"):
            if key in d:
                d[key] = tuple(d[key])
        if "missing_cells" in d:
            d["missing_cells"] = [tuple(c) for c in d["missing_cells"]]
        return cls(**d)

    @classmethod
    def random(cls, seed: int, **overrides) -> "SceneSpec":
        """Reference-scene spec with randomized pose, illumination, stretch and noise."""
        rng = np.random.default_rng([seed, 7919])
        params = dict(
            seed=seed,
            dish_center=(230.0 + rng.uniform(-8, 8), 200.0 + rng.uniform(-6, 6)),
            grid_rotation_deg=float(rng.uniform(-5, 5)),
            grid_offset=(float(rng.uniform(-3, 3)), float(rng.uniform(-3, 3))),
            stretch=float(rng.uniform(1.2, 1.4)),
            illumination=float(rng.uniform(0.05, 0.2)),
            illumination_tilt=float(rng.uniform(-0.08, 0.08)),
            noise=float(rng.uniform(0.0, 0.02)),
            board_rotation_deg=tuple(float(a) for a in rng.uniform(-2, 2, 4)),
        )
        params.update(overrides)
        return cls(**params)

    def camera(self, modality: str | None = None) -> Camera:
        modality = modality or self.modality
        if modality == "HSI":
            return Camera(self.hsi_scale, self.hsi_stretch, HSI_CAMERA.margin)
        return Camera(self.camera_scale, self.stretch, RGB_CAMERA.margin)


@dataclass
class GroundTruth:
    """Exact geometry of a rendered frame, in raw-frame pixel coordinates."""

    modality: str
    camera: Camera
    grid_points: np.ndarray  # (6, 6, 2), indexed [x_index, y_index]
    markers: list[dict]
    board_centers: np.ndarray  # (4, 2)
    board_square_raw: tuple[float, float]  # square (width, height) in raw pixels
    board_corners: list[np.ndarray]
    dish_center: np.ndarray
    dish_radius_world: float
    stretch: float
    white_ref: np.ndarray  # (H, C)
    dark_ref: np.ndarray  # (H, C)
    dish_affine: Affine2D
    kernel_masks: dict[tuple[int, int], tuple[tuple[int, int], np.ndarray]] = field(default_factory=dict)
    kernel_centroids: dict[tuple[int, int], np.ndarray] = field(default_factory=dict)
    kernel_spectra: dict[tuple[int, int], np.ndarray] = field(default_factory=dict)
    wavelengths: np.ndarray | None = None
    dropout_pixels: int = 0

    def to_plate(self, pts, crop_origin, x_scale: float) -> np.ndarray:
        """Map raw-frame points into a standardized plate frame."""
        p = np.asarray(pts, dtype=np.float64)
        out = np.empty_like(p)
        out[..., 0] = (p[..., 0] - crop_origin[1] + 0.5) * x_scale - 0.5
        out[..., 1] = p[..., 1] - crop_origin[0]
        return out

    def to_json(self) -> dict:
        return {
            "modality": self.modality,
            "camera": asdict(self.camera),
            "stretch": self.stretch,
            "grid_points": {f"{i},{j}": self.grid_points[i, j].tolist() for i in range(6) for j in range(6)},
            "markers": [{"id": m["id"], "corners": np.asarray(m["corners"]).tolist()} for m in self.markers],
            "board_centers": self.board_centers.tolist(),
            "board_square_raw": list(self.board_square_raw),
            "dish_center": self.dish_center.tolist(),
            "dish_radius_world": self.dish_radius_world,
            "dish_affine": self.dish_affine.to_list(),
            "kernel_centroids": {f"{i},{j}": c.tolist() for (i, j), c in sorted(self.kernel_centroids.items())},
            "kernel_spectra": {f"{i},{j}": s.tolist() for (i, j), s in sorted(self.kernel_spectra.items())},
            "dropout_pixels": self.dropout_pixels,
        }


# --------------------------------------------------------------------- layout


def _rot(deg):
    a = math.radians(deg)
    return np.array([[math.cos(a), -math.sin(a)], [math.sin(a), math.cos(a)]])


class _Layout:
    """World-space geometry of the dish-fixed and plate-fixed objects."""

    def __init__(self, spec: SceneSpec, dish_affine: Affine2D):
        self.spec = spec
        self.affine = dish_affine
        self.inv = dish_affine.inverse()
        self.grid_center = np.array(spec.dish_center) + np.array(spec.grid_offset)
        self.R = _rot(spec.grid_rotation_deg)
        self.half_span = (spec.grid_lines - 1) * spec.grid_spacing / 2
        self.sign_u = -1.0 if spec.mirror else 1.0

    # dish-reference coordinates -> world
    def local_to_ref(self, uv):
        uv = np.asarray(uv, dtype=np.float64)
        return uv @ self.R.T + self.grid_center

    def local_to_world(self, uv):
        return self.affine.apply(self.local_to_ref(uv))

    def line_u(self, x_index):
        return self.sign_u * (x_index * self.spec.grid_spacing - self.half_span)

    def line_v(self, y_index):
        return y_index * self.spec.grid_spacing - self.half_span

    def grid_points_world(self):
        n = self.spec.grid_lines
        uv = np.array([[[self.line_u(i), self.line_v(j)] for j in range(n)] for i in range(n)])
        return self.local_to_world(uv)

    def marker_half(self):
        return MARKER_CELLS * self.spec.marker_cell / 2

    def marker_centers_local(self):
        s = self.spec
        off = self.half_span + s.bar_width / 2 + 3.0 + self.marker_half() + s.marker_cell
        a = np.array([0.0, -off])
        b = np.array([-self.sign_u * off, 0.0])
        return [a, b]

    def marker_corners_world(self, idx):
        h = self.marker_half()
        canon = np.array([[-h, -h], [h, -h], [h, h], [-h, h]])
        q = self.spec.marker_quarter_turns[idx] % 4
        for _ in range(q):
            canon = np.column_stack([-canon[:, 1], canon[:, 0]])
        return self.local_to_world(canon + self.marker_centers_local()[idx])

    def board_centers_world(self):
        s = self.spec
        pw, ph = s.plate_size
        half = s.board_squares * s.board_square / 2
        m = s.strip_width + 8 + half
        top = 8 + half
        return np.array([[m, top], [pw - m, top], [m, ph - top], [pw - m, ph - top]])

    def board_corners_world(self, b):
        s = self.spec
        n = s.board_squares
        k = (np.arange(1, n) - n / 2) * s.board_square
        gx, gy = np.meshgrid(k, k)
        pts = np.column_stack([gx.ravel(), gy.ravel()]) @ _rot(s.board_rotation_deg[b]).T
        return pts + self.board_centers_world()[b]

    def cell_center_local(self, i, j):
        return np.array([self.line_u(i + 0.5), self.line_v(j + 0.5)])


# ------------------------------------------------------------------ rendering


def _block_index(coords, lo, hi):
    a = int(np.searchsorted(coords, lo, side="left"))
    b = int(np.searchsorted(coords, hi, side="right"))
    return a, b


class _Canvas:
    def __init__(self, camera: Camera, shape, ss: int):
        self.camera = camera
        self.h, self.w = shape
        self.ss = ss
        sub = (np.arange(ss) + 0.5) / ss - 0.5
        self.xr = (np.arange(self.w)[:, None] + sub[None, :]).ravel()
        self.yr = (np.arange(self.h)[:, None] + sub[None, :]).ravel()
        self.xw = camera.x_to_world(self.xr)
        self.yw = camera.y_to_world(self.yr)
        # Sample rows are sheared in x (and columns in y) by 1/ss of a
        # sub-step, so every pixel sees ss*ss distinct offsets along each
        # axis and near-axis edges are not quantized to 1/ss coverage.
        shear = (np.arange(ss) - (ss - 1) / 2) / (ss * ss)
        self.dx = np.tile(shear, self.h)
        self.dy = np.tile(shear, self.w)
        self.labels = np.full((self.h * ss, self.w * ss), BACKGROUND, dtype=np.uint8)

    def paint(self, bbox, inside, label, affine_inv: Affine2D | None = None):
        """Paint ``label`` where ``inside(X, Y)`` holds within a world bbox.

        With ``affine_inv`` the predicate receives dish-reference coordinates.
        """
        x0, y0, x1, y1 = bbox
        c0, c1 = _block_index(self.xw, x0, x1)
        r0, r1 = _block_index(self.yw, y0, y1)
        if c0 >= c1 or r0 >= r1:
            return
        X, Y = self.samples(r0, r1, c0, c1)
        if affine_inv is not None:
            m = affine_inv.matrix
            X, Y = m[0, 0] * X + m[0, 1] * Y + m[0, 2], m[1, 0] * X + m[1, 1] * Y + m[1, 2]
        sel = inside(X, Y)
        self.labels[r0:r1, c0:c1][sel] = label
        return self.pixel_box(r0, r1, c0, c1)

    def samples(self, r0, r1, c0, c1):
        """World coordinates of the sample block ``[r0:r1, c0:c1]``."""
        cam = self.camera
        X = cam.x_to_world(self.xr[None, c0:c1] + self.dx[r0:r1, None])
        Y = cam.y_to_world(self.yr[r0:r1, None] + self.dy[None, c0:c1])
        return X, Y

    def pixel_box(self, r0, r1, c0, c1):
        s = self.ss
        return (r0 // s, -(-r1 // s), c0 // s, -(-c1 // s))

    def blocks(self):
        s = self.ss
        return self.labels.reshape(self.h, s, self.w, s).transpose(0, 2, 1, 3).reshape(self.h * self.w, s * s)

    def shade(self, table: np.ndarray) -> np.ndarray:
        """Average ``table[label]`` (L x C) over each pixel's samples."""
        blocks = self.blocks()
        c = table.shape[1]
        out = table[blocks[:, 0]].astype(np.float64)
        mixed = np.flatnonzero((blocks != blocks[:, :1]).any(axis=1))
        for s in range(0, mixed.size, 4096):
            idx = mixed[s : s + 4096]
            out[idx] = table[blocks[idx]].mean(axis=1)
        return out.reshape(self.h, self.w, c)

    def coverage(self, labels, box=None) -> np.ndarray:
        """Fraction of samples carrying any of ``labels``, per pixel of ``box``."""
        r0, r1, c0, c1 = box if box is not None else (0, self.h, 0, self.w)
        s = self.ss
        sub = np.isin(self.labels[r0 * s : r1 * s, c0 * s : c1 * s], labels)
        return sub.reshape(r1 - r0, s, c1 - c0, s).mean(axis=(1, 3))


def _world_bbox_of(points, pad=1.0):
    p = np.asarray(points).reshape(-1, 2)
    return (p[:, 0].min() - pad, p[:, 1].min() - pad, p[:, 0].max() + pad, p[:, 1].max() + pad)


def _kernel_params(spec: SceneSpec):
    rng = np.random.default_rng([spec.seed, 104729])
    n = spec.grid_lines - 1
    out = {}
    for i in range(n):
        for j in range(n):
            out[(i, j)] = dict(
                jitter=rng.uniform(-3, 3, 2),
                a=rng.uniform(9.5, 12.5),
                b=rng.uniform(4.5, 6.0),
                angle=rng.uniform(0, math.pi),
                tone=rng.uniform(0.9, 1.1),
                feature=rng.uniform(0.7, 1.3),
                glint=rng.uniform(0, 1, 3),
            )
    return out


def wavelengths_for(channels: int) -> np.ndarray:
    return 900.0 + np.arange(channels) * (800.0 / (channels - 1))


def kernel_spectrum(wl: np.ndarray, tone: float, feature: float) -> np.ndarray:
    """Smooth barley-like reflectance with water/starch absorption dips."""
    base = 0.42 * tone + 0.05 * (wl - 900) / 800
    dips = 0.10 * np.exp(-0.5 * ((wl - 1200) / 40) ** 2) + 0.16 * np.exp(-0.5 * ((wl - 1450) / 60) ** 2)
    return np.clip(base - feature * dips, 0.05, 0.95)


def _material_table(spec: SceneSpec, modality: str, kparams) -> tuple[np.ndarray, np.ndarray | None]:
    paper = PAPER_ALBEDO[spec.paper]
    if modality == "RGB":
        table = np.zeros((N_LABELS, 3))
        for lab, g in _GRAY.items():
            table[lab] = g
        table[PAPER] = paper
        for k, (cell, p) in enumerate(sorted(kparams.items())):
            table[KERNEL0 + k] = np.array([0.58, 0.44, 0.26]) * p["tone"]
            table[KERNEL0 + 32 + k] = SPROUT
        return table, None
    wl = wavelengths_for(spec.channels)
    tilt = (wl - 1300) / 800
    table = np.zeros((N_LABELS, spec.channels))
    for lab, g in _GRAY.items():
        table[lab] = g
    table[STRIP] = PTFE
    table[PLATE] = 0.30 + 0.03 * tilt
    table[PAPER] = paper * (1 + 0.1 * tilt)
    for k, (cell, p) in enumerate(sorted(kparams.items())):
        table[KERNEL0 + k] = kernel_spectrum(wl, p["tone"], p["feature"])
        table[KERNEL0 + 32 + k] = SPROUT - 0.1 * np.exp(-0.5 * ((wl - 1450) / 60) ** 2)
    return table, wl


def _illumination(spec: SceneSpec, h: int, c: int) -> np.ndarray:
    rows = np.arange(h) / max(h - 1, 1)
    base = 1.0 - spec.illumination * (2 * rows - 1) ** 2 + spec.illumination_tilt * (rows - 0.5)
    chan = 1.0 + 0.04 * np.sin(np.arange(c) * 0.7)
    return base[:, None] * chan[None, :]


def _dark_level(h: int, c: int) -> np.ndarray:
    rows = np.arange(h)[:, None]
    chans = np.arange(c)[None, :]
    return np.round(110 + 25 * np.sin(rows / 37.0 + chans / 5.0) + 0.2 * chans)


def _draw(spec: SceneSpec, modality: str, dish_affine: Affine2D, day: int | None):
    camera = spec.camera(modality)
    lay = _Layout(spec, dish_affine)
    shape = camera.frame_shape(spec.plate_size)
    cv = _Canvas(camera, shape, spec.supersample)
    pw, ph = spec.plate_size
    inv = lay.inv

    cv.paint((0, 0, pw, ph), lambda X, Y: np.ones_like(X, dtype=bool), PLATE)
    sw = spec.strip_width
    cv.paint((0, 0, sw, ph), lambda X, Y: np.ones_like(X, dtype=bool), STRIP)
    cv.paint((pw - sw, 0, pw, ph), lambda X, Y: np.ones_like(X, dtype=bool), STRIP)

    # chessboards (plate-fixed)
    half_b = spec.board_squares * spec.board_square / 2
    for b, c in enumerate(lay.board_centers_world()):
        Rb = _rot(spec.board_rotation_deg[b])
        corners = np.array([[-1, -1], [1, -1], [1, 1], [-1, 1]]) * half_b @ Rb.T + c

        def board_uv(X, Y, c=c, Rb=Rb):
            du, dv = X - c[0], Y - c[1]
            iu = np.floor((Rb[0, 0] * du + Rb[1, 0] * dv + half_b) / spec.board_square)
            iv = np.floor((Rb[0, 1] * du + Rb[1, 1] * dv + half_b) / spec.board_square)
            inside = (iu >= 0) & (iu < spec.board_squares) & (iv >= 0) & (iv < spec.board_squares)
            return inside, (iu + iv) % 2 == 1

        bbox = _world_bbox_of(corners)
        cv.paint(bbox, lambda X, Y, f=board_uv: f(X, Y)[0], BOARD_BLACK)
        cv.paint(bbox, lambda X, Y, f=board_uv: np.logical_and(*f(X, Y)), BOARD_WHITE)

    # decoys on the plate
    for d in spec.decoys:
        if d["type"] == "speck":
            cx, cy, r = d["x"], d["y"], d.get("r", 2.0)
            cv.paint((cx - r, cy - r, cx + r, cy + r), lambda X, Y: (X - cx) ** 2 + (Y - cy) ** 2 <= r * r, SPECK)

    # dish paper disc
    dc = np.array(spec.dish_center)
    R = spec.dish_radius
    disc_box = _world_bbox_of(dish_affine.apply(dc + np.array([[-R, -R], [R, -R], [R, R], [-R, R]])))
    cv.paint(disc_box, lambda X, Y: (X - dc[0]) ** 2 + (Y - dc[1]) ** 2 <= R * R, PAPER, inv)

    for d in spec.decoys:
        if d["type"] == "ring":
            cx, cy, r, wd = d["x"], d["y"], d["r"], d.get("width", 3.0)
            box = (cx - r - wd, cy - r - wd, cx + r + wd, cy + r + wd)
            cv.paint(box, lambda X, Y: np.abs(np.hypot(X - cx, Y - cy) - r) <= wd / 2, RING)

    # grid bars, in grid-local (u, v)
    gc, Rg = lay.grid_center, lay.R
    n = spec.grid_lines
    us = np.array([lay.line_u(i) for i in range(n)])
    vs = np.array([lay.line_v(j) for j in range(n)])
    hw = spec.bar_width / 2
    span = lay.half_span + hw

    def to_local(X, Y):
        dx, dy = X - gc[0], Y - gc[1]
        return Rg[0, 0] * dx + Rg[1, 0] * dy, Rg[0, 1] * dx + Rg[1, 1] * dy

    sp = spec.grid_spacing
    u_first, v_first = us.min(), vs.min()

    def bars(X, Y):
        u, v = to_local(X, Y)
        inside = (np.abs(u) <= span) & (np.abs(v) <= span)
        du = np.mod(u - u_first, sp)
        dv = np.mod(v - v_first, sp)
        near_u = np.minimum(du, sp - du) <= hw
        near_v = np.minimum(dv, sp - dv) <= hw
        return inside & (near_u | near_v)

    grid_box = _world_bbox_of(lay.local_to_world(np.array([[-span, -span], [span, -span], [span, span], [-span, span]])))
    cv.paint(grid_box, bars, BAR, inv)

    for d in spec.decoys:
        if d["type"] in ("bar", "scratch"):
            p0 = np.array(d["p0"], float)
            p1 = np.array(d["p1"], float)
            wd = d.get("width", 3.0)
            seg = p1 - p0
            L2 = float(seg @ seg)

            def seg_fn(X, Y, p0=p0, seg=seg, L2=L2, wd=wd):
                u, v = to_local(X, Y)
                t = np.clip(((u - p0[0]) * seg[0] + (v - p0[1]) * seg[1]) / L2, 0, 1)
                return np.hypot(u - p0[0] - t * seg[0], v - p0[1] - t * seg[1]) <= wd / 2

            box = _world_bbox_of(lay.local_to_world(np.array([p0, p1])), pad=wd + 1)
            cv.paint(box, seg_fn, BAR, inv)

    # markers
    mh = lay.marker_half()
    for idx, mid in enumerate(spec.marker_ids):
        center = lay.marker_centers_local()[idx]
        pattern = np.rot90(marker_pattern(mid), -(spec.marker_quarter_turns[idx] % 4))
        outer = mh + spec.marker_cell
        box = _world_bbox_of(lay.local_to_world(center + np.array([[-outer, -outer], [outer, -outer], [outer, outer], [-outer, outer]])))
        c0, c1 = _block_index(cv.xw, box[0], box[2])
        r0, r1 = _block_index(cv.yw, box[1], box[3])
        if c0 >= c1 or r0 >= r1:
            continue
        X, Y = cv.samples(r0, r1, c0, c1)
        m = inv.matrix
        X, Y = m[0, 0] * X + m[0, 1] * Y + m[0, 2], m[1, 0] * X + m[1, 1] * Y + m[1, 2]
        u, v = to_local(X, Y)
        a, b = u - center[0], v - center[1]
        in_outer = (np.abs(a) <= outer) & (np.abs(b) <= outer)
        col = np.floor((a + mh) / spec.marker_cell).astype(int)
        row = np.floor((b + mh) / spec.marker_cell).astype(int)
        in_code = (col >= 0) & (col < MARKER_CELLS) & (row >= 0) & (row < MARKER_CELLS)
        white = np.zeros_like(in_code)
        white[in_code] = pattern[row[in_code], col[in_code]] == 1
        lab = np.where(in_code & ~white, MARKER_BLACK, MARKER_WHITE)
        cv.labels[r0:r1, c0:c1][in_outer] = lab[in_outer]

    # kernels, sprouts and glints
    kparams = _kernel_params(spec)
    kernel_cells = []
    if spec.kernels:
        for k, (cell, p) in enumerate(sorted(kparams.items())):
            if tuple(cell) in {tuple(c) for c in spec.missing_cells}:
                continue
            cl = lay.cell_center_local(*cell) + p["jitter"]
            ca, sa = math.cos(p["angle"]), math.sin(p["angle"])
            a_ax, b_ax = p["a"], p["b"]

            def ellipse(X, Y, cl=cl, ca=ca, sa=sa, a_ax=a_ax, b_ax=b_ax):
                u, v = to_local(X, Y)
                du, dv = u - cl[0], v - cl[1]
                e1 = (du * ca + dv * sa) / a_ax
                e2 = (-du * sa + dv * ca) / b_ax
                return e1 * e1 + e2 * e2 <= 1.0

            ext = a_ax + 26  # room for the longest sprout
            box = _world_bbox_of(lay.local_to_world(cl + np.array([[-ext, -ext], [ext, -ext], [ext, ext], [-ext, ext]])))
            pbox = cv.paint(box, ellipse, KERNEL0 + k, inv)
            if pbox is None:
                continue
            kernel_cells.append((k, cell, pbox))

            sprout_day = spec.sprout_days.get(f"{cell[0]},{cell[1]}")
            if day is not None and sprout_day is not None and day >= sprout_day:
                length = 4.0 + 2.0 * (day - sprout_day)
                tip = cl + np.array([ca, sa]) * (a_ax + length / 2 - 1)

                def sprout(X, Y, tip=tip, ca=ca, sa=sa, length=length):
                    u, v = to_local(X, Y)
                    du, dv = u - tip[0], v - tip[1]
                    e1 = (du * ca + dv * sa) / (length / 2 + 1)
                    e2 = (-du * sa + dv * ca) / 1.6
                    return e1 * e1 + e2 * e2 <= 1.0

                cv.paint(box, sprout, KERNEL0 + 32 + k, inv)

            if spec.glints:
                g = p["glint"]
                # small specular spot in a cell corner, clear of the kernel
                corner = np.array([lay.sign_u * (1 if g[0] > 0.5 else -1), 1 if g[1] > 0.5 else -1]) * (spec.grid_spacing / 2 - 6)
                gpos = lay.cell_center_local(*cell) + corner
                gr = 1.5 + 1.0 * g[2]
                cv.paint(
                    _world_bbox_of(lay.local_to_world(gpos + np.array([[-4, -4], [4, 4]]))),
                    lambda X, Y, gpos=gpos, gr=gr: np.hypot(*(np.array(to_local(X, Y)) - gpos[:, None, None])) <= gr,
                    GLINT,
                    inv,
                )
    return cv, lay, kparams, kernel_cells


def _render(spec: SceneSpec, modality: str, dish_affine: Affine2D, day: int | None):
    cv, lay, kparams, kernel_cells = _draw(spec, modality, dish_affine, day)
    camera = cv.camera
    table, wl = _material_table(spec, modality, kparams)
    refl = cv.shade(table)
    h, w, c = refl.shape
    rng = np.random.default_rng([spec.seed, 31, 0 if modality == "RGB" else 1, 99 if day is None else day])
    gain = _illumination(spec, h, c)

    if modality == "RGB":
        fs = RGB_FULL_SCALE
        dark = np.zeros((h, c))
        bit_depth, top = 8, 255
    else:
        fs = HSI_FULL_SCALE
        dark = _dark_level(h, c)
        bit_depth, top = 12, 4095
    raw = dark[:, None, :] + refl * gain[:, None, :] * fs
    if spec.noise > 0:
        raw = raw + rng.normal(0.0, spec.noise * fs, raw.shape)

    dropout = 0
    if modality == "HSI" and spec.dropout_rate > 0 and kernel_cells:
        parts = []
        for k, _, box in kernel_cells:
            yy, xx = np.nonzero(cv.coverage([KERNEL0 + k], box) >= 1.0)
            parts.append((yy + box[0], xx + box[2]))
        ys = np.concatenate([q[0] for q in parts])
        xs = np.concatenate([q[1] for q in parts])
        hit = rng.random(ys.size) < spec.dropout_rate
        chans = rng.integers(0, c, hit.sum())
        raw[ys[hit], xs[hit], chans] = 0.0
        dropout = int(hit.sum())

    if spec.quantize:
        raw = np.clip(np.rint(raw), 0, top).astype(np.uint8 if bit_depth == 8 else np.uint16)
    cube = ImageCube(raw, modality, bit_depth, meta={"synthetic": True, "seed": spec.seed})

    gt = GroundTruth(
        modality=modality,
        camera=camera,
        grid_points=camera.to_raw(lay.grid_points_world()),
        markers=[
            {"id": mid, "corners": camera.to_raw(lay.marker_corners_world(i))}
            for i, mid in enumerate(spec.marker_ids)
        ],
        board_centers=camera.to_raw(lay.board_centers_world()),
        board_square_raw=(spec.board_square * camera.scale * camera.stretch, spec.board_square * camera.scale),
        board_corners=[camera.to_raw(lay.board_corners_world(b)) for b in range(4)],
        dish_center=camera.to_raw(dish_affine.apply(np.array(spec.dish_center))),
        dish_radius_world=spec.dish_radius,
        stretch=camera.stretch,
        white_ref=dark + PTFE * gain * fs,
        dark_ref=dark,
        dish_affine=dish_affine,
        wavelengths=wl,
        dropout_pixels=dropout,
    )
    for k, cell, box in kernel_cells:
        labs = [KERNEL0 + k]
        if spec.sprout_days.get(f"{cell[0]},{cell[1]}") is not None:
            labs.append(KERNEL0 + 32 + k)
        ys, xs = np.nonzero(cv.coverage(labs, box) >= 0.5)
        if ys.size == 0:
            continue
        ys, xs = ys + box[0], xs + box[2]
        r0, c0 = ys.min(), xs.min()
        m = np.zeros((ys.max() - r0 + 1, xs.max() - c0 + 1), dtype=bool)
        m[ys - r0, xs - c0] = True
        gt.kernel_masks[cell] = ((int(r0), int(c0)), m)
        gt.kernel_centroids[cell] = np.array([xs.mean(), ys.mean()])
        gt.kernel_spectra[cell] = table[KERNEL0 + k].copy()
    return cube, gt


def render_reference(spec: SceneSpec):
    """White-paper reference frame for one-time grid detection."""
    spec = copy.deepcopy(spec)
    return _render(spec, spec.modality, Affine2D.identity(), None)


def render_dark(spec: SceneSpec, modality: str = "HSI") -> ImageCube:
    """Shutter-closed frame matching the rows of a rendered HSI frame."""
    camera = spec.camera(modality)
    h, w = camera.frame_shape(spec.plate_size)
    rng = np.random.default_rng([spec.seed, 77])
    dark = _dark_level(h, spec.channels)[:, None, :] + rng.normal(0, 1.5, (h, w, spec.channels))
    dark = np.clip(np.rint(dark), 0, 4095).astype(np.uint16)
    return ImageCube(dark, "HSI", 12, meta={"synthetic": True, "dark": True})


def render_session(spec: SceneSpec, day: int, known_affine: Affine2D | None = None, modalities=("RGB",)):
    """Black-paper session frame(s) with kernels; the dish moved by ``known_affine``.

    Returns ``{modality: (cube, GroundTruth)}``.
    """
    spec = copy.deepcopy(spec)
    if spec.paper == "white":
        spec.paper = "black"
    spec.kernels = True
    affine = known_affine if known_affine is not None else Affine2D.identity()
    return {m: _render(spec, m, affine, day) for m in modalities}


def dish_affine(spec: SceneSpec, rotation_deg: float, translation) -> Affine2D:
    """Rigid dish motion about its own centre, in plate units."""
    return Affine2D.from_params(rotation_deg, 1.0, translation, center=spec.dish_center)


def render_kernel_cell(seed: int, size: int = 48, glint: bool = True, channels: int = 3, noise: float = 0.01):
    """A stand-alone cell cut-out: bright ellipse (and optional glint) on dark paper.

    Returns ``(image, truth_mask, glint_mask)``; image is reflectance-like
    float data of shape (size, size, channels).
    """
    rng = np.random.default_rng([seed, 4242])
    ss = 4
    sub = (np.arange(ss) + 0.5) / ss - 0.5
    coords = (np.arange(size)[:, None] + sub[None, :]).ravel()
    X, Y = np.meshgrid(coords, coords)
    c = size / 2 + rng.uniform(-3, 3, 2)
    a, b = rng.uniform(size * 0.22, size * 0.3), rng.uniform(size * 0.1, size * 0.14)
    ang = rng.uniform(0, math.pi)
    du, dv = X - c[0], Y - c[1]
    e = ((du * math.cos(ang) + dv * math.sin(ang)) / a) ** 2 + ((-du * math.sin(ang) + dv * math.cos(ang)) / b) ** 2
    kern = e <= 1.0
    glint_s = np.zeros_like(kern)
    if glint:
        # a small specular spot in the corner farthest from the kernel
        corners = np.array([[5, 5], [size - 6, 5], [5, size - 6], [size - 6, size - 6]], float)
        far = corners[np.argmax(np.hypot(*(corners - c).T))]
        gr = rng.uniform(1.5, 2.5)
        glint_s = (X - far[0]) ** 2 + (Y - far[1]) ** 2 <= gr * gr
    tone = np.array([0.58, 0.44, 0.26])[:channels] if channels == 3 else np.full(channels, 0.4)
    img = np.full((size * ss, size * ss, channels), 0.06)
    img[kern] = tone * rng.uniform(0.9, 1.1)
    img[glint_s] = 0.95
    img = img.reshape(size, ss, size, ss, channels).mean(axis=(1, 3))
    img = img + rng.normal(0, noise, img.shape)
    def down(m):
        return m.reshape(size, ss, size, ss).mean(axis=(1, 3)) >= 0.5
    return img, down(kern), down(glint_s)
