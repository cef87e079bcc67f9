"""Hot inner loops, each with a numba kernel and a numpy fallback.

The public wrappers at the bottom pick the numba version when
:data:`grainpipe._accel.HAVE_NUMBA` is true.  Both variants are kept
importable (``*_numba`` may be ``None``) so tests and the benchmark can pit
them against each other.
"""

import numpy as np
from scipy import ndimage

from .._accel import HAVE_NUMBA, njit

# ---------------------------------------------------------------- labeling


def _find(parent, i):
    root = i
    while parent[root] != root:
        root = parent[root]
    while parent[i] != root:
        nxt = parent[i]
        parent[i] = root
        i = nxt
    return root


def _label_loop(mask, eight):
    h, w = mask.shape
    labels = np.zeros((h, w), dtype=np.int32)
    parent = np.zeros(h * w // 2 + 2, dtype=np.int32)
    nxt = 1
    for y in range(h):
        for x in range(w):
            if not mask[y, x]:
                continue
            best = 0
            # already-visited neighbours: W, NW, N, NE
            for dy, dx in ((0, -1), (-1, -1), (-1, 0), (-1, 1)):
                if not eight and dy != 0 and dx != 0:
                    continue
                yy = y + dy
                xx = x + dx
                if yy < 0 or xx < 0 or xx >= w:
                    continue
                lab = labels[yy, xx]
                if lab == 0:
                    continue
                r = _find_nb(parent, lab)
                if best == 0:
                    best = r
                elif r != best:
                    if r < best:
                        parent[best] = r
                        best = r
                    else:
                        parent[r] = best
            if best == 0:
                if nxt >= parent.shape[0]:
                    grown = np.zeros(parent.shape[0] * 2, dtype=np.int32)
                    grown[: parent.shape[0]] = parent
                    parent = grown
                parent[nxt] = nxt
                best = nxt
                nxt += 1
            labels[y, x] = best
    # resolve roots, renumber by first-scanned pixel
    remap = np.zeros(nxt, dtype=np.int32)
    count = 0
    for y in range(h):
        for x in range(w):
            lab = labels[y, x]
            if lab == 0:
                continue
            r = _find_nb(parent, lab)
            if remap[r] == 0:
                count += 1
                remap[r] = count
            labels[y, x] = remap[r]
    return labels, count


_find_nb = njit(_find) if HAVE_NUMBA else _find
label_numba = njit(_label_loop)


def label_numpy(mask, eight):
    structure = np.ones((3, 3), bool) if eight else ndimage.generate_binary_structure(2, 1)
    labels, count = ndimage.label(mask, structure=structure)
    # ndimage numbers components in raster order of their first pixel
    return labels.astype(np.int32), int(count)


def label(mask, eight=True):
    mask = np.ascontiguousarray(mask, dtype=np.bool_)
    if label_numba is not None:
        labels, count = label_numba(mask, eight)
        return labels, int(count)
    return label_numpy(mask, eight)


# ---------------------------------------------------------------- hough lines


def _hough_lines_loop(ys, xs, cos_t, sin_t, rho_min, rho_res, n_rho, t_center, t_half):
    n_theta = cos_t.shape[0]
    acc = np.zeros((n_rho, n_theta), dtype=np.int32)
    span = min(2 * t_half + 1, n_theta)
    for k in range(ys.shape[0]):
        x = xs[k]
        y = ys[k]
        t0 = t_center[k] - t_half if span < n_theta else 0
        for dt in range(span):
            t = (t0 + dt) % n_theta
            rho = x * cos_t[t] + y * sin_t[t]
            r = int(np.floor((rho - rho_min) / rho_res + 0.5))
            if 0 <= r < n_rho:
                acc[r, t] += 1
    return acc


hough_lines_numba = njit(_hough_lines_loop)


def hough_lines_numpy(ys, xs, cos_t, sin_t, rho_min, rho_res, n_rho, t_center, t_half):
    n_theta = cos_t.shape[0]
    acc = np.zeros((n_rho, n_theta), dtype=np.int32)
    span = min(2 * t_half + 1, n_theta)
    if span < n_theta:
        cols = (t_center[:, None] - t_half + np.arange(span)[None, :]) % n_theta
    else:
        cols = np.broadcast_to(np.arange(n_theta), (ys.shape[0], n_theta))
    step = max(1, 2_000_000 // max(span, 1))
    for s in range(0, ys.shape[0], step):
        c = cols[s : s + step]
        rho = xs[s : s + step, None] * cos_t[c] + ys[s : s + step, None] * sin_t[c]
        r = np.floor((rho - rho_min) / rho_res + 0.5).astype(np.int64)
        ok = (r >= 0) & (r < n_rho)
        np.add.at(acc, (r[ok], c[ok]), 1)
    return acc


def hough_lines_accumulate(ys, xs, cos_t, sin_t, rho_min, rho_res, n_rho, t_center=None, t_half=None):
    """Line votes; with ``t_center`` each point only votes within ``t_half`` bins of its own angle."""
    n = len(ys)
    if t_center is None:
        t_center = np.zeros(n, dtype=np.int64)
        t_half = len(cos_t)
    args = (
        np.ascontiguousarray(ys, dtype=np.float64),
        np.ascontiguousarray(xs, dtype=np.float64),
        np.ascontiguousarray(cos_t, dtype=np.float64),
        np.ascontiguousarray(sin_t, dtype=np.float64),
        float(rho_min),
        float(rho_res),
        int(n_rho),
        np.ascontiguousarray(t_center, dtype=np.int64),
        int(t_half),
    )
    if hough_lines_numba is not None:
        return hough_lines_numba(*args)
    return hough_lines_numpy(*args)


# ---------------------------------------------------------------- hough circle centres


def _center_votes_loop(ys, xs, uy, ux, radii, h, w):
    acc = np.zeros((h, w), dtype=np.int32)
    for k in range(ys.shape[0]):
        for r in radii:
            for sgn in (-1.0, 1.0):
                cx = int(np.floor(xs[k] + sgn * r * ux[k] + 0.5))
                cy = int(np.floor(ys[k] + sgn * r * uy[k] + 0.5))
                if 0 <= cx < w and 0 <= cy < h:
                    acc[cy, cx] += 1
    return acc


center_votes_numba = njit(_center_votes_loop)


def center_votes_numpy(ys, xs, uy, ux, radii, h, w):
    acc = np.zeros((h, w), dtype=np.int32)
    for sgn in (-1.0, 1.0):
        for r in radii:
            cx = np.floor(xs + sgn * r * ux + 0.5).astype(np.int64)
            cy = np.floor(ys + sgn * r * uy + 0.5).astype(np.int64)
            ok = (cx >= 0) & (cx < w) & (cy >= 0) & (cy < h)
            np.add.at(acc, (cy[ok], cx[ok]), 1)
    return acc


def center_votes(ys, xs, uy, ux, radii, shape):
    args = (
        np.ascontiguousarray(ys, dtype=np.float64),
        np.ascontiguousarray(xs, dtype=np.float64),
        np.ascontiguousarray(uy, dtype=np.float64),
        np.ascontiguousarray(ux, dtype=np.float64),
        np.ascontiguousarray(radii, dtype=np.float64),
        int(shape[0]),
        int(shape[1]),
    )
    if center_votes_numba is not None:
        return center_votes_numba(*args)
    return center_votes_numpy(*args)


def _circle_votes_loop(ys, xs, radii, n_angles, h, w, stride):
    """Full-circle voting: every edge pixel votes on rings around itself."""
    acc = np.zeros((radii.shape[0], h, w), dtype=np.int32)
    cos_a = np.cos(np.arange(n_angles) * (2.0 * np.pi / n_angles))
    sin_a = np.sin(np.arange(n_angles) * (2.0 * np.pi / n_angles))
    for k in range(ys.shape[0]):
        for ri in range(radii.shape[0]):
            r = radii[ri]
            last_x = -1
            last_y = -1
            for a in range(n_angles):
                cx = int(np.floor((xs[k] + r * cos_a[a]) / stride + 0.5))
                cy = int(np.floor((ys[k] + r * sin_a[a]) / stride + 0.5))
                if cx == last_x and cy == last_y:
                    continue
                last_x = cx
                last_y = cy
                if 0 <= cx < w and 0 <= cy < h:
                    acc[ri, cy, cx] += 1
    return acc


circle_votes_numba = njit(_circle_votes_loop)


def circle_votes_numpy(ys, xs, radii, n_angles, h, w, stride):
    acc = np.zeros((radii.shape[0], h, w), dtype=np.int32)
    ang = np.arange(n_angles) * (2.0 * np.pi / n_angles)
    for ri, r in enumerate(radii):
        cx = np.floor((xs[:, None] + r * np.cos(ang)) / stride + 0.5).astype(np.int64)
        cy = np.floor((ys[:, None] + r * np.sin(ang)) / stride + 0.5).astype(np.int64)
        # one vote per (pixel, cell), matching the consecutive-duplicate skip closely enough
        keep = np.ones_like(cx, dtype=bool)
        keep[:, 1:] = (cx[:, 1:] != cx[:, :-1]) | (cy[:, 1:] != cy[:, :-1])
        ok = keep & (cx >= 0) & (cx < w) & (cy >= 0) & (cy < h)
        np.add.at(acc[ri], (cy[ok], cx[ok]), 1)
    return acc


def circle_votes(ys, xs, radii, n_angles, shape, stride=1):
    args = (
        np.ascontiguousarray(ys, dtype=np.float64),
        np.ascontiguousarray(xs, dtype=np.float64),
        np.ascontiguousarray(radii, dtype=np.float64),
        int(n_angles),
        int(shape[0]),
        int(shape[1]),
        int(stride),
    )
    if circle_votes_numba is not None:
        return circle_votes_numba(*args)
    return circle_votes_numpy(*args)
