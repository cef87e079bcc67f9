"""End-to-end acceptance checks, one test per criterion.

Each test records a one-line verdict that the terminal summary prints as
``criterion N <title>: PASS|FAIL  <measurements>``.
"""

import math
import time

import numpy as np
import pytest

from grainpipe import cli
from grainpipe import synthscene as ss
from grainpipe.dataset import validate_dataset
from grainpipe.fiducial import MarkerDetection, detect_markers
from grainpipe.gridfind import (
    assign_lattice,
    detect_grid,
    find_dish,
    find_grid_lines,
    grid_intersections,
    orient_axes,
)
from grainpipe.gridtrack import localize_hsi, localize_rgb
from grainpipe.kernelproc import mean_pseudo_absorbance, repair_zero_reflectance, segment_kernel
from grainpipe.pixcodec import ImageCube, pack_mono12p, unpack_mono12p
from grainpipe.standardize import (
    RowReferences,
    build_row_references,
    correct_intensity,
    locate_white_references,
    standardize,
)
from grainpipe.vision import Affine2D, otsu_from_histogram
from conftest import record, tree_digest
from oracles import masked_mean_oracle, otsu_oracle, pack12_oracle, repair_oracle
from test_dataset import write_archive

pytestmark = pytest.mark.slow


def _carry(pts, plate_a, cam_a, aff, plate_b, cam_b):
    raw = plate_a.to_raw(pts)
    w = np.stack([cam_a.x_to_world(raw[..., 0]), cam_a.y_to_world(raw[..., 1])], -1)
    return plate_b.from_raw(cam_b.to_raw(aff.apply(w)))


def _max_err(a, b):
    return float(np.hypot(*(np.asarray(a) - np.asarray(b)).T).max())


def test_criterion_1_codec():
    t0 = time.perf_counter()
    bad = 0
    for v in range(4096):
        buf = pack_mono12p([v])
        bad += len(buf.data) != 2 or unpack_mono12p(buf).tolist() != [v]
    rng = np.random.default_rng(1)
    pairs = rng.integers(0, 4096, (100_000, 2))
    buf = pack_mono12p(pairs.ravel())
    # pairs occupy disjoint 3-byte groups, so one stream holds every pair's packing
    groups = np.frombuffer(buf.data, np.uint8).reshape(-1, 3)
    bad += len(buf.data) != 300_000
    bad += int((unpack_mono12p(buf).reshape(-1, 2) != pairs).any())
    for k in rng.choice(len(pairs), 2000, replace=False):
        bad += groups[k].tobytes() != pack12_oracle(pairs[k])
    for n in range(0, 50):
        bad += len(pack_mono12p(np.zeros(n, int)).data) != math.ceil(3 * n / 2)
    dt = time.perf_counter() - t0
    record(1, "codec round trip", f"mismatches={bad} runtime={dt:.2f}s (limit 5 s)")
    assert bad == 0 and dt < 5.0


def test_criterion_2_correction_identities():
    rng = np.random.default_rng(2)
    worst = 0.0
    for trial in range(20):
        rows, c = int(rng.integers(3, 12)), int(rng.integers(1, 8))
        dark = rng.uniform(0, 400, (rows, c))
        white = dark + rng.uniform(50, 3500, (rows, c))
        refs = RowReferences(np.arange(rows), white, dark)
        for level, want in ((white, 1.0), (dark, 0.0), ((white + dark) / 2, 0.5)):
            raw = ImageCube(np.repeat(level[:, None, :], 5, axis=1), "HSI", 12, reflectance=True)
            worst = max(worst, float(np.abs(correct_intensity(raw, refs).data - want).max()))
    # RGB: references taken from the strips of a raw frame, dark level identically zero
    rgb_dark_max = 0.0
    for trial in range(10):
        h = int(rng.integers(6, 20))
        raw = rng.integers(20, 80, (h, 40, 3)).astype(np.uint8)
        raw[:, 1:6] = rng.integers(180, 255, (h, 5, 3))
        raw[:, 34:39] = rng.integers(180, 255, (h, 5, 3))
        cube = ImageCube(raw)
        refs = build_row_references(cube, locate_white_references(cube))
        rgb_dark_max = max(rgb_dark_max, float(np.abs(refs.dark).max()))
        for level, want in ((refs.white, 1.0), (np.zeros_like(refs.white), 0.0), (refs.white / 2, 0.5)):
            img = ImageCube(np.repeat(level[:, None, :], 4, axis=1), reflectance=True)
            rrefs = RowReferences(np.arange(len(refs.rows)), refs.white, refs.dark)
            worst = max(worst, float(np.abs(correct_intensity(img, rrefs).data - want).max()))
    record(2, "intensity correction identities", f"max deviation={worst:.2e} (limit 1e-9), RGB max |D|={rgb_dark_max}")
    assert worst <= 1e-9 and rgb_dark_max == 0


def test_criterion_3_otsu_oracle():
    rng = np.random.default_rng(3)
    agree = 0
    for k in range(500):
        kind = k % 3
        if kind == 0:
            hist = rng.integers(0, 1000, 256)
        elif kind == 1:
            # sparse: most bins empty, so ties across empty runs are common
            hist = np.where(rng.random(256) < 0.05, rng.integers(1, 50, 256), 0)
        else:
            x = np.concatenate([rng.normal(rng.uniform(30, 120), 15, 3000), rng.normal(rng.uniform(130, 220), 20, 2000)])
            hist = np.bincount(np.clip(x, 0, 255).astype(int), minlength=256)
        if np.count_nonzero(hist) < 2:
            hist[[0, 255]] = 1
        agree += otsu_from_histogram(hist) == otsu_oracle(hist)
    record(3, "Otsu oracle equivalence", f"agreement {agree}/500")
    assert agree == 500


def test_criterion_4_grid_detection():
    n = 50
    worst, index_errors, pair_failures, failures, runtime = 0.0, 0, 0, [], 0.0
    for seed in range(n):
        cube, truth = ss.render_reference(ss.SceneSpec.random(seed))
        t0 = time.perf_counter()
        try:
            s = standardize(cube)
            p = s.plate
            markers = detect_markers(p)
            grid = detect_grid(p, markers, [b.center for b in s.boards])
        except Exception as exc:  # noqa: BLE001 - every scene must be accounted for
            runtime += time.perf_counter() - t0
            failures.append(f"{seed}:{type(exc).__name__}")
            continue
        runtime += time.perf_counter() - t0
        want = truth.to_plate(truth.grid_points, p.crop_origin, p.x_scale)
        worst = max(worst, _max_err(grid.points, want))
        # lattice index of each detection is that of its nearest true point
        d = np.hypot(*(grid.points.reshape(-1, 1, 2) - want.reshape(1, -1, 2)).transpose(2, 0, 1))
        index_errors += int((d.argmin(axis=1) != np.arange(36)).sum())
        # pair-choice invariance, checked outside the timed detection
        dish = find_dish(p)
        lines = find_grid_lines(p, dish, markers)
        inter = grid_intersections(lines, p.data.shape[:2])
        a = assign_lattice(orient_axes(inter, markers, dish, member=0), lines)
        b = assign_lattice(orient_axes(inter, markers, dish, member=1), lines)
        pair_failures += not np.array_equal(a, b)
    record(4, "grid detection", f"scenes={n} failed={failures} max err={worst:.2f}px (limit 2) "
           f"index errors={index_errors} pair-choice mismatches={pair_failures} detection time={runtime:.1f}s (limit 60)")
    assert not failures and worst <= 2.0 and index_errors == 0 and pair_failures == 0 and runtime < 60


def _corrupt(markers, frac, rng):
    corners = np.vstack([m.corners for m in markers])
    k = math.ceil(frac * len(corners))
    idx = rng.choice(len(corners), k, replace=False)
    ang = rng.uniform(0, 2 * np.pi, k)
    corners[idx] += rng.uniform(8, 25, k)[:, None] * np.stack([np.cos(ang), np.sin(ang)], 1)
    return [MarkerDetection(m.id, corners[4 * i : 4 * i + 4]) for i, m in enumerate(markers)], k


def test_criterion_5_tracking():
    rng = np.random.default_rng(5)
    clean, noisy, hsi, n_out = 0.0, 0.0, 0.0, 0
    sessions = 8
    for seed in range(sessions):
        spec = ss.SceneSpec.random(100 + seed, kernels=True, channels=30)
        cube, truth = ss.render_reference(spec)
        s0 = standardize(cube)
        ref = detect_grid(s0.plate, detect_markers(s0.plate), [b.center for b in s0.boards])
        aff = ss.dish_affine(spec, rng.uniform(-15, 15), rng.uniform(-10, 10, 2))
        sess = ss.render_session(spec, 1 + seed % 5, aff, ("RGB", "HSI"))
        (rc, rt), (hc, ht) = sess["RGB"], sess["HSI"]
        s1 = standardize(rc)
        s2 = standardize(hc, ss.render_dark(spec))
        want = _carry(ref.points, s0.plate, truth.camera, aff, s1.plate, rt.camera)
        loc = localize_rgb(ref, s1.plate)
        clean = max(clean, _max_err(loc.grid.points, want))
        bad, k = _corrupt(detect_markers(s1.plate), 0.3, rng)
        n_out = max(n_out, k)
        noisy = max(noisy, _max_err(localize_rgb(ref, markers=bad).grid.points, want))
        lh = localize_hsi(loc.grid, s1.boards, s2.plate)
        want_h = _carry(loc.grid.points, s1.plate, rt.camera, Affine2D.identity(), s2.plate, ht.camera)
        hsi = max(hsi, _max_err(lh.grid.points, want_h))
    record(5, "tracking", f"sessions={sessions} RGB clean={clean:.3f}px (limit 1) "
           f"RGB {n_out}/8 corner outliers={noisy:.3f}px (limit 1.5) HSI={hsi:.3f}px (limit 1.5)")
    assert clean <= 1.0 and noisy <= 1.5 and hsi <= 1.5


def test_criterion_6_segmentation():
    ious, glint_hits = [], 0
    for seed in range(100):
        img, truth, glint = ss.render_kernel_cell(seed)
        mask = segment_kernel(img)
        ious.append((mask & truth).sum() / (mask | truth).sum())
        glint_hits += bool((mask & glint).any())
    record(6, "segmentation", f"min IoU={min(ious):.3f} (limit 0.95) glint included in {glint_hits}/100 scenes")
    assert min(ious) >= 0.95 and glint_hits == 0


def test_criterion_7_spectra():
    rng = np.random.default_rng(7)
    length = len(mean_pseudo_absorbance(rng.uniform(0.1, 1, (3, 3, 224)), np.ones((3, 3), bool)).values)
    rep = 0.0
    for _ in range(300):
        s = rng.uniform(0.05, 1.0, int(rng.integers(5, 80)))
        for _ in range(int(rng.integers(1, 5))):
            a = int(rng.integers(0, s.size))
            s[a : a + int(rng.integers(1, 6))] = 0
        if not (s > 0).any():
            s[0] = 0.3
        rep = max(rep, float(np.abs(repair_zero_reflectance(s) - repair_oracle(s)).max()))
    mean = 0.0
    for _ in range(20):
        c = int(rng.integers(21, 60))
        cube = rng.uniform(0.02, 1.1, (6, 5, c))
        mask = rng.random((6, 5)) < 0.5
        mask[0, 0] = True
        got = mean_pseudo_absorbance(cube, mask).values
        mean = max(mean, float(np.abs(got - masked_mean_oracle(cube.tolist(), mask.tolist(), math.log10)[10 : c - 10]).max()))
    flat = mean_pseudo_absorbance(np.full((4, 4, 224), 0.1), np.ones((4, 4), bool)).values
    flat_dev = float(np.abs(flat - 1.0).max())
    record(7, "spectra", f"length={length} (want 204) repair dev={rep:.1e} mean dev={mean:.1e} "
           f"flat 0.1 dev={flat_dev:.1e} (limits 1e-9)")
    assert length == 204 and rep <= 1e-9 and mean <= 1e-9 and flat_dev <= 1e-9


def test_criterion_8_dataset(tmp_path):
    import os

    plan = {"A": [4, 3], "B": [5, 2]}
    labels = {("A", "dish00", "k00"): 1, ("A", "dish01", "k02"): 3, ("B", "dish00", "k04"): 5}
    write_archive(tmp_path, plan, labels)
    expected = {"kernels": 14, "dishes": 4, "germinated_per_day": {1: 1, 2: 0, 3: 1, 4: 0, 5: 1}, "germinated_any": 3}
    ok = validate_dataset(tmp_path, expected).ok
    (tmp_path / "B" / "dish01" / "k01" / "day4_rgb.cube.json").unlink()
    flagged = validate_dataset(tmp_path, expected).discrepancies == ["B/dish01/k01: missing day4_rgb"]
    real = os.environ.get("GRAINPIPE_DATASET")
    detail = f"synthetic mini-archive pass={ok} missing file flagged={flagged}"
    if real:
        from grainpipe.dataset import PUBLISHED

        keys = ("kernels", "dishes", "germinated_per_day", "germinated_any")
        rep = validate_dataset(real, {k: PUBLISHED[k] for k in keys})
        detail += f"; published archive discrepancies={rep.discrepancies[:5]}"
        ok = ok and rep.ok
    else:
        detail += "; published archive not downloaded, real-data check skipped"
    record(8, "dataset validation", detail)
    assert ok and flagged


def test_criterion_9_determinism(synth_manifest, tmp_path):
    rcs = [cli.main(["run", str(synth_manifest), "--out", str(tmp_path / name)]) for name in ("a", "b")]
    a, b = tree_digest(tmp_path / "a"), tree_digest(tmp_path / "b")
    differ = sorted(set(a) ^ set(b)) + sorted(k for k in set(a) & set(b) if a[k] != b[k])
    record(9, "determinism", f"exit codes={rcs} files={len(a)} differing={len(differ)}")
    assert rcs == [0, 0] and a == b
