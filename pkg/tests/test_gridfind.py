import numpy as np
import pytest

from grainpipe import synthscene as ss
from grainpipe.errors import GridIncompleteError, NoDishFoundError, OrientationError
from grainpipe.fiducial import detect_markers
from grainpipe.gridfind import (
    EXCLUDED_POINTS,
    GridModel,
    assign_lattice,
    check_grid,
    detect_grid,
    find_dish,
    find_grid_lines,
    grid_intersections,
    orient_axes,
    refine_to_intensity_minima,
)
from grainpipe.pixcodec import ImageCube
from grainpipe.standardize import PlateImage, standardize
from grainpipe.vision import Affine2D


def _scene(spec):
    cube, truth = ss.render_reference(spec)
    s = standardize(cube)
    return s, truth, detect_markers(s.plate)


def _truth_points(truth, plate):
    return truth.to_plate(truth.grid_points, plate.crop_origin, plate.x_scale)


@pytest.fixture(scope="module")
def scene():
    return _scene(ss.SceneSpec.random(21))


def test_dish_found(scene):
    s, truth, _ = scene
    dish = find_dish(s.plate)
    want = truth.to_plate(truth.dish_center, s.plate.crop_origin, s.plate.x_scale)
    assert np.hypot(dish.x - want[0], dish.y - want[1]) <= 2.0


@pytest.mark.parametrize("ring", [(90, 110, 105), (380, 300, 110)])
def test_off_centre_ring_rejected(ring):
    x, y, r = ring
    spec = ss.SceneSpec.random(12, decoys=[{"type": "ring", "x": x, "y": y, "r": r, "width": 2.5}])
    cube, truth = ss.render_reference(spec)
    p = standardize(cube).plate
    dish = find_dish(p)
    want = truth.to_plate(truth.dish_center, p.crop_origin, p.x_scale)
    assert np.hypot(dish.x - want[0], dish.y - want[1]) <= 2.0
    assert dish.radius == pytest.approx(spec.dish_radius * spec.camera_scale, abs=2.0)


def test_no_dish():
    with pytest.raises(NoDishFoundError):
        find_dish(PlateImage(ImageCube(np.full((200, 260, 3), 0.5), reflectance=True), (0, 0)))


def test_lines_and_lattice(scene):
    s, truth, markers = scene
    p = s.plate
    dish = find_dish(p)
    lines = find_grid_lines(p, dish, markers)
    assert len(lines) == 12
    inter = grid_intersections(lines, p.data.shape[:2])
    pts = assign_lattice(orient_axes(inter, markers, dish), lines, p.data.shape[:2])
    assert np.hypot(*(pts - _truth_points(truth, p)).T).max() <= 2.0


def test_pair_member_does_not_change_numbering(scene):
    s, _, markers = scene
    p = s.plate
    dish = find_dish(p)
    lines = find_grid_lines(p, dish, markers)
    inter = grid_intersections(lines, p.data.shape[:2])
    a = orient_axes(inter, markers, dish, member=0)
    b = orient_axes(inter, markers, dish, member=1)
    for x, y in zip(a, b):
        assert x.cross_lines == y.cross_lines
    np.testing.assert_array_equal(assign_lattice(a, lines), assign_lattice(b, lines))


def test_intersections_respect_angle(scene):
    s, _, markers = scene
    p = s.plate
    lines = find_grid_lines(p, find_dish(p), markers)
    inter = grid_intersections(lines, p.data.shape[:2], min_angle_deg=70)
    for i, j in inter.pairs:
        assert abs(np.sin(lines[i].theta - lines[j].theta)) >= np.sin(np.radians(70))
    assert len(inter.points) == 36


def test_detect_grid_matches_truth(scene):
    s, truth, markers = scene
    grid = detect_grid(s.plate, markers, [b.center for b in s.boards], "d01")
    assert np.hypot(*(grid.points - _truth_points(truth, s.plate)).T).max() <= 2.0
    assert [m.id for m in grid.markers] == [3, 7]
    assert grid.chessboard_centers.shape == (4, 2)


@pytest.mark.parametrize(
    "overrides",
    [
        {"decoys": [{"type": "scratch", "p0": [-60, -20], "p1": [40, 30], "width": 2.0}]},
        {"mirror": True},
        {"mirror": True, "marker_quarter_turns": (1, 3)},
    ],
    ids=["scratch", "mirror", "mirror-turned"],
)
def test_robust_scenes(overrides):
    s, truth, markers = _scene(ss.SceneSpec.random(11, **overrides))
    grid = detect_grid(s.plate, markers)
    assert np.hypot(*(grid.points - _truth_points(truth, s.plate)).T).max() <= 2.0


def test_excluded_points_untouched(scene):
    s, _, markers = scene
    raw = detect_grid(s.plate, markers, refine=False)
    refined = refine_to_intensity_minima(raw.points, s.plate)
    for x, y in EXCLUDED_POINTS:
        assert refined[x, y].tobytes() == raw.points[x, y].tobytes()
    moved = [(x, y) for x in range(6) for y in range(6) if (x, y) not in EXCLUDED_POINTS]
    assert any(not np.array_equal(refined[x, y], raw.points[x, y]) for x, y in moved)


def _cross(cx, cy, shape=(80, 90), half=2.5):
    img = np.full(shape + (3,), 0.8)
    ys, xs = np.mgrid[: shape[0], : shape[1]]
    img[(np.abs(xs - cx) <= half) | (np.abs(ys - cy) <= half)] = 0.1
    return PlateImage(ImageCube(img, reflectance=True), (0, 0))


@pytest.mark.parametrize("start", [(35.0, 44.0), (26.0, 37.0), (40.0, 40.0)])
def test_refinement_lands_on_crossing(start):
    plate = _cross(30, 40)
    pts = np.full((6, 6, 2), 5.0)
    pts[1, 1] = start
    out = refine_to_intensity_minima(pts, plate, excluded=set())
    assert np.hypot(out[1, 1, 0] - 30, out[1, 1, 1] - 40) <= 1.0


def test_flat_neighbourhood_keeps_point():
    plate = PlateImage(ImageCube(np.full((50, 50, 3), 0.4), reflectance=True), (0, 0))
    pts = np.random.default_rng(0).uniform(5, 45, (6, 6, 2))
    out = refine_to_intensity_minima(pts, plate, excluded=set())
    np.testing.assert_array_equal(out, pts)


def test_grid_json_round_trip(scene, tmp_path):
    s, _, markers = scene
    grid = detect_grid(s.plate, markers, [b.center for b in s.boards], "d07")
    grid.save(tmp_path / "g.json")
    back = GridModel.load(tmp_path / "g.json")
    np.testing.assert_array_equal(back.points, grid.points)
    assert back.dish_id == "d07"
    assert [m.id for m in back.markers] == [3, 7]
    np.testing.assert_array_equal(back.markers[1].corners, grid.markers[1].corners)
    assert back.dish.to_dict() == grid.dish.to_dict()
    np.testing.assert_array_equal(back.chessboard_centers, grid.chessboard_centers)


def test_grid_file_missing_point(tmp_path):
    d = GridModel(np.zeros((6, 6, 2))).to_dict()
    del d["points"]["2,3"]
    with pytest.raises(GridIncompleteError):
        GridModel.from_dict(d)


def test_transformed_grid():
    pts = np.stack(np.meshgrid(np.arange(6.0), np.arange(6.0), indexing="ij"), -1) * 10
    aff = Affine2D.from_params(0.3, (4.0, -2.0))
    moved = GridModel(pts).transformed(aff)
    np.testing.assert_allclose(moved.points, aff.apply(pts))


def test_check_grid_rejects_swapped_columns():
    pts = np.stack(np.meshgrid(np.arange(6.0), np.arange(6.0), indexing="ij"), -1) * 10
    check_grid(GridModel(pts))
    bad = pts.copy()
    bad[[2, 3]] = bad[[3, 2]]
    with pytest.raises(OrientationError):
        check_grid(GridModel(bad))


def test_too_few_markers(scene):
    s, _, markers = scene
    p = s.plate
    dish = find_dish(p)
    inter = grid_intersections(find_grid_lines(p, dish, markers), p.data.shape[:2])
    with pytest.raises(OrientationError):
        orient_axes(inter, markers[:1], dish)
