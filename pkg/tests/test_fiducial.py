import itertools

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from grainpipe import synthscene as ss
from grainpipe.errors import FormatError, MarkerCountError
from grainpipe.fiducial import (
    MarkerDetection,
    apply_homography,
    detect_markers,
    load_marker_file,
    marker_center,
    save_marker_file,
)
from grainpipe.markers import MARKER_CELLS, MARKER_CODES, code_bits, match_code
from grainpipe.pixcodec import ImageCube
from grainpipe.standardize import PlateImage, standardize

CANON = np.array([[0, 0], [MARKER_CELLS, 0], [MARKER_CELLS, MARKER_CELLS], [0, MARKER_CELLS]], float)


def _detect(spec):
    cube, truth = ss.render_reference(spec)
    plate = standardize(cube).plate
    found = detect_markers(plate)
    want = {m["id"]: truth.to_plate(m["corners"], plate.crop_origin, plate.x_scale) for m in truth.markers}
    return found, want


def test_dictionary_distances():
    bits = [code_bits(c) for c in MARKER_CODES]
    for a, b in itertools.combinations(bits, 2):
        assert (a != b).sum() >= 8
    for a in bits:
        for b in bits:
            for k in (1, 2, 3):
                assert (np.rot90(a, k) != b).sum() >= 4


def test_match_code_rotations():
    for mid, code in enumerate(MARKER_CODES):
        for k in range(4):
            assert match_code(np.rot90(code_bits(code), k)) == (mid, k)
    assert match_code(np.zeros((4, 4))) is None


@pytest.mark.parametrize("seed", [0, 1])
def test_markers_on_synthetic_plate(seed):
    found, want = _detect(ss.SceneSpec.random(seed))
    assert [m.id for m in found] == [3, 7]
    for m in found:
        assert np.hypot(*(m.corners - want[m.id]).T).max() <= 1.5


@pytest.mark.parametrize("turns", [(1, 2), (3, 0), (2, 3)])
def test_rotated_markers_keep_id_and_order(turns):
    found, want = _detect(ss.SceneSpec.random(2, marker_quarter_turns=turns))
    assert [m.id for m in found] == [3, 7]
    for m in found:
        # truth corners rotate with the marker, so canonical order must follow
        assert np.hypot(*(m.corners - want[m.id]).T).max() <= 1.5


def test_homography_reprojects_corners():
    found, _ = _detect(ss.SceneSpec.random(5))
    for m in found:
        np.testing.assert_allclose(apply_homography(m.homography, CANON), m.corners, atol=1e-6)


def test_corners_form_convex_quads():
    found, _ = _detect(ss.SceneSpec.random(8))
    for m in found:
        c = m.corners
        e = np.roll(c, -1, axis=0) - c
        f = np.roll(e, -1, axis=0)
        cross = e[:, 0] * f[:, 1] - e[:, 1] * f[:, 0]
        assert all(x > 0 for x in cross) or all(x < 0 for x in cross)


def test_blank_plate():
    plate = PlateImage(ImageCube(np.full((120, 160, 3), 0.5), reflectance=True), (0, 0))
    with pytest.raises(MarkerCountError) as info:
        detect_markers(plate)
    assert info.value.found_ids == []
    assert detect_markers(plate, expected=None) == []


def test_marker_center():
    unit = MarkerDetection(0, [[0, 0], [1, 0], [1, 1], [0, 1]])
    np.testing.assert_allclose(marker_center(unit), [0.5, 0.5])


@given(arrays(np.float64, (4, 2), elements=st.floats(-1e3, 1e3)), st.floats(-100, 100), st.floats(-100, 100))
def test_marker_center_mean_and_translation(quad, dx, dy):
    m = MarkerDetection(1, quad)
    want = [sum(quad[:, 0]) / 4, sum(quad[:, 1]) / 4]
    np.testing.assert_allclose(marker_center(m), want, atol=1e-9)
    moved = MarkerDetection(1, quad + [dx, dy])
    np.testing.assert_allclose(marker_center(moved), marker_center(m) + [dx, dy], atol=1e-9)


def test_marker_file_round_trip(tmp_path):
    ms = [MarkerDetection(3, [[0, 0], [5, 0], [5, 5], [0, 5]]), MarkerDetection(7, [[9, 9], [12, 9], [12, 12], [9, 12]])]
    save_marker_file(ms, tmp_path / "m.json")
    back = load_marker_file(tmp_path / "m.json")
    assert [m.id for m in back] == [3, 7]
    np.testing.assert_array_equal(back[1].corners, ms[1].corners)
    (tmp_path / "bad.json").write_text('[{"id": 1}]')
    with pytest.raises(FormatError):
        load_marker_file(tmp_path / "bad.json")


def test_unknown_dictionary_rejected():
    plate = PlateImage(ImageCube(np.zeros((20, 20, 1)), reflectance=True), (0, 0))
    with pytest.raises(ValueError):
        detect_markers(plate, dictionary=(1, 2, 3))
