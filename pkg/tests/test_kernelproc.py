import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from grainpipe.errors import DeadPixelError, EmptyMaskError
from grainpipe.gridtrack import CellImage
from grainpipe.kernelproc import (
    Spectrum,
    mean_pseudo_absorbance,
    repair_cube,
    repair_zero_reflectance,
    segment_kernel,
    wavelengths,
)
from grainpipe.synthscene import render_kernel_cell
from oracles import masked_mean_oracle, repair_oracle


def iou(a, b):
    return (a & b).sum() / (a | b).sum()


@pytest.mark.parametrize("seed", range(8))
def test_segmentation_iou(seed):
    img, truth, glint = render_kernel_cell(seed)
    mask = segment_kernel(img)
    assert iou(mask, truth) >= 0.95
    assert not (mask & glint).any()


def test_polygon_mask_limits_foreground():
    img, truth, _ = render_kernel_cell(1, glint=False)
    poly = np.zeros(truth.shape, bool)
    poly[:, : truth.shape[1] // 2] = True
    cell = CellImage((0, 0), img, poly, np.zeros((4, 2)), (0, 0))
    mask = segment_kernel(cell)
    assert not (mask & ~poly).any()


def test_dark_cell_has_no_kernel():
    with pytest.raises(EmptyMaskError):
        segment_kernel(np.full((20, 20, 3), 0.06))
    with pytest.raises(EmptyMaskError):
        segment_kernel(np.ones((5, 5)), np.zeros((5, 5), bool))


def test_repair_examples():
    np.testing.assert_allclose(repair_zero_reflectance([0.5, 0, 0.3]), [0.5, 0.4, 0.3])
    np.testing.assert_allclose(repair_zero_reflectance([0, 0.2, 0.2]), [0.2, 0.2, 0.2])
    np.testing.assert_allclose(repair_zero_reflectance([0.1, 0.4, 0, 0]), [0.1, 0.4, 0.4, 0.4])
    with pytest.raises(DeadPixelError):
        repair_zero_reflectance([0.0, 0.0])


@st.composite
def spectra_with_zero_runs(draw):
    n = draw(st.integers(2, 60))
    s = draw(arrays(np.float64, n, elements=st.floats(0.01, 2.0)))
    for _ in range(draw(st.integers(0, 4))):
        a = draw(st.integers(0, n - 1))
        b = draw(st.integers(a, min(n, a + 8)))
        s[a:b] = 0.0
    if not (s > 0).any():
        s[draw(st.integers(0, n - 1))] = 0.5
    return s


@given(spectra_with_zero_runs())
def test_repair_matches_oracle(s):
    out = repair_zero_reflectance(s)
    np.testing.assert_allclose(out, repair_oracle(s), atol=1e-9, rtol=0)
    np.testing.assert_array_equal(out[s > 0], s[s > 0])


def test_repair_cube_flags_dead_rows():
    px = np.array([[0.2, 0.0, 0.4], [0.0, 0.0, 0.0], [0.1, 0.1, 0.1]])
    out, dead = repair_cube(px)
    assert dead.tolist() == [False, True, False]
    np.testing.assert_allclose(out[0], [0.2, 0.3, 0.4])
    np.testing.assert_array_equal(out[1], 0)


def test_uniform_reflectance():
    mask = np.ones((6, 7), bool)
    s = mean_pseudo_absorbance(np.full((6, 7, 224), 0.1), mask)
    np.testing.assert_allclose(s.values, 1.0, atol=1e-12)
    assert len(s.values) == 204 and s.n_pixels == 42
    s = mean_pseudo_absorbance(np.ones((6, 7, 224)), mask)
    np.testing.assert_array_equal(s.values, 0.0)
    s = mean_pseudo_absorbance(np.full((2, 2, 30), 0.1), np.ones((2, 2), bool), natural_log=True)
    np.testing.assert_allclose(s.values, -math.log(0.1))
    assert s.log_base == "e"


def test_wavelengths_of_retained_channels():
    s = mean_pseudo_absorbance(np.full((2, 2, 224), 0.5), np.ones((2, 2), bool))
    np.testing.assert_allclose(s.wavelengths, 900 + np.arange(10, 214) * 800 / 223)
    assert (np.diff(s.wavelengths) > 0).all()
    w = wavelengths(224)
    assert w[0] == 900 and w[-1] == 1700


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(21, 40), st.booleans())
def test_masked_mean_matches_loop(seed, c, natural):
    rng = np.random.default_rng(seed)
    cube = rng.uniform(0.02, 1.2, (5, 4, c))
    mask = rng.random((5, 4)) < 0.6
    mask[2, 2] = True
    s = mean_pseudo_absorbance(cube, mask, natural_log=natural)
    log = math.log if natural else math.log10
    want = masked_mean_oracle(cube.tolist(), mask.tolist(), log)[10 : c - 10]
    np.testing.assert_allclose(s.values, want, atol=1e-9, rtol=0)
    assert len(s.values) == c - 20


def test_dead_pixels_are_dropped_and_counted():
    cube = np.full((2, 2, 24), 0.1)
    cube[0, 0] = 0.0
    s = mean_pseudo_absorbance(cube, np.ones((2, 2), bool))
    assert s.dead_pixels == 1 and s.n_pixels == 3
    np.testing.assert_allclose(s.values, 1.0)
    with pytest.raises(DeadPixelError):
        mean_pseudo_absorbance(np.zeros((2, 2, 24)), np.ones((2, 2), bool))
    with pytest.raises(EmptyMaskError):
        mean_pseudo_absorbance(cube, np.zeros((2, 2), bool))


def test_clip_flag():
    cube = np.full((1, 1, 24), 1.25)
    assert (mean_pseudo_absorbance(cube, np.ones((1, 1), bool)).values < 0).all()
    np.testing.assert_array_equal(mean_pseudo_absorbance(cube, np.ones((1, 1), bool), clip_reflectance=True).values, 0)


def test_spectrum_csv_round_trip(tmp_path):
    rng = np.random.default_rng(0)
    s = Spectrum(rng.normal(size=204), wavelengths(224)[10:214], 57, 2)
    s.save(tmp_path / "s.csv", dish="d03", day=4, cell=(1, 2))
    assert (tmp_path / "s.csv").read_text().splitlines()[0] == "wavelength_nm,absorbance"
    back = Spectrum.from_csv(tmp_path / "s.csv")
    np.testing.assert_array_equal(back.values, s.values)
    np.testing.assert_allclose(back.wavelengths, s.wavelengths, atol=1e-6)
    assert (back.n_pixels, back.dead_pixels, back.log_base) == (57, 2, "10")
