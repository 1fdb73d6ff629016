import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import fan_weights
from sonopipe.errors import ResourceError, StructuralError
from sonopipe.frames import EnvelopeFrame
from sonopipe.geometry import ArrayKind, TransducerGeometry, depth_sample_spacing, make_linear_layout, make_phased_layout
from sonopipe.scanconvert import build_table, convert, convert_array, grid_shape, sector_bounds, source_coordinates


def _frame(layout, samples):
    return EnvelopeFrame(np.asarray(samples, dtype=np.float32), layout.sample_frequency, layout.layout_hash)


def _pixel_xz(table):
    nz, nx = table.image_shape
    iz, ix = np.divmod(table.pixel_index, nx)
    return table.origin[0] + ix * table.spacing, table.origin[-1] + iz * table.spacing


@pytest.fixture(scope="module")
def fan3():
    g = TransducerGeometry(16, 0.2, 3e6, ArrayKind.PHASED)
    return make_phased_layout(g, 3, 1, 60.0, 0.0, depth=20.0, samples_per_line=600, sample_freq=20e6)


def test_grid_aligned_identity():
    fs = 20e6
    dz = depth_sample_spacing(fs, 1540.0)
    g = TransducerGeometry(16, dz, 5e6)
    lay = make_linear_layout(g, 16, 1, depth=79 * dz, samples_per_line=80, sample_freq=fs)
    t = build_table(lay, dz)
    assert t.image_shape == (80, 16)
    assert t.valid_count == 80 * 16
    _, w = t.corners()
    assert set(np.unique(w)) <= {0.0, 1.0}
    src = np.random.default_rng(0).uniform(size=(16, 80)).astype(np.float32)
    np.testing.assert_array_equal(convert_array(src, t), src.T)


@pytest.mark.parametrize("lines", [5, 6])
def test_central_axis_symmetry(lines):
    g = TransducerGeometry(16, 0.2, 3e6, ArrayKind.PHASED)
    lay = make_phased_layout(g, lines, 1, 40.0, 0.0, depth=20.0)
    pts = np.array([[0.0, 0.0, r] for r in (2.0, 7.5, 19.0)])
    coords, valid = source_coordinates(lay, pts)
    assert valid.all()
    np.testing.assert_allclose(coords[:, 0], (lines - 1) / 2, atol=1e-12)
    t = build_table(lay, 0.05)
    x, _ = _pixel_xz(t)
    on_axis = np.abs(x) < 1e-9
    if on_axis.any():
        f = t.frac[on_axis, 0]
        np.testing.assert_allclose(f, 0.0 if lines % 2 else 0.5, atol=1e-6)


def test_three_line_fan_matches_direct_inversion(fan3):
    t = build_table(fan3, 0.1)
    angles = fan3.steering_angles[0]
    dz = depth_sample_spacing(fan3.sample_frequency, fan3.speed_of_sound)
    x, z = _pixel_xz(t)
    n_s = fan3.samples_per_line
    line0, k0 = np.divmod(t.base, n_s)
    pick = np.random.default_rng(3).choice(t.valid_count, 400, replace=False)
    for n in pick:
        theta = math.atan2(x[n], z[n])
        i, f = fan_weights(list(angles), theta)
        r = math.hypot(x[n], z[n]) / dz
        kr = min(math.floor(r), n_s - 2)
        # nearly-integer positions may sit on either side of a corner
        got = line0[n] + t.frac[n, 0]
        assert got == pytest.approx(i + f, abs=1e-5)
        assert k0[n] + t.frac[n, 1] == pytest.approx(kr + (r - kr), abs=1e-4)


def test_three_line_fan_outside_pixels_invalid(fan3):
    t = build_table(fan3, 0.1)
    nz, nx = t.image_shape
    iz, ix = np.mgrid[0:nz, 0:nx]
    x = t.origin[0] + ix * t.spacing
    z = t.origin[-1] + iz * t.spacing
    theta = np.arctan2(x, z)
    inside = (np.abs(theta) <= math.radians(30) + 1e-9) & (np.hypot(x, z) <= 20.0 + 1e-9)
    # pixels with a clear margin from the sector edge agree with the direct test
    margin = (np.abs(np.abs(theta) - math.radians(30)) > 1e-6) & (np.abs(np.hypot(x, z) - 20.0) > 1e-6)
    np.testing.assert_array_equal(t.mask[margin], inside[margin])


def _layouts():
    g = TransducerGeometry(32, 0.3, 5e6)
    yield make_linear_layout(g, 32, 2, 15.0, samples_per_line=800), 0.1
    gp = TransducerGeometry(24, 0.2, 3e6, ArrayKind.PHASED)
    yield make_phased_layout(gp, 33, 1, 70.0, 0.0, 25.0, samples_per_line=700, sample_freq=20e6), 0.1
    gm = TransducerGeometry(8, 0.3, 3e6, ArrayKind.MATRIX, 8)
    yield make_phased_layout(gm, 9, 6, 50.0, 40.0, 20.0, samples_per_line=300, sample_freq=8e6), 0.4


LAYOUTS = list(_layouts())


@pytest.mark.parametrize("lay,h", LAYOUTS, ids=["linear", "phased", "volume"])
def test_partition_of_unity(lay, h):
    t = build_table(lay, h)
    _, w = t.corners()
    np.testing.assert_allclose(w.sum(axis=1), 1.0, atol=1e-6)
    img = convert(_frame(lay, np.full(t.source_shape, 2.5)), t)
    assert np.max(np.abs(img.intensities[img.mask] - 2.5)) <= 2.5e-6
    assert not img.intensities[~img.mask].any()
    idx, _ = t.corners()
    assert idx.min() >= 0 and idx.max() < math.prod(t.source_shape)


@pytest.mark.parametrize("lay,h", LAYOUTS, ids=["linear", "phased", "volume"])
def test_monotone_bound_and_linearity(lay, h, rng):
    t = build_table(lay, h)
    a = rng.uniform(-1, 3, t.source_shape).astype(np.float32)
    b = rng.uniform(0, 1, t.source_shape).astype(np.float32)
    ia, ib = convert_array(a, t), convert_array(b, t)
    m = t.mask
    assert ia[m].min() >= a.min() - 1e-6 and ia[m].max() <= a.max() + 1e-6
    lin = convert_array((2 * a - 3 * b).astype(np.float32), t).astype(np.float64)
    expect = 2 * ia.astype(np.float64) - 3 * ib
    assert np.max(np.abs(lin - expect)) <= 1e-5 * np.max(np.abs(expect))


def test_single_line_stripe():
    g = TransducerGeometry(32, 0.3, 5e6)
    lay = make_linear_layout(g, 32, 1, 10.0)
    t = build_table(lay, 0.05)
    src = np.zeros(t.source_shape, np.float32)
    src[12] = 1.0
    img = convert(_frame(lay, src), t)
    cols = np.flatnonzero(img.intensities.any(axis=0))
    xs = img.axis_coordinates("x")[cols]
    x12 = lay.lateral_positions[12]
    pitch = lay.line_pitch
    assert np.all(np.abs(xs - x12) < pitch)
    assert xs.max() - xs.min() <= 2 * pitch + 2 * t.spacing


def test_bounds_and_shape_linear():
    g = TransducerGeometry(128, 0.3, 5e6)
    lay = make_linear_layout(g, 128, 1, 45.0)
    lo, hi = sector_bounds(lay)
    assert lo[0] == pytest.approx(-19.05) and hi[0] == pytest.approx(19.05) and hi[2] == 45.0
    assert grid_shape(lo, hi, 0.0225, False) == (2001, 1694)


def test_bounds_3d_small():
    lay = LAYOUTS[2][0]
    t = build_table(lay, 0.4)
    lo, hi = sector_bounds(lay)
    nz, ny, nx = t.image_shape
    assert abs(nx - ((hi[0] - lo[0]) / 0.4 + 1)) <= 1
    assert abs(ny - ((hi[1] - lo[1]) / 0.4 + 1)) <= 1
    assert abs(nz - (hi[2] / 0.4 + 1)) <= 1


def test_reuse_and_rebuild_bitwise(rng):
    lay, h = LAYOUTS[1]
    t1 = build_table(lay, h)
    t2 = build_table(lay, h)
    for name in ("pixel_index", "base", "frac", "mask"):
        np.testing.assert_array_equal(getattr(t1, name), getattr(t2, name))
    src = rng.uniform(size=t1.source_shape).astype(np.float32)
    a = convert_array(src, t1)
    np.testing.assert_array_equal(a, convert_array(src, t1))
    np.testing.assert_array_equal(a, convert_array(src, t2))


def test_memory_budget_reports_size():
    lay, _ = LAYOUTS[0]
    with pytest.raises(ResourceError, match="bytes"):
        build_table(lay, 0.001, memory_budget=10_000_000)


def test_shape_mismatch():
    lay, h = LAYOUTS[0]
    t = build_table(lay, h)
    with pytest.raises(StructuralError):
        convert_array(np.zeros((3, 3), np.float32), t)


def test_decimated_source_sampling():
    lay, _ = LAYOUTS[0]
    t = build_table(lay, 0.1, samples_per_line=lay.samples_per_line // 2, sample_frequency=lay.sample_frequency / 2)
    assert t.source_shape == (lay.line_count, lay.samples_per_line // 2)
    img = convert_array(np.ones(t.source_shape, np.float32), t)
    np.testing.assert_allclose(img[t.mask], 1.0, atol=1e-6)


def test_uint8_frames_stay_uint8():
    lay, h = LAYOUTS[1]
    t = build_table(lay, h)
    img = convert(_frame(lay, np.zeros(t.source_shape)).__class__(
        np.full(t.source_shape, 200, np.uint8), lay.sample_frequency, lay.layout_hash), t)
    assert img.intensities.dtype == np.uint8
    assert np.all(img.intensities[img.mask] == 200)


@given(st.integers(2, 12), st.floats(10, 150), st.floats(0.05, 0.5))
@settings(max_examples=25, deadline=None)
def test_partition_of_unity_random_fans(lines, fov, h):
    g = TransducerGeometry(16, 0.2, 3e6, ArrayKind.PHASED)
    lay = make_phased_layout(g, lines, 1, fov, 0.0, 10.0, samples_per_line=300, sample_freq=20e6)
    t = build_table(lay, h)
    _, w = t.corners()
    np.testing.assert_allclose(w.sum(axis=1), 1.0, atol=1e-6)
    assert np.all(w >= -1e-7)
