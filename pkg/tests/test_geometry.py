import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import direct_delays
from sonopipe.errors import ParameterError
from sonopipe.geometry import (
    ArrayKind,
    Scanline,
    TransducerGeometry,
    layout_from_config,
    layout_to_config,
    make_linear_layout,
    make_phased_layout,
    transmit_delays,
)


def test_element_positions_centered_grid():
    g = TransducerGeometry(4, 0.5, 1e6, ArrayKind.MATRIX, 3, 0.25)
    pos = g.element_positions
    assert pos.shape == (12, 3)
    # element (i, j) has flat index j * Nx + i
    for j in range(3):
        for i in range(4):
            np.testing.assert_array_equal(pos[j * 4 + i], [(i - 1.5) * 0.5, (j - 1) * 0.25, 0.0])


@pytest.mark.parametrize(
    "kwargs",
    [dict(element_count_x=0, pitch_x=0.3, center_frequency=5e6), dict(element_count_x=8, pitch_x=0.0, center_frequency=5e6),
     dict(element_count_x=8, pitch_x=0.3, center_frequency=0.0),
     dict(element_count_x=8, pitch_x=0.3, center_frequency=5e6, element_count_y=2)],
)
def test_geometry_rejects_bad_values(kwargs):
    with pytest.raises(ParameterError):
        TransducerGeometry(**kwargs)


def test_linear_128_lines(probe128):
    lay = make_linear_layout(probe128, 128, 1, 45.0)
    assert lay.line_count == 128 and lay.transmit_count == 128
    x = lay.lateral_positions
    assert x[-1] - x[0] == pytest.approx(38.1, abs=1e-12)
    assert np.allclose(np.diff(x), 38.1 / 127, atol=1e-12)
    assert all(np.array_equal(s.direction, [0, 0, 1]) for s in lay.scanlines)


def test_interleaved_multiline_count(probe128):
    lay = make_linear_layout(probe128, 128, 2, 45.0)
    assert lay.line_count == 255 and lay.transmit_count == 128
    assert lay.convention == "interleaved"
    # transmit j shares its origin with receive line j * M
    for j, t in enumerate(lay.transmits):
        np.testing.assert_array_equal(t.origin, lay.scanlines[2 * j].origin)


def test_block_multiline_count(probe128):
    lay = make_linear_layout(probe128, 64, 2, 45.0, convention="block")
    assert lay.line_count == 128 and lay.convention == "block"
    assert list(lay.line_to_event[:4]) == [0, 0, 1, 1]


def test_two_lines_at_aperture_extremes(probe128):
    lay = make_linear_layout(probe128, 2, 1, 10.0)
    x = lay.lateral_positions
    assert x[0] == -probe128.aperture_x / 2 and x[1] == probe128.aperture_x / 2


@pytest.mark.parametrize("lines,ml", [(1, 1), (0, 1), (8, 0)])
def test_linear_parameter_domain(probe128, lines, ml):
    with pytest.raises(ParameterError):
        make_linear_layout(probe128, lines, ml)


def test_linear_requires_linear_array():
    g = TransducerGeometry(16, 0.2, 3e6, ArrayKind.PHASED)
    with pytest.raises(ParameterError):
        make_linear_layout(g, 8)


def test_oversampled_layout_allowed(probe128):
    lay = make_linear_layout(probe128, 1024, 1, 5.0)
    assert lay.line_count == 1024


def test_phased_32x16_fan():
    g = TransducerGeometry(32, 0.3, 3e6, ArrayKind.MATRIX, 32)
    lay = make_phased_layout(g, 32, 16, 60.0, 60.0, 70.0)
    assert lay.line_count == 512 and lay.line_shape == (32, 16)
    ax, ay = lay.steering_angles
    assert ax[0] == pytest.approx(-math.pi / 6, abs=1e-12) and ax[-1] == pytest.approx(math.pi / 6, abs=1e-12)
    assert ay[0] == pytest.approx(-math.pi / 6, abs=1e-12)
    assert all(np.array_equal(s.origin, [0, 0, 0]) for s in lay.scanlines)
    # extreme line steered by -30 degrees in both planes
    d = lay.scanlines[0].direction
    assert d == pytest.approx([-0.5, -math.sqrt(3) / 2 * 0.5, math.sqrt(3) / 2 * math.sqrt(3) / 2])


def test_phased_single_line():
    g = TransducerGeometry(16, 0.2, 3e6, ArrayKind.PHASED)
    lay = make_phased_layout(g, 1, 1, 0.0, 0.0, 40.0)
    assert lay.line_count == 1
    np.testing.assert_allclose(lay.scanlines[0].direction, [0, 0, 1])


def test_phased_three_lines():
    g = TransducerGeometry(16, 0.2, 3e6, ArrayKind.PHASED)
    lay = make_phased_layout(g, 3, 1, 60.0, 0.0, 40.0)
    angles = [math.degrees(math.atan2(s.direction[0], s.direction[2])) for s in lay.scanlines]
    assert angles == pytest.approx([-30, 0, 30], abs=1e-12)


@pytest.mark.parametrize("fov", [180.0, 200.0, -1.0])
def test_phased_fov_domain(fov):
    g = TransducerGeometry(16, 0.2, 3e6, ArrayKind.PHASED)
    with pytest.raises(ParameterError):
        make_phased_layout(g, 8, 1, fov)


def test_phased_2d_rejects_elevation():
    g = TransducerGeometry(16, 0.2, 3e6, ArrayKind.PHASED)
    with pytest.raises(ParameterError):
        make_phased_layout(g, 8, 2, 60.0, 10.0)


def test_delay_at_3mm_offset_matches_direct_distance():
    # on-axis focus: the element below it and the aperture edge 1.5 mm away
    g = TransducerGeometry(11, 0.3, 5e6)
    lay = make_linear_layout(g, 11, 1, 30.0, focus_depth=20.0)
    line = lay.transmits[5]
    assert line.origin[0] == 0.0
    pos = g.element_positions[line.elements]
    d = transmit_delays(g, line, 1540.0)
    expect = direct_delays(pos.tolist(), [0.0, 0.0, 20.0], 1540.0)
    np.testing.assert_allclose(d, expect, rtol=0, atol=1e-18)
    assert math.dist(pos[-1], [0, 0, 20]) == pytest.approx(math.hypot(20, 1.5), abs=1e-12)
    # element 3 mm off axis: path sqrt(409) = 20.2237 mm
    g3 = TransducerGeometry(21, 0.3, 5e6)
    lay3 = make_linear_layout(g3, 21, 1, 30.0, focus_depth=20.0)
    d3 = transmit_delays(g3, lay3.transmits[10], 1540.0)
    assert math.dist(g3.element_positions[20], [0, 0, 20]) == pytest.approx(20.2237, abs=1e-4)
    assert d3[10] - d3[20] == pytest.approx((math.sqrt(409) - 20) / 1540e3, rel=1e-9)
    # element under the focus fires last, aperture edge first
    assert np.argmax(d) == 5 and d[0] == 0.0 and d[-1] == 0.0
    assert d[5] == pytest.approx((math.hypot(20, 1.5) - 20) / 1540e3, rel=1e-12)


def test_delays_symmetric_for_centered_focus(probe128):
    lay = make_linear_layout(probe128, 2, 1, 40.0, focus_depth=20.0, active_aperture=None)
    line = Scanline(np.zeros(3), np.array([0.0, 0.0, 1.0]), 20.0, 40.0, np.zeros(128), np.ones(128), np.arange(128))
    d = transmit_delays(probe128, line)
    np.testing.assert_allclose(d, d[::-1], rtol=0, atol=1e-12)
    assert d.min() == 0.0


def test_delay_requires_positive_focus(probe128):
    line = Scanline(np.zeros(3), np.array([0.0, 0.0, 1.0]), 0.0, 40.0, np.zeros(4), np.ones(4), np.arange(4))
    with pytest.raises(ParameterError):
        transmit_delays(probe128, line)


def _all_layouts():
    g = TransducerGeometry(64, 0.3, 5e6)
    yield make_linear_layout(g, 32, 1, 30.0)
    yield make_linear_layout(g, 32, 3, 30.0, active_aperture=24)
    yield make_linear_layout(g, 16, 2, 30.0, convention="block", active_aperture=17)
    yield make_phased_layout(TransducerGeometry(32, 0.2, 3e6, ArrayKind.PHASED), 45, 1, 75.0, 0.0, 60.0)
    yield make_phased_layout(TransducerGeometry(8, 0.3, 3e6, ArrayKind.MATRIX, 8), 6, 5, 50.0, 40.0, 50.0)


@pytest.mark.parametrize("lay", list(_all_layouts()), ids=lambda l: f"{l.kind.value}-{l.line_count}")
def test_layout_invariants(lay):
    # receive window covers the imaging depth
    depth_time = 2 * lay.depth * 1e-3 / lay.speed_of_sound
    assert all(s.max_depth * 2e-3 / lay.speed_of_sound <= lay.samples_per_line / lay.sample_frequency for s in lay.scanlines)
    assert depth_time <= (lay.samples_per_line - 1) / lay.sample_frequency + 1e-15
    for s in lay.transmits:
        assert abs(np.linalg.norm(s.direction) - 1) <= 1e-9
        assert s.transmit_delays.min() == 0.0 and np.all(s.transmit_delays >= 0)
        assert np.all((s.transmit_apodization >= 0) & (s.transmit_apodization <= 1))
    if lay.kind == ArrayKind.LINEAR:
        assert all(np.array_equal(s.direction, lay.scanlines[0].direction) for s in lay.scanlines)
    else:
        assert all(np.array_equal(s.origin, lay.scanlines[0].origin) for s in lay.scanlines)


@pytest.mark.parametrize("lay", list(_all_layouts())[:3], ids=str)
def test_delay_profile_concave(lay):
    for t in lay.transmits:
        second = np.diff(t.transmit_delays, 2)
        assert np.all(second <= 1e-15)


@given(st.integers(2, 70), st.sampled_from([32, 64, 128]))
@settings(max_examples=40, deadline=None)
def test_nested_refinement_exact_subset(lines, nx):
    g = TransducerGeometry(nx, 0.3, 5e6)
    coarse = make_linear_layout(g, lines, 1, 10.0).lateral_positions
    fine = make_linear_layout(g, 2 * lines - 1, 1, 10.0).lateral_positions
    np.testing.assert_array_equal(fine[::2], coarse)


@given(st.integers(2, 64), st.floats(1.0, 170.0))
@settings(max_examples=40, deadline=None)
def test_phased_angles_uniform(n, fov):
    g = TransducerGeometry(16, 0.2, 3e6, ArrayKind.PHASED)
    lay = make_phased_layout(g, n, 1, fov, 0.0, 30.0)
    theta = np.array([math.atan2(s.direction[0], s.direction[2]) for s in lay.scanlines])
    step = np.diff(theta)
    assert np.max(np.abs(step - step[0])) <= 1e-9
    assert theta[-1] - theta[0] == pytest.approx(math.radians(fov), abs=1e-9)


def test_mirror_antisymmetry(probe128):
    lay = make_linear_layout(probe128, 65, 2, 20.0, active_aperture=64)
    x = lay.lateral_positions
    np.testing.assert_array_equal(x, -x[::-1])
    first = [t.elements[0] for t in lay.transmits]
    last = [t.elements[-1] for t in lay.transmits]
    assert first == [127 - v for v in last[::-1]]


def test_walking_aperture_stays_inside(probe128):
    lay = make_linear_layout(probe128, 128, 1, 20.0, active_aperture=64)
    for t in lay.transmits:
        assert len(t.elements) == 64
        assert 0 <= t.elements[0] and t.elements[-1] <= 127
        centre = probe128.element_positions[t.elements, 0].mean()
        # the nearest achievable aperture: centred, or clamped at an array edge
        assert abs(centre - t.origin[0]) <= 0.15 + 1e-12 or t.elements[0] in (0, 64)


def test_config_round_trip_and_hash(probe128):
    lay = make_linear_layout(probe128, 64, 2, 45.0, active_aperture=64)
    cfg = layout_to_config(lay)
    again = layout_from_config({k: str(v) for k, v in cfg.items()})
    assert again.layout_hash == lay.layout_hash
    other = make_linear_layout(probe128, 64, 2, 45.0, active_aperture=63)
    assert other.layout_hash != lay.layout_hash


def test_config_rejects_unknown_key():
    with pytest.raises(ParameterError, match="unknown layout attribute"):
        layout_from_config({"kind": "linear", "elements_x": 8, "pitch_x": 0.3, "center_frequency": 5e6,
                            "lines": 8, "bogus": 1})


def test_debug_json_dump(small_linear):
    doc = json.loads(small_linear.to_debug_json())
    assert len(doc["element_positions_mm"]) == 16
    assert len(doc["transmits"]) == 8 and len(doc["transmits"][0]["delays_s"]) == 16
    assert doc["layout_hash"] == small_linear.layout_hash


def test_sample_count_too_small(probe128):
    with pytest.raises(ParameterError, match="samples_per_line"):
        make_linear_layout(probe128, 8, 1, 45.0, samples_per_line=100)


@pytest.mark.parametrize("active", [16, 17, 33])
def test_walking_aperture_steps_with_lines(active):
    g = TransducerGeometry(48, 0.3, 5e6)
    lay = make_linear_layout(g, 48, 1, 20.0, active_aperture=active)
    starts = np.array([t.elements[0] for t in lay.transmits])
    assert np.all(np.diff(starts) >= 0) and np.all(np.diff(starts) <= 1)
    free = (starts > 0) & (starts < 48 - active)
    if active % 2:
        # odd apertures centre exactly on their line wherever the array allows
        centre = g.element_positions[starts + active // 2, 0]
        np.testing.assert_allclose(centre[free], lay.lateral_positions[free], atol=1e-12)
