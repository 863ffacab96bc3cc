import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sarannot.sargeom import (SarCoord, SensorGeometry, SideViolationError, UtmPoint3, backproject_to_height,
                              pixel_center, pixels_of, project_points, project_to_sar, sar_to_pixel)


def north_track(altitude=1000.0, look_side="right", **kw):
    return SensorGeometry(UtmPoint3(0.0, 0.0, 0.0), (0.0, 1.0), altitude, look_side, **kw)


def test_nadir_point_range_equals_altitude():
    g = north_track()
    c = project_to_sar(UtmPoint3(0.0, 37.5, 0.0), g)
    assert c.range == pytest.approx(1000.0, abs=1e-12)
    assert c.azimuth == pytest.approx(37.5, abs=1e-12)


def test_flat_ground_range_is_pythagorean():
    g = north_track()
    d = 1000.0 * math.tan(math.radians(36.0))
    c = project_to_sar(UtmPoint3(d, 0.0, 0.0), g)
    assert c.range == pytest.approx(math.hypot(1000.0, d), rel=1e-14)


def test_roof_corner_lays_over_toward_sensor():
    g = north_track()
    base = project_to_sar(UtmPoint3(700.0, 10.0, 0.0), g)
    top = project_to_sar(UtmPoint3(700.0, 10.0, 30.0), g)
    assert top.range < base.range
    assert top.azimuth == base.azimuth


def test_wrong_side_raises():
    with pytest.raises(SideViolationError):
        project_to_sar(UtmPoint3(-5.0, 0.0, 0.0), north_track())
    # For a left-looking sensor the same point is fine.
    project_to_sar(UtmPoint3(-5.0, 0.0, 0.0), north_track(look_side="left"))


def test_geometry_validation():
    o = UtmPoint3(0, 0, 0)
    with pytest.raises(ValueError):
        SensorGeometry(o, (1.0, 1.0))
    with pytest.raises(ValueError):
        SensorGeometry(o, (0.0, 1.0), incidence_deg=90.0)
    with pytest.raises(ValueError):
        SensorGeometry(o, (0.0, 1.0), az_spacing=0.0)
    with pytest.raises(ValueError):
        SensorGeometry(o, (0.0, 1.0), look_side="up")
    with pytest.raises(ValueError):
        UtmPoint3(float("nan"), 0, 0)
    with pytest.raises(ValueError):
        SarCoord(0.0, 0.0)


def small_frame():
    return north_track(az0=100.0, rg0=1000.0, width=10, height=20)


def test_sar_to_pixel_floor_rule():
    g = small_frame()
    assert sar_to_pixel(SarCoord(g.az0, g.rg0), g) == (0, 0)
    assert sar_to_pixel(SarCoord(g.az0 + 1.5 * g.az_spacing, g.rg0 + 0.2 * g.rg_spacing), g) == (1, 0)
    assert sar_to_pixel(SarCoord(g.az0 - 0.1 * g.az_spacing, g.rg0), g) is None
    # The far edge is outside (half-open cells).
    assert sar_to_pixel(SarCoord(g.az0 + g.width * g.az_spacing, g.rg0), g) is None


def test_pixel_center_round_trip_all_pixels():
    g = small_frame()
    for row in range(g.height):
        for col in range(g.width):
            assert sar_to_pixel(pixel_center(col, row, g), g) == (col, row)


heading_angle = st.floats(0.0, 2 * math.pi, allow_nan=False)


@settings(max_examples=60, deadline=None)
@given(heading_angle, st.floats(-500, 500), st.floats(10, 3000), st.floats(-2000, 2000), st.floats(0, 80),
       st.sampled_from(["left", "right"]))
def test_along_track_translation_equivariance(theta, t, cross, along, h, side):
    g = SensorGeometry(UtmPoint3(3.0, -7.0, 1.0), (math.cos(theta), math.sin(theta)), 5000.0, side)
    head = np.array(g.heading)
    p = np.array([3.0, -7.0]) + along * head + cross * g.cross_direction
    az0, rg0 = project_points(np.array([[p[0], p[1], h]]), g)
    q = p + t * head
    az1, rg1 = project_points(np.array([[q[0], q[1], h]]), g)
    assert abs((az1[0] - az0[0]) - t) < 1e-6
    assert abs(rg1[0] - rg0[0]) < 1e-9


@settings(max_examples=60, deadline=None)
@given(st.floats(1, 5000), st.lists(st.integers(0, 9000), min_size=2, max_size=8, unique=True))
def test_range_strictly_decreasing_in_height(cross, decimeters):
    g = north_track()
    hs = np.sort(np.array(decimeters)) / 10.0
    xyz = np.column_stack([np.full(len(hs), cross), np.zeros(len(hs)), hs])
    _, rg = project_points(xyz, g)
    assert np.all(np.diff(rg) < 0)


def test_backprojection_inverts_projection():
    g = SensorGeometry.framing((0, 0, 200, 200), max_height=40.0)
    rng = np.random.default_rng(0)
    xyz = np.column_stack([rng.uniform(0, 200, (50, 2)), rng.uniform(0, 40, 50)])
    az, rg = project_points(xyz, g)
    en = backproject_to_height(az, rg, xyz[:, 2], g)
    assert np.max(np.abs(en - xyz[:, :2])) < 1e-5


def test_framing_holds_the_extent():
    extent = (100.0, 200.0, 400.0, 500.0)
    g = SensorGeometry.framing(extent, ground_height=10.0, max_height=60.0, heading=(1.0, 0.0))
    pts = np.array([[e, n, h] for e in np.linspace(100, 400, 7) for n in np.linspace(200, 500, 7)
                    for h in (10.0, 60.0)])
    _, _, inside = pixels_of(*project_points(pts, g), g)
    assert inside.all()
    # Incidence at the extent center matches the requested angle.
    o = g.track_origin
    d = np.hypot(250.0 - o.easting, 350.0 - o.northing)
    assert math.degrees(math.atan2(d, g.altitude)) == pytest.approx(36.0, abs=1e-9)


def test_geometry_dict_round_trip():
    g = SensorGeometry.framing((0, 0, 50, 50), max_height=20.0)
    assert SensorGeometry.from_dict(g.to_dict()) == g
