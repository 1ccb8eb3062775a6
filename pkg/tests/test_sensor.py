import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lhdgen.sensor import (
    HoleError,
    ScanGrid,
    SensorPose,
    depth_to_point,
    depthmap_to_xyzmap,
    point_to_pixel,
    pointcloud_to_depthmap,
    points_to_pixels,
    ray_direction,
    ray_directions,
    validate_depthmap,
)


def trig_direction(elev_deg, azim_deg):
    p, t = math.radians(elev_deg), math.radians(azim_deg)
    return (math.cos(p) * math.cos(t), math.cos(p) * math.sin(t), math.sin(p))


@pytest.mark.parametrize(
    "ring, col, elev, azim, approx",
    [
        (0, 512, 10.67, 0.1, (0.98272, 0.001715, 0.18507)),
        (31, 0, -30.67, -102.3, (-0.18325, -0.84041, -0.51010)),
    ],
)
def test_ray_direction_examples(grid, ring, col, elev, azim, approx):
    d = ray_direction(grid, ring, col)
    np.testing.assert_allclose(d, trig_direction(elev, azim), atol=1e-12)
    np.testing.assert_allclose(d, approx, atol=1e-3)


@pytest.mark.parametrize("ring, col", [(32, 0), (-1, 0), (0, 1024), (0, -1)])
def test_ray_direction_bounds(grid, ring, col):
    with pytest.raises(IndexError):
        ray_direction(grid, ring, col)


def test_all_directions_unit_and_evenly_spaced(grid):
    dirs = ray_directions(grid)
    assert dirs.shape == (32, 1024, 3)
    assert np.abs(np.linalg.norm(dirs, axis=-1) - 1).max() < 1e-12
    assert not dirs.flags.writeable
    elev = np.rad2deg(np.arcsin(dirs[:, 0, 2]))
    np.testing.assert_allclose(np.diff(elev), -(10.67 + 30.67) / 31, atol=1e-9)
    az = np.rad2deg(np.arctan2(dirs[5, :, 1], dirs[5, :, 0]))
    np.testing.assert_allclose(np.diff(az), 0.2, atol=1e-9)


def test_default_grid_matches_table_values(grid):
    assert (grid.rings, grid.columns) == (32, 1024)
    assert (grid.vertical_max, grid.vertical_min, grid.horizontal_step) == (10.67, -30.67, 0.2)
    assert grid.vertical_step == pytest.approx(1.333548, abs=1e-6)
    assert grid.horizontal_span == pytest.approx((-102.4, 102.4))


@pytest.mark.parametrize(
    "kwargs",
    [dict(rings=1), dict(columns=0), dict(vertical_max=-40.0), dict(horizontal_step=0.0), dict(columns=2000)],
)
def test_grid_validation(kwargs):
    with pytest.raises(ValueError):
        ScanGrid(**kwargs)


def test_pose_must_be_above_ground():
    with pytest.raises(ValueError):
        SensorPose((0, 0, 0))
    with pytest.raises(ValueError):
        SensorPose((0, 0, -5))


def test_depth_to_point(grid, pose):
    with pytest.raises(HoleError):
        depth_to_point(grid, pose, 3, 3, 0.0)
    p = depth_to_point(grid, pose, 0, 512, 2000.0)
    expected = np.array((0, 0, 800)) + 2000 * np.array(trig_direction(10.67, 0.1))
    np.testing.assert_allclose(p, expected, atol=1e-9)
    np.testing.assert_allclose(p, (1965.4, 3.43, 1170.1), atol=0.5)
    assert np.linalg.norm(p - pose.origin_array) == pytest.approx(2000.0, rel=1e-12)


def test_axis_aligned_point():
    # two-column grid whose second column looks along +x on the horizon
    g = ScanGrid(rings=3, columns=2, vertical_max=1.0, vertical_min=-1.0, horizontal_step=1.0, horizontal_center=-0.5)
    np.testing.assert_allclose(ray_direction(g, 1, 1), (1, 0, 0), atol=1e-15)
    np.testing.assert_allclose(depth_to_point(g, SensorPose(), 1, 1, 1000.0), (1000, 0, 800), atol=1e-9)


def test_xyz_map_holes(grid, pose):
    xyz = depthmap_to_xyzmap(grid, pose, np.zeros(grid.shape, np.float32))
    assert xyz.shape == (32, 1024, 3) and xyz.dtype == np.float32
    assert not xyz.any()

    d = np.zeros(grid.shape, np.float32)
    d[7, 300] = 4321.0
    xyz = depthmap_to_xyzmap(grid, pose, d[..., None])
    nz = np.argwhere(np.any(xyz != 0, axis=-1))
    assert nz.tolist() == [[7, 300]]
    np.testing.assert_allclose(xyz[7, 300], depth_to_point(grid, pose, 7, 300, 4321.0), rtol=1e-6)


def test_xyz_map_distances(grid, pose):
    rng = np.random.default_rng(3)
    d = rng.uniform(100, 25000, grid.shape).astype(np.float32)
    d[rng.random(grid.shape) < 0.3] = 0
    xyz = depthmap_to_xyzmap(grid, pose, d)
    valid = d > 0
    assert np.array_equal(np.any(xyz != 0, axis=-1), valid)
    for r, c in np.argwhere(valid)[::97]:
        ref = np.array(pose.origin) + float(d[r, c]) * np.array(trig_direction(grid.elevation(r), grid.azimuth(c)))
        np.testing.assert_allclose(xyz[r, c], ref, rtol=1e-6, atol=1e-3)
    dist = np.linalg.norm(xyz[valid].astype(np.float64) - pose.origin_array, axis=1)
    np.testing.assert_allclose(dist, d[valid], rtol=1e-5)


def test_xyz_map_shape_mismatch(pose):
    with pytest.raises(ValueError):
        depthmap_to_xyzmap(ScanGrid(), pose, np.zeros((16, 1024)))


@pytest.mark.parametrize("depth", [100.0, 1234.5, 25000.0])
def test_pixel_round_trip_all_cells(grid, pose, depth):
    pts = pose.origin_array + depth * ray_directions(grid).reshape(-1, 3)
    ring, col, ok = points_to_pixels(grid, pose, pts)
    assert ok.all()
    rr, cc = np.divmod(np.arange(grid.rings * grid.columns), grid.columns)
    assert np.array_equal(ring, rr) and np.array_equal(col, cc)


def test_point_behind_sensor_is_out_of_fov(grid, pose):
    assert point_to_pixel(grid, pose, (-5000.0, 0.0, 800.0)) is None
    assert point_to_pixel(grid, pose, (5000.0, 0.0, 800.0 + 5000.0)) is None  # 45 deg up
    with pytest.raises(ValueError):
        point_to_pixel(grid, pose, pose.origin)


def test_point_to_pixel_matches_exhaustive_search(grid, pose):
    rng = np.random.default_rng(11)
    el_cells, az_cells = np.meshgrid(grid.elevations(), grid.azimuths(), indexing="ij")
    half_v = grid.vertical_step / 2
    checked = 0
    for _ in range(300):
        elev = rng.uniform(-35, 15)
        az = rng.uniform(-110, 110)
        p = pose.origin_array + rng.uniform(200, 30000) * np.array(trig_direction(elev, az))
        got = point_to_pixel(grid, pose, p)
        inside = grid.vertical_min - half_v <= elev <= grid.vertical_max + half_v and -102.4 <= az <= 102.4
        if not inside:
            assert got is None
            continue
        # every lattice cell scored by its step-normalized angular offset
        cost = np.abs(el_cells - elev) / grid.vertical_step + np.abs(az_cells - az) / grid.horizontal_step
        best = np.unravel_index(np.argmin(cost), cost.shape)
        assert got == (int(best[0]), int(best[1]))
        checked += 1
    assert checked > 100


@settings(max_examples=200, deadline=None)
@given(st.integers(0, 31), st.integers(0, 1023), st.floats(100, 25000))
def test_round_trip_property(ring, col, depth):
    g, p = ScanGrid(), SensorPose()
    assert point_to_pixel(g, p, depth_to_point(g, p, ring, col, depth)) == (ring, col)


def test_pointcloud_binning_keeps_nearest(grid, pose):
    a = depth_to_point(grid, pose, 10, 100, 5000.0)
    b = depth_to_point(grid, pose, 10, 100, 3000.0)
    c = np.array([-9000.0, 0.0, 800.0])  # behind, dropped
    d = pointcloud_to_depthmap(grid, pose, np.stack([a, b, c]))
    assert d[10, 100] == pytest.approx(3000.0)
    assert np.count_nonzero(d) == 1


def test_validate_depthmap(grid):
    m = np.ones(grid.shape, np.float32)
    assert validate_depthmap(m[..., None], grid).shape == grid.shape
    m[0, 0] = -1
    with pytest.raises(ValueError):
        validate_depthmap(m, grid)
    m[0, 0] = np.nan
    with pytest.raises(ValueError):
        validate_depthmap(m, grid)
