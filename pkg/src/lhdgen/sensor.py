"""Virtual spinning LiDAR: scan lattice and range <-> point conversions.

Ring 0 is the topmost laser. Columns are laid out symmetrically about
``horizontal_center`` (the +x axis by default), increasing counter-clockwise.
Depth is the Euclidean range along the ray, in millimeters, and 0.0 marks a
hole (no return).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

HOLE = 0.0


class HoleError(ValueError):
    """Raised when a hole (non-positive depth) is converted to a point."""


@dataclass(frozen=True)
class ScanGrid:
    rings: int = 32
    columns: int = 1024
    vertical_max: float = 10.67  # degrees
    vertical_min: float = -30.67  # degrees
    horizontal_step: float = 0.2  # degrees
    horizontal_center: float = 0.0  # degrees, 0 = +x

    def __post_init__(self):
        if self.rings < 2:
            raise ValueError(f"rings must be >= 2, got {self.rings}")
        if self.columns < 1:
            raise ValueError(f"columns must be >= 1, got {self.columns}")
        if not self.vertical_max > self.vertical_min:
            raise ValueError("vertical_max must exceed vertical_min")
        if not self.horizontal_step > 0:
            raise ValueError("horizontal_step must be positive")
        if self.columns * self.horizontal_step > 360.0:
            raise ValueError(
                f"horizontal span {self.columns * self.horizontal_step} exceeds 360 degrees"
            )

    @property
    def shape(self) -> tuple[int, int]:
        return (self.rings, self.columns)

    @property
    def vertical_step(self) -> float:
        return (self.vertical_max - self.vertical_min) / (self.rings - 1)

    @property
    def horizontal_span(self) -> tuple[float, float]:
        """Azimuth interval (degrees) covered by the columns, cell edges included."""
        half = self.columns * self.horizontal_step / 2.0
        return (self.horizontal_center - half, self.horizontal_center + half)

    def elevation(self, ring):
        return self.vertical_max - np.asarray(ring) * self.vertical_step

    def azimuth(self, col):
        return self.horizontal_center + (np.asarray(col) - (self.columns - 1) / 2.0) * self.horizontal_step

    def elevations(self) -> np.ndarray:
        return self.elevation(np.arange(self.rings, dtype=np.float64))

    def azimuths(self) -> np.ndarray:
        return self.azimuth(np.arange(self.columns, dtype=np.float64))

    def to_dict(self) -> dict:
        return {
            "rings": self.rings,
            "columns": self.columns,
            "vertical_max": self.vertical_max,
            "vertical_min": self.vertical_min,
            "horizontal_step": self.horizontal_step,
            "horizontal_center": self.horizontal_center,
        }


@dataclass(frozen=True)
class SensorPose:
    """Sensor origin in the world frame (mm); the ground plane is z = 0."""

    origin: tuple[float, float, float] = (0.0, 0.0, 800.0)

    def __post_init__(self):
        origin = tuple(float(v) for v in self.origin)
        if len(origin) != 3 or not all(math.isfinite(v) for v in origin):
            raise ValueError(f"origin must be three finite numbers, got {self.origin}")
        if origin[2] <= 0:
            raise ValueError("sensor must sit above the ground plane (origin z > 0)")
        object.__setattr__(self, "origin", origin)

    @property
    def origin_array(self) -> np.ndarray:
        return np.array(self.origin, dtype=np.float64)


def _check_index(grid: ScanGrid, ring: int, col: int) -> None:
    if not (0 <= ring < grid.rings):
        raise IndexError(f"ring {ring} out of range [0, {grid.rings})")
    if not (0 <= col < grid.columns):
        raise IndexError(f"column {col} out of range [0, {grid.columns})")


def _unit(elev_deg, azim_deg) -> np.ndarray:
    phi = np.deg2rad(elev_deg)
    theta = np.deg2rad(azim_deg)
    cphi = np.cos(phi)
    return np.stack(
        np.broadcast_arrays(cphi * np.cos(theta), cphi * np.sin(theta), np.sin(phi)),
        axis=-1,
    )


def ray_direction(grid: ScanGrid, ring: int, col: int) -> np.ndarray:
    """Unit direction of the laser at lattice cell (ring, col)."""
    _check_index(grid, ring, col)
    return _unit(grid.elevation(ring), grid.azimuth(col))


@lru_cache(maxsize=16)
def _ray_directions(grid: ScanGrid) -> np.ndarray:
    dirs = _unit(grid.elevations()[:, None], grid.azimuths()[None, :])
    dirs.setflags(write=False)
    return dirs


def ray_directions(grid: ScanGrid) -> np.ndarray:
    """All lattice directions as a read-only (rings, columns, 3) float64 array."""
    return _ray_directions(grid)


def depth_to_point(grid: ScanGrid, pose: SensorPose, ring: int, col: int, depth: float) -> np.ndarray:
    if not depth > 0:
        raise HoleError(f"depth {depth} at ({ring}, {col}) is a hole and has no point")
    return pose.origin_array + float(depth) * ray_direction(grid, ring, col)


def depthmap_to_xyzmap(grid: ScanGrid, pose: SensorPose, depth: np.ndarray) -> np.ndarray:
    """Convert a range image to a (rings, columns, 3) float32 world-frame xyz map.

    Accepts (rings, columns) or (rings, columns, 1). Hole pixels map to (0, 0, 0).
    """
    depth = np.asarray(depth)
    if depth.ndim == 3 and depth.shape[2] == 1:
        depth = depth[..., 0]
    if depth.shape != grid.shape:
        raise ValueError(f"depth map shape {depth.shape} does not match grid {grid.shape}")
    d = depth.astype(np.float64)
    valid = d > 0
    xyz = pose.origin_array + d[..., None] * ray_directions(grid)
    xyz[~valid] = 0.0
    return xyz.astype(np.float32)


def _fractional_indices(grid: ScanGrid, pose: SensorPose, points: np.ndarray):
    rel = np.asarray(points, dtype=np.float64) - pose.origin_array
    rng = np.linalg.norm(rel, axis=-1)
    if np.any(rng == 0):
        raise ValueError("point coincides with the sensor origin; direction undefined")
    elev = np.rad2deg(np.arcsin(np.clip(rel[..., 2] / rng, -1.0, 1.0)))
    az = np.rad2deg(np.arctan2(rel[..., 1], rel[..., 0])) - grid.horizontal_center
    az = (az + 180.0) % 360.0 - 180.0
    ring_f = (grid.vertical_max - elev) / grid.vertical_step
    col_f = az / grid.horizontal_step + (grid.columns - 1) / 2.0
    return ring_f, col_f, rng


def _round_half_down(x):
    # ties resolve toward the lower index
    return np.ceil(x - 0.5).astype(np.int64)


def points_to_pixels(grid: ScanGrid, pose: SensorPose, points: np.ndarray):
    """Vectorized nearest-cell lookup.

    Returns ``(ring, col, in_fov)`` integer/bool arrays; entries with
    ``in_fov == False`` carry -1 indices. A point is inside the field of view
    when its fractional ring lies in (-0.5, rings - 0.5] and its fractional
    column in (-0.5, columns - 0.5].
    """
    ring_f, col_f, _ = _fractional_indices(grid, pose, points)
    in_fov = (ring_f > -0.5) & (ring_f <= grid.rings - 0.5) & (col_f > -0.5) & (col_f <= grid.columns - 0.5)
    ring = np.where(in_fov, _round_half_down(ring_f), -1)
    col = np.where(in_fov, _round_half_down(col_f), -1)
    return ring, col, in_fov


def point_to_pixel(grid: ScanGrid, pose: SensorPose, point) -> tuple[int, int] | None:
    """Nearest lattice cell of a world point, or None when outside the field of view."""
    ring, col, ok = points_to_pixels(grid, pose, np.asarray(point, dtype=np.float64)[None, :])
    if not ok[0]:
        return None
    return int(ring[0]), int(col[0])


def pointcloud_to_depthmap(grid: ScanGrid, pose: SensorPose, points: np.ndarray) -> np.ndarray:
    """Bin a raw point cloud (N, 3) into a range image, keeping the nearest return per cell."""
    points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    depth = np.full(grid.shape, np.inf)
    rel = points - pose.origin_array
    keep = np.linalg.norm(rel, axis=1) > 0
    points = points[keep]
    if len(points):
        ring, col, ok = points_to_pixels(grid, pose, points)
        rng = np.linalg.norm(points - pose.origin_array, axis=1)
        np.minimum.at(depth, (ring[ok], col[ok]), rng[ok])
    depth[np.isinf(depth)] = HOLE
    return depth.astype(np.float32)


def validate_depthmap(depth: np.ndarray, grid: ScanGrid | None = None) -> np.ndarray:
    """Check the range-image invariants and return the map as (rings, columns) float32."""
    depth = np.asarray(depth)
    if depth.ndim == 3 and depth.shape[2] == 1:
        depth = depth[..., 0]
    if depth.ndim != 2:
        raise ValueError(f"depth map must be 2-D, got shape {depth.shape}")
    if grid is not None and depth.shape != grid.shape:
        raise ValueError(f"depth map shape {depth.shape} does not match grid {grid.shape}")
    if not np.all(np.isfinite(depth)):
        raise ValueError("depth map contains non-finite values")
    if np.any(depth < 0):
        raise ValueError(f"depth map contains negative values (min {float(depth.min())})")
    return depth.astype(np.float32, copy=False)
