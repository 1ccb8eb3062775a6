"""Random scene draws, rendering, and minimum-depth compositing."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Sequence

import numpy as np

from .human import (
    FRAMES_PER_CYCLE,
    WALKING,
    BodyParams,
    PosedMesh,
    build_body,
    catalog,
    load_mesh,
    pose_at_frame,
    transform_mesh,
)
from .raycast import NO_INSTANCE, TriangleSoup, build_bvh, render
from .sensor import HOLE, ScanGrid, SensorPose, depthmap_to_xyzmap

BODY_SOURCES = ("catalog", "fixed", "mesh")
PLACEMENTS = ("uniform-radius", "uniform-area")


def _default_azimuth_range() -> tuple[float, float]:
    return ScanGrid().horizontal_span


@dataclass(frozen=True)
class SynthConfig:
    human_count_range: tuple[int, int] = (0, 10)
    radial_range: tuple[float, float] = (500.0, 25000.0)  # mm from the sensor axis
    azimuth_range: tuple[float, float] = field(default_factory=_default_azimuth_range)  # degrees
    rotation_range: tuple[float, float] = (0.0, 360.0)  # degrees
    body_source: str = "catalog"
    fixed_params: BodyParams | None = None
    mesh_path: str | None = None
    gait_frame: int | None = None  # None = uniform over the cycle
    placement: str = "uniform-radius"
    hole_wins: bool = False  # a background hole hides the human instead of revealing it

    def __post_init__(self):
        lo, hi = self.human_count_range
        if not (0 <= lo <= hi):
            raise ValueError(f"invalid human_count_range {self.human_count_range}")
        rlo, rhi = self.radial_range
        if not (0 < rlo <= rhi):
            raise ValueError(f"invalid radial_range {self.radial_range}")
        alo, ahi = self.azimuth_range
        if not (alo <= ahi and ahi - alo <= 360.0):
            raise ValueError(f"invalid azimuth_range {self.azimuth_range}")
        if not self.rotation_range[0] <= self.rotation_range[1]:
            raise ValueError(f"invalid rotation_range {self.rotation_range}")
        if self.body_source not in BODY_SOURCES:
            raise ValueError(f"body_source must be one of {BODY_SOURCES}")
        if self.body_source == "fixed" and self.fixed_params is None:
            raise ValueError("body_source 'fixed' requires fixed_params")
        if self.body_source == "mesh" and not self.mesh_path:
            raise ValueError("body_source 'mesh' requires mesh_path")
        if self.placement not in PLACEMENTS:
            raise ValueError(f"placement must be one of {PLACEMENTS}")
        if self.gait_frame is not None and self.gait_frame < 0:
            raise ValueError("gait_frame must be non-negative")


@dataclass(frozen=True)
class HumanPlacement:
    height: float  # mm
    weight: float  # kg
    x: float  # mm
    y: float  # mm
    yaw: float  # degrees
    frame: int

    @property
    def radius(self) -> float:
        return math.hypot(self.x, self.y)


@dataclass(frozen=True)
class SceneSpec:
    scene_index: int
    background_id: int
    humans: tuple[HumanPlacement, ...] = ()
    seed: int | None = None

    @property
    def human_count(self) -> int:
        return len(self.humans)

    def without(self, k: int) -> "SceneSpec":
        return SceneSpec(self.scene_index, self.background_id, self.humans[:k] + self.humans[k + 1:], self.seed)


@dataclass(eq=False)
class LabeledSample:
    depth: np.ndarray  # (rings, columns, 1) float32
    xyz: np.ndarray  # (rings, columns, 3) float32
    label: np.ndarray  # (rings, columns, 1) uint8
    scene: SceneSpec | None = None
    visible_pixels: list[int] | None = None


def scene_seed(master_seed: int, scene_index: int) -> int:
    """64-bit per-scene seed: SeedSequence(master_seed) spawned at scene_index."""
    ss = np.random.SeedSequence(entropy=int(master_seed), spawn_key=(int(scene_index),))
    return int(ss.generate_state(1, dtype=np.uint64)[0])


def _mesh_extent(path: str) -> float:
    return float(_external_mesh(path).extent[2])


@lru_cache(maxsize=8)
def _external_mesh(path: str) -> PosedMesh:
    return load_mesh(path)


def sample_scene(config: SynthConfig, master_seed: int, scene_index: int, background_count: int) -> SceneSpec:
    if background_count < 1:
        raise ValueError("background pool is empty")
    seed = scene_seed(master_seed, scene_index)
    rng = np.random.default_rng(seed)
    lo, hi = config.human_count_range
    n = int(rng.integers(lo, hi + 1))
    background_id = int(rng.integers(background_count))
    bodies = catalog()
    humans = []
    for _ in range(n):
        if config.body_source == "catalog":
            p = bodies[int(rng.integers(len(bodies)))]
            height, weight = p.height, p.weight
        elif config.body_source == "fixed":
            height, weight = config.fixed_params.height, config.fixed_params.weight
        else:
            height, weight = _mesh_extent(config.mesh_path), 0.0
        rlo, rhi = config.radial_range
        if config.placement == "uniform-radius":
            r = float(rng.uniform(rlo, rhi))
        else:
            r = math.sqrt(float(rng.uniform(rlo * rlo, rhi * rhi)))
        az = math.radians(float(rng.uniform(*config.azimuth_range)))
        yaw = float(rng.uniform(*config.rotation_range))
        if config.gait_frame is None:
            frame = int(rng.integers(FRAMES_PER_CYCLE))
        else:
            frame = config.gait_frame % FRAMES_PER_CYCLE
        if config.body_source == "mesh":
            frame = 0
        humans.append(HumanPlacement(height, weight, r * math.cos(az), r * math.sin(az), yaw, frame))
    return SceneSpec(scene_index, background_id, tuple(humans), seed)


def composite(human_depth: np.ndarray, human_ids: np.ndarray, background: np.ndarray, hole_wins: bool = False):
    """Pixel-wise minimum-depth merge of a human render over a background.

    Holes count as +inf on both sides; the human is labeled only where it is
    strictly nearer than the background, so equal depths keep the background.
    With ``hole_wins`` a background hole stays a hole even where a human was hit.
    Returns ``(depth, label, ids)``.
    """
    human_depth = np.asarray(human_depth)
    background = np.asarray(background)
    if human_depth.shape != background.shape or human_depth.shape != np.shape(human_ids):
        raise ValueError(
            f"shape mismatch: human {human_depth.shape}, ids {np.shape(human_ids)}, background {background.shape}"
        )
    h = np.where(human_depth > 0, human_depth, np.inf)
    b = np.where(background > 0, background, np.inf)
    label = h < b
    if hole_wins:
        label &= np.isfinite(b)
    depth = np.where(label, h, b)
    depth = np.where(np.isfinite(depth), depth, HOLE).astype(np.float32)
    ids = np.where(label, human_ids, NO_INSTANCE).astype(np.int32)
    return depth, label.astype(np.uint8), ids


def scene_meshes(spec: SceneSpec, config: SynthConfig) -> list[PosedMesh]:
    meshes = []
    for hp in spec.humans:
        if config.body_source == "mesh":
            local = _external_mesh(config.mesh_path)
        else:
            local = pose_at_frame(build_body(BodyParams(hp.height, hp.weight)), WALKING, hp.frame)
        meshes.append(transform_mesh(local, hp.x, hp.y, hp.yaw))
    return meshes


def render_humans(spec: SceneSpec, config: SynthConfig, grid: ScanGrid, pose: SensorPose):
    """Depth and instance-id maps of the scene's humans alone."""
    meshes = scene_meshes(spec, config)
    bvh = build_bvh(TriangleSoup.from_meshes(meshes)) if meshes else None
    return render(bvh, grid, pose)


def render_scene(
    spec: SceneSpec,
    config: SynthConfig,
    backgrounds: Sequence[np.ndarray],
    grid: ScanGrid,
    pose: SensorPose,
) -> LabeledSample:
    background = np.asarray(backgrounds[spec.background_id])
    if background.ndim == 3:
        background = background[..., 0]
    human_depth, human_ids = render_humans(spec, config, grid, pose)
    depth, label, ids = composite(human_depth, human_ids, background, config.hole_wins)
    visible = np.bincount(ids[ids >= 0], minlength=spec.human_count)[: spec.human_count]
    return LabeledSample(
        depth=depth[..., None],
        xyz=depthmap_to_xyzmap(grid, pose, depth),
        label=label[..., None],
        scene=spec,
        visible_pixels=[int(v) for v in visible],
    )


def make_sample(
    config: SynthConfig,
    backgrounds: Sequence[np.ndarray],
    grid: ScanGrid,
    pose: SensorPose,
    master_seed: int,
    scene_index: int,
) -> LabeledSample:
    spec = sample_scene(config, master_seed, scene_index, len(backgrounds))
    return render_scene(spec, config, backgrounds, grid, pose)


BAND_EDGES_MM = (0.0, 5000.0, 10000.0, 15000.0, 20000.0, 25000.0)


def distance_histogram(scenes, policy: str = "placed", band_edges=BAND_EDGES_MM) -> np.ndarray:
    """Fraction of humans per radial band (5 m bands over 0-25 m by default).

    ``scenes`` holds SceneSpec or LabeledSample/metadata objects. With
    ``policy="visible"`` only humans with at least one visible pixel count,
    which needs ``visible_pixels`` on every item. Radii past the last edge
    fall in the last band.
    """
    if policy not in ("placed", "visible"):
        raise ValueError("policy must be 'placed' or 'visible'")
    scenes = list(scenes)
    if not scenes:
        raise ValueError("no scenes given")
    radii = []
    for item in scenes:
        spec = item if isinstance(item, SceneSpec) else item.scene
        if policy == "visible":
            vis = getattr(item, "visible_pixels", None)
            if vis is None:
                raise ValueError("visible policy needs per-human visible pixel counts")
            radii.extend(h.radius for h, v in zip(spec.humans, vis) if v > 0)
        else:
            radii.extend(h.radius for h in spec.humans)
    if not radii:
        raise ValueError("no humans to count")
    edges = np.asarray(band_edges, dtype=np.float64)
    band = np.clip(np.searchsorted(edges, radii, side="right") - 1, 0, len(edges) - 2)
    counts = np.bincount(band, minlength=len(edges) - 1)
    return counts / counts.sum()
