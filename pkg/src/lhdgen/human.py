"""Procedural walking-human meshes.

Bodies are a 16-capsule articulated proxy. Segment lengths are fixed
fractions of stature; capsule radii scale with ``sqrt(weight / height)`` so
that volume tracks weight. The body frame has +x forward, +y left, +z up,
the pelvis centered on the z axis and the feet on z = 0.

The gait is a sinusoidal 230-frame cycle (two steps). ``STANDING`` is the
same machinery with every swing amplitude at zero.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path

import numpy as np

FRAMES_PER_CYCLE = 230

HEIGHT_BOUNDS = (800.0, 2200.0)  # mm
WEIGHT_BOUNDS = (10.0, 150.0)  # kg

_CATALOG = {
    1200: (15, 20, 30),
    1400: (20, 30, 40),
    1600: (40, 50, 70),
    1700: (50, 60, 80),
    1800: (50, 70, 90),
}

# Out-of-catalog combinations used for generalization checks.
HELD_OUT = ((1000, 12), (1500, 50), (2000, 80), (1400, 20), (1600, 50), (1700, 80))

RADIAL_SEGMENTS = 12
CAP_RINGS = 3  # latitude rings per hemisphere, equator included

# Stature fractions (standing, body frame).
_HIP_Z = 0.530
_HIP_Y = 0.052
_THIGH = 0.245
_SHIN = 0.246
_ANKLE_Z = _HIP_Z - _THIGH - _SHIN
_FOOT_BACK = 0.030
_FOOT_FRONT = 0.100
_PELVIS_Z = 0.555
_PELVIS_HALF = 0.055
_TORSO_Z = (0.600, 0.770)
_NECK_Z = (0.800, 0.860)
_HEAD_LEN = 0.060
_SHOULDER_Z = 0.800
_SHOULDER_Y = 0.115
_UPPER_ARM = 0.186
_FOREARM = 0.146
_HAND = 0.070

# Radius coefficients in mm per sqrt(kg/mm); r = k * sqrt(weight / height).
_RADIUS_K = {
    "head": 506.0,
    "neck": 266.0,
    "torso": 745.0,
    "pelvis": 639.0,
    "upper_arm": 240.0,
    "forearm": 202.0,
    "hand": 160.0,
    "thigh": 400.0,
    "shin": 277.0,
    "foot": 202.0,
}

SEGMENTS = (
    "head", "neck", "torso", "pelvis",
    "upper_arm_l", "upper_arm_r", "forearm_l", "forearm_r",
    "thigh_l", "thigh_r", "shin_l", "shin_r",
    "foot_l", "foot_r", "hand_l", "hand_r",
)


class MeshError(ValueError):
    pass


class MeshParseError(MeshError):
    def __init__(self, path, lineno: int, message: str):
        super().__init__(f"{path}:{lineno}: {message}")
        self.lineno = lineno


class DegenerateTriangleError(MeshError):
    def __init__(self, face: int, message: str | None = None):
        super().__init__(message or f"triangle {face} has zero area")
        self.face = face


class EmptyMeshError(MeshError):
    pass


@dataclass(frozen=True, order=True)
class BodyParams:
    height: float  # mm
    weight: float  # kg

    def __post_init__(self):
        h, w = float(self.height), float(self.weight)
        if not (HEIGHT_BOUNDS[0] <= h <= HEIGHT_BOUNDS[1]):
            raise ValueError(f"height {h} mm outside [{HEIGHT_BOUNDS[0]}, {HEIGHT_BOUNDS[1]}]")
        if not (WEIGHT_BOUNDS[0] <= w <= WEIGHT_BOUNDS[1]):
            raise ValueError(f"weight {w} kg outside [{WEIGHT_BOUNDS[0]}, {WEIGHT_BOUNDS[1]}]")
        object.__setattr__(self, "height", h)
        object.__setattr__(self, "weight", w)


def catalog() -> list[BodyParams]:
    """The fifteen (height, weight) bodies used for training-set generation."""
    return [BodyParams(h, w) for h, ws in _CATALOG.items() for w in ws]


@dataclass(frozen=True)
class BodySpec:
    params: BodyParams
    lengths: dict = field(hash=False)  # segment -> axis length, mm
    radii: dict = field(hash=False)  # segment -> capsule radius, mm


def build_body(params: BodyParams) -> BodySpec:
    h = params.height
    s = math.sqrt(params.weight / h)
    lengths = {
        "head": _HEAD_LEN * h,
        "neck": (_NECK_Z[1] - _NECK_Z[0]) * h,
        "torso": (_TORSO_Z[1] - _TORSO_Z[0]) * h,
        "pelvis": 2 * _PELVIS_HALF * h,
        "upper_arm": _UPPER_ARM * h,
        "forearm": _FOREARM * h,
        "hand": _HAND * h,
        "thigh": _THIGH * h,
        "shin": _SHIN * h,
        "foot": (_FOOT_BACK + _FOOT_FRONT) * h,
    }
    radii = {name: k * s for name, k in _RADIUS_K.items()}
    return BodySpec(params, lengths, radii)


@dataclass(frozen=True)
class GaitCycle:
    """Sinusoidal joint trajectories in degrees, periodic in ``frame_count``."""

    frame_count: int = FRAMES_PER_CYCLE
    hip_amplitude: float = 25.0
    knee_peak: float = 55.0
    arm_amplitude: float = 20.0
    elbow_base: float = 10.0
    elbow_swing: float = 15.0

    def angles(self, frame: int) -> dict:
        psi = 2.0 * math.pi * (frame % self.frame_count) / self.frame_count
        s, c = math.sin(psi), math.cos(psi)
        return {
            "hip_l": self.hip_amplitude * s,
            "hip_r": -self.hip_amplitude * s,
            # knee flexes while its hip swings forward
            "knee_l": self.knee_peak * max(0.0, c) ** 2,
            "knee_r": self.knee_peak * max(0.0, -c) ** 2,
            "shoulder_l": -self.arm_amplitude * s,
            "shoulder_r": self.arm_amplitude * s,
            "elbow_l": self.elbow_base + self.elbow_swing * max(0.0, -s),
            "elbow_r": self.elbow_base + self.elbow_swing * max(0.0, s),
        }


WALKING = GaitCycle()
STANDING = GaitCycle(hip_amplitude=0.0, knee_peak=0.0, arm_amplitude=0.0, elbow_base=0.0, elbow_swing=0.0)


@dataclass(frozen=True, eq=False)
class PosedMesh:
    vertices: np.ndarray  # (N, 3) float64, mm
    triangles: np.ndarray  # (M, 3) int64
    params: BodyParams | None = None
    frame: int | None = None

    @property
    def extent(self) -> np.ndarray:
        return self.vertices.max(axis=0) - self.vertices.min(axis=0)

    def triangle_vertices(self) -> np.ndarray:
        return self.vertices[self.triangles]


def triangle_areas(vertices: np.ndarray, triangles: np.ndarray) -> np.ndarray:
    t = vertices[triangles]
    return 0.5 * np.linalg.norm(np.cross(t[:, 1] - t[:, 0], t[:, 2] - t[:, 0]), axis=1)


def validate_mesh(vertices: np.ndarray, triangles: np.ndarray, min_area: float = 1e-9) -> None:
    if len(vertices) == 0 or len(triangles) == 0:
        raise EmptyMeshError("mesh has no vertices or no triangles")
    if triangles.min() < 0 or triangles.max() >= len(vertices):
        raise MeshError("triangle index out of range")
    if not np.all(np.isfinite(vertices)):
        raise MeshError("mesh has non-finite vertex coordinates")
    areas = triangle_areas(vertices, triangles)
    bad = np.flatnonzero(areas <= min_area)
    if len(bad):
        raise DegenerateTriangleError(int(bad[0]))


def _frozen(a: np.ndarray) -> np.ndarray:
    a.setflags(write=False)
    return a


@lru_cache(maxsize=1)
def _capsule_topology() -> np.ndarray:
    n = RADIAL_SEGMENTS
    n_rings = 2 * CAP_RINGS
    tris = []
    bottom, top = 0, 1 + n_rings * n
    ring0 = 1
    for j in range(n):
        tris.append((bottom, ring0 + (j + 1) % n, ring0 + j))
    for r in range(n_rings - 1):
        a0 = 1 + r * n
        b0 = a0 + n
        for j in range(n):
            j1 = (j + 1) % n
            tris.append((a0 + j, a0 + j1, b0 + j1))
            tris.append((a0 + j, b0 + j1, b0 + j))
    last = 1 + (n_rings - 1) * n
    for j in range(n):
        tris.append((top, last + j, last + (j + 1) % n))
    return _frozen(np.array(tris, dtype=np.int64))


@lru_cache(maxsize=1)
def _capsule_profile():
    # (axial endpoint selector, cos(lat), sin(lat)) for each latitude ring
    lats = [-90.0 + 90.0 * (k + 1) / CAP_RINGS for k in range(CAP_RINGS)]
    lats += [90.0 * k / CAP_RINGS for k in range(CAP_RINGS)]
    sel = np.array([0] * CAP_RINGS + [1] * CAP_RINGS)
    lat = np.deg2rad(np.array(lats))
    ang = 2.0 * np.pi * np.arange(RADIAL_SEGMENTS) / RADIAL_SEGMENTS
    return sel, np.cos(lat), np.sin(lat), np.cos(ang), np.sin(ang)


def capsule_vertices(p0, p1, radius: float) -> np.ndarray:
    """Vertices of a capsule around segment p0-p1, matching ``_capsule_topology``."""
    p0 = np.asarray(p0, dtype=np.float64)
    p1 = np.asarray(p1, dtype=np.float64)
    axis = p1 - p0
    length = np.linalg.norm(axis)
    if length <= 0:
        raise ValueError("capsule axis has zero length")
    u = axis / length
    ref = np.array([1.0, 0.0, 0.0]) if abs(u[0]) < 0.9 else np.array([0.0, 1.0, 0.0])
    e1 = np.cross(u, ref)
    e1 /= np.linalg.norm(e1)
    e2 = np.cross(u, e1)
    sel, clat, slat, cang, sang = _capsule_profile()
    centers = np.where(sel[:, None] == 0, p0, p1)  # (rings, 3)
    radial = cang[:, None] * e1 + sang[:, None] * e2  # (n, 3)
    rings = (
        centers[:, None, :]
        + radius * clat[:, None, None] * radial[None, :, :]
        + radius * slat[:, None, None] * u
    )
    return np.vstack([p0 - radius * u, rings.reshape(-1, 3), p1 + radius * u])


def _pitch(angle_deg: float) -> np.ndarray:
    """Unit vector hanging down, swung forward (+x) by ``angle_deg``."""
    a = math.radians(angle_deg)
    return np.array([math.sin(a), 0.0, -math.cos(a)])


def _skeleton(body: BodySpec, angles: dict) -> list[tuple[np.ndarray, np.ndarray, float]]:
    h = body.params.height
    L, R = body.lengths, body.radii
    caps = {}

    head_top = h - R["head"]
    caps["head"] = ((0, 0, head_top - L["head"]), (0, 0, head_top), R["head"])
    caps["neck"] = ((0, 0, _NECK_Z[0] * h), (0, 0, _NECK_Z[1] * h), R["neck"])
    caps["torso"] = ((0, 0, _TORSO_Z[0] * h), (0, 0, _TORSO_Z[1] * h), R["torso"])
    caps["pelvis"] = ((0, -_PELVIS_HALF * h, _PELVIS_Z * h), (0, _PELVIS_HALF * h, _PELVIS_Z * h), R["pelvis"])

    # feet rest with their underside on z = 0 when the leg is straight
    foot_drop = _ANKLE_Z * h - R["foot"]
    for side, sign in (("l", 1.0), ("r", -1.0)):
        shoulder = np.array([0.0, sign * _SHOULDER_Y * h, _SHOULDER_Z * h])
        a = angles["shoulder_" + side]
        elbow = shoulder + L["upper_arm"] * _pitch(a)
        fore_dir = _pitch(a + angles["elbow_" + side])
        wrist = elbow + L["forearm"] * fore_dir
        caps["upper_arm_" + side] = (shoulder, elbow, R["upper_arm"])
        caps["forearm_" + side] = (elbow, wrist, R["forearm"])
        caps["hand_" + side] = (wrist, wrist + L["hand"] * fore_dir, R["hand"])

        hip = np.array([0.0, sign * _HIP_Y * h, _HIP_Z * h])
        t = angles["hip_" + side]
        knee = hip + L["thigh"] * _pitch(t)
        shin_angle = t - angles["knee_" + side]
        shin_dir = _pitch(shin_angle)
        ankle = knee + L["shin"] * shin_dir
        # foot axis rotates rigidly with the shin
        fwd = np.array([math.cos(math.radians(shin_angle)), 0.0, math.sin(math.radians(shin_angle))])
        foot_c = ankle + foot_drop * shin_dir
        caps["thigh_" + side] = (hip, knee, R["thigh"])
        caps["shin_" + side] = (knee, ankle, R["shin"])
        caps["foot_" + side] = (
            foot_c - _FOOT_BACK * h * fwd,
            foot_c + _FOOT_FRONT * h * fwd,
            R["foot"],
        )
    return [caps[name] for name in SEGMENTS]


@lru_cache(maxsize=1)
def _body_topology() -> np.ndarray:
    cap = _capsule_topology()
    per = 2 + 2 * CAP_RINGS * RADIAL_SEGMENTS
    return _frozen(np.vstack([cap + i * per for i in range(len(SEGMENTS))]))


def pose_at_frame(body: BodySpec, gait: GaitCycle = WALKING, frame: int = 0) -> PosedMesh:
    """Posed mesh of ``body`` at ``frame`` (taken modulo the cycle), feet grounded."""
    frame = int(frame) % gait.frame_count
    return _posed(body.params, gait, frame)


@lru_cache(maxsize=1024)
def _posed(params: BodyParams, gait: GaitCycle, frame: int) -> PosedMesh:
    body = build_body(params)
    verts = np.vstack([capsule_vertices(p0, p1, r) for p0, p1, r in _skeleton(body, gait.angles(frame))])
    verts[:, 2] -= verts[:, 2].min()
    return PosedMesh(_frozen(verts), _body_topology(), params, frame)


def standing_mesh(params: BodyParams) -> PosedMesh:
    return pose_at_frame(build_body(params), STANDING, 0)


def transform_mesh(mesh: PosedMesh, x: float, y: float, yaw: float) -> PosedMesh:
    """Rotate by ``yaw`` degrees about the body's vertical axis, then move it to (x, y, 0)."""
    a = math.radians(yaw)
    c, s = math.cos(a), math.sin(a)
    v = mesh.vertices
    out = np.empty_like(v)
    out[:, 0] = c * v[:, 0] - s * v[:, 1] + x
    out[:, 1] = s * v[:, 0] + c * v[:, 1] + y
    out[:, 2] = v[:, 2]
    return PosedMesh(_frozen(out), mesh.triangles, mesh.params, mesh.frame)


def write_mesh(mesh: PosedMesh, path, header: str | None = None) -> None:
    """Write the ASCII ``v``/``f`` mesh subset (1-based faces, full float precision)."""
    lines = []
    if header:
        lines.extend("# " + h for h in header.splitlines())
    lines.extend(f"v {x!r} {y!r} {z!r}" for x, y, z in mesh.vertices.tolist())
    lines.extend(f"f {i + 1} {j + 1} {k + 1}" for i, j, k in mesh.triangles.tolist())
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text("\n".join(lines) + "\n")
    os.replace(tmp, path)


def load_mesh(path) -> PosedMesh:
    verts, faces = [], []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            tok = line.split()
            if not tok or tok[0] not in ("v", "f"):
                continue
            if tok[0] == "v":
                if len(tok) < 4:
                    raise MeshParseError(path, lineno, "vertex needs 3 coordinates")
                try:
                    verts.append([float(t) for t in tok[1:4]])
                except ValueError as exc:
                    raise MeshParseError(path, lineno, str(exc)) from None
            else:
                if len(tok) != 4:
                    raise MeshParseError(path, lineno, f"expected a triangle, got {len(tok) - 1} indices")
                try:
                    idx = [int(t.split("/")[0]) for t in tok[1:]]
                except ValueError as exc:
                    raise MeshParseError(path, lineno, str(exc)) from None
                if min(idx) < 1:
                    raise MeshParseError(path, lineno, "face indices are 1-based and positive")
                faces.append((idx, lineno))
    if not verts or not faces:
        raise EmptyMeshError(f"{path}: no vertices or no faces")
    for idx, lineno in faces:
        if max(idx) > len(verts):
            raise MeshParseError(path, lineno, f"face index {max(idx)} exceeds vertex count {len(verts)}")
    vertices = np.array(verts, dtype=np.float64)
    triangles = np.array([f for f, _ in faces], dtype=np.int64) - 1
    areas = triangle_areas(vertices, triangles)
    bad = np.flatnonzero(areas <= 1e-9)
    if len(bad):
        face = int(bad[0])
        raise DegenerateTriangleError(face, f"{path}:{faces[face][1]}: face {face + 1} has zero area")
    validate_mesh(vertices, triangles)
    vertices[:, 2] -= vertices[:, 2].min()
    return PosedMesh(_frozen(vertices), _frozen(triangles))
