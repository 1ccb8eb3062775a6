"""BVH-accelerated ray/triangle casting and range-image rendering.

Triangles are intersected with Moller-Trumbore in float64 (no backface
culling). A hit must satisfy ``t > T_MIN``; among equal-distance hits the
lower triangle id wins, so BVH traversal and the brute-force loop agree bit
for bit.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numba
import numpy as np

from .sensor import HOLE, ScanGrid, SensorPose, ray_directions

T_MIN = 1e-3  # mm
DET_EPS = 1e-12
LEAF_SIZE = 4
NO_INSTANCE = -1


class HitRecord(NamedTuple):
    depth: float
    instance_id: int
    triangle_id: int


@dataclass(frozen=True, eq=False)
class TriangleSoup:
    """Flattened triangles, each tagged with the id of the mesh it came from."""

    triangles: np.ndarray  # (M, 3, 3) float64
    instance_ids: np.ndarray  # (M,) int32

    def __post_init__(self):
        tris = np.ascontiguousarray(self.triangles, dtype=np.float64).reshape(-1, 3, 3)
        ids = np.ascontiguousarray(self.instance_ids, dtype=np.int32).reshape(-1)
        if len(tris) != len(ids):
            raise ValueError("one instance id per triangle is required")
        object.__setattr__(self, "triangles", tris)
        object.__setattr__(self, "instance_ids", ids)

    def __len__(self):
        return len(self.triangles)

    @classmethod
    def from_meshes(cls, meshes: Sequence, instance_ids: Sequence[int] | None = None) -> "TriangleSoup":
        if instance_ids is None:
            instance_ids = range(len(meshes))
        tris = [m.vertices[m.triangles] for m in meshes]
        ids = [np.full(len(t), i, dtype=np.int32) for t, i in zip(tris, instance_ids)]
        if not tris:
            return cls(np.empty((0, 3, 3)), np.empty(0, dtype=np.int32))
        return cls(np.concatenate(tris), np.concatenate(ids))


@dataclass(frozen=True, eq=False)
class Bvh:
    """Flattened median-split BVH over a triangle soup.

    Inner nodes store child indices in ``left``/``right``; leaves have
    ``left == -1`` and own ``order[start:start + count]``.
    """

    soup: TriangleSoup
    node_min: np.ndarray
    node_max: np.ndarray
    left: np.ndarray
    right: np.ndarray
    start: np.ndarray
    count: np.ndarray
    order: np.ndarray
    v0: np.ndarray
    e1: np.ndarray
    e2: np.ndarray

    @property
    def node_count(self) -> int:
        return len(self.left)


@numba.njit(cache=True)
def _build(tri_min, tri_max, centroid, leaf_size, pad):
    n = centroid.shape[0]
    max_nodes = 2 * n
    node_min = np.empty((max_nodes, 3))
    node_max = np.empty((max_nodes, 3))
    left = np.full(max_nodes, -1, dtype=np.int64)
    right = np.full(max_nodes, -1, dtype=np.int64)
    start = np.zeros(max_nodes, dtype=np.int64)
    count = np.zeros(max_nodes, dtype=np.int64)
    order = np.arange(n)

    st_node = np.empty(max_nodes, dtype=np.int64)
    st_lo = np.empty(max_nodes, dtype=np.int64)
    st_hi = np.empty(max_nodes, dtype=np.int64)
    sp = 0
    st_node[0] = 0
    st_lo[0] = 0
    st_hi[0] = n
    sp = 1
    n_nodes = 1
    while sp > 0:
        sp -= 1
        node = st_node[sp]
        lo = st_lo[sp]
        hi = st_hi[sp]
        bmin = np.full(3, np.inf)
        bmax = np.full(3, -np.inf)
        cmin = np.full(3, np.inf)
        cmax = np.full(3, -np.inf)
        for k in range(lo, hi):
            t = order[k]
            for a in range(3):
                bmin[a] = min(bmin[a], tri_min[t, a])
                bmax[a] = max(bmax[a], tri_max[t, a])
                cmin[a] = min(cmin[a], centroid[t, a])
                cmax[a] = max(cmax[a], centroid[t, a])
        for a in range(3):
            node_min[node, a] = bmin[a] - pad
            node_max[node, a] = bmax[a] + pad
        if hi - lo <= leaf_size:
            start[node] = lo
            count[node] = hi - lo
            continue
        axis = 0
        for a in range(1, 3):
            if cmax[a] - cmin[a] > cmax[axis] - cmin[axis]:
                axis = a
        sub = order[lo:hi].copy()
        keys = np.empty(hi - lo)
        for k in range(hi - lo):
            keys[k] = centroid[sub[k], axis]
        idx = np.argsort(keys, kind="mergesort")
        for k in range(hi - lo):
            order[lo + k] = sub[idx[k]]
        mid = lo + (hi - lo) // 2
        l = n_nodes
        r = n_nodes + 1
        n_nodes += 2
        left[node] = l
        right[node] = r
        st_node[sp] = r
        st_lo[sp] = mid
        st_hi[sp] = hi
        sp += 1
        st_node[sp] = l
        st_lo[sp] = lo
        st_hi[sp] = mid
        sp += 1
    return (
        node_min[:n_nodes].copy(),
        node_max[:n_nodes].copy(),
        left[:n_nodes].copy(),
        right[:n_nodes].copy(),
        start[:n_nodes].copy(),
        count[:n_nodes].copy(),
        order,
    )


def build_bvh(soup: TriangleSoup) -> Bvh:
    if len(soup) == 0:
        raise ValueError("cannot build a BVH over an empty triangle soup")
    tris = soup.triangles
    tri_min = tris.min(axis=1)
    tri_max = tris.max(axis=1)
    centroid = tris.mean(axis=1)
    scale = float(np.abs(tris).max())
    pad = 1e-9 * (1.0 + scale)
    node_min, node_max, left, right, start, count, order = _build(tri_min, tri_max, centroid, LEAF_SIZE, pad)
    v0 = np.ascontiguousarray(tris[:, 0])
    return Bvh(
        soup, node_min, node_max, left, right, start, count, order,
        v0, np.ascontiguousarray(tris[:, 1] - v0), np.ascontiguousarray(tris[:, 2] - v0),
    )


@numba.njit(cache=True, inline="always")
def _intersect(ox, oy, oz, dx, dy, dz, v0, e1, e2, t):
    e1x, e1y, e1z = e1[t, 0], e1[t, 1], e1[t, 2]
    e2x, e2y, e2z = e2[t, 0], e2[t, 1], e2[t, 2]
    px = dy * e2z - dz * e2y
    py = dz * e2x - dx * e2z
    pz = dx * e2y - dy * e2x
    det = e1x * px + e1y * py + e1z * pz
    if abs(det) < DET_EPS:
        return np.inf
    inv = 1.0 / det
    sx = ox - v0[t, 0]
    sy = oy - v0[t, 1]
    sz = oz - v0[t, 2]
    u = (sx * px + sy * py + sz * pz) * inv
    if u < 0.0 or u > 1.0:
        return np.inf
    qx = sy * e1z - sz * e1y
    qy = sz * e1x - sx * e1z
    qz = sx * e1y - sy * e1x
    v = (dx * qx + dy * qy + dz * qz) * inv
    if v < 0.0 or u + v > 1.0:
        return np.inf
    d = (e2x * qx + e2y * qy + e2z * qz) * inv
    if d > T_MIN:
        return d
    return np.inf


@numba.njit(cache=True)
def _cast_brute(ox, oy, oz, dx, dy, dz, v0, e1, e2):
    best = np.inf
    best_id = -1
    for t in range(v0.shape[0]):
        d = _intersect(ox, oy, oz, dx, dy, dz, v0, e1, e2, t)
        if d < best:
            best = d
            best_id = t
    return best, best_id


@numba.njit(cache=True)
def _cast_bvh(ox, oy, oz, dx, dy, dz, node_min, node_max, left, right, start, count, order, v0, e1, e2, stack):
    best = np.inf
    best_id = -1
    o = (ox, oy, oz)
    d = (dx, dy, dz)
    sp = 0
    stack[0] = 0
    sp = 1
    while sp > 0:
        sp -= 1
        node = stack[sp]
        tnear = 0.0
        tfar = np.inf
        hit = True
        for a in range(3):
            if d[a] != 0.0:
                inv = 1.0 / d[a]
                t1 = (node_min[node, a] - o[a]) * inv
                t2 = (node_max[node, a] - o[a]) * inv
                if t1 > t2:
                    t1, t2 = t2, t1
                if t1 > tnear:
                    tnear = t1
                if t2 < tfar:
                    tfar = t2
            elif o[a] < node_min[node, a] or o[a] > node_max[node, a]:
                hit = False
                break
        if not hit or tnear > tfar or tnear > best:
            continue
        if left[node] < 0:
            for k in range(start[node], start[node] + count[node]):
                t = order[k]
                dist = _intersect(ox, oy, oz, dx, dy, dz, v0, e1, e2, t)
                if dist < best or (dist == best and dist < np.inf and t < best_id):
                    best = dist
                    best_id = t
        else:
            stack[sp] = right[node]
            sp += 1
            stack[sp] = left[node]
            sp += 1
    return best, best_id


@numba.njit(cache=True)
def _cast_many_bvh(origin, dirs, node_min, node_max, left, right, start, count, order, v0, e1, e2):
    n = dirs.shape[0]
    depth = np.empty(n)
    tri = np.empty(n, dtype=np.int64)
    stack = np.empty(2 * left.shape[0] + 2, dtype=np.int64)
    ox, oy, oz = origin[0], origin[1], origin[2]
    for i in range(n):
        depth[i], tri[i] = _cast_bvh(
            ox, oy, oz, dirs[i, 0], dirs[i, 1], dirs[i, 2],
            node_min, node_max, left, right, start, count, order, v0, e1, e2, stack,
        )
    return depth, tri


@numba.njit(cache=True)
def _cast_many_brute(origin, dirs, v0, e1, e2):
    n = dirs.shape[0]
    depth = np.empty(n)
    tri = np.empty(n, dtype=np.int64)
    for i in range(n):
        depth[i], tri[i] = _cast_brute(origin[0], origin[1], origin[2], dirs[i, 0], dirs[i, 1], dirs[i, 2], v0, e1, e2)
    return depth, tri


def _check_dirs(dirs: np.ndarray) -> np.ndarray:
    dirs = np.ascontiguousarray(dirs, dtype=np.float64).reshape(-1, 3)
    norms = np.linalg.norm(dirs, axis=1)
    if np.any(np.abs(norms - 1.0) > 1e-9):
        raise ValueError("ray directions must be unit vectors (|d| = 1 within 1e-9)")
    return dirs


def cast_rays(bvh: Bvh, origin, dirs) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Cast many rays from one origin.

    Returns ``(depth, instance_id, triangle_id)``; misses have depth ``inf``
    and ids -1.
    """
    dirs = _check_dirs(dirs)
    origin = np.asarray(origin, dtype=np.float64)
    depth, tri = _cast_many_bvh(
        origin, dirs, bvh.node_min, bvh.node_max, bvh.left, bvh.right,
        bvh.start, bvh.count, bvh.order, bvh.v0, bvh.e1, bvh.e2,
    )
    inst = np.where(tri >= 0, bvh.soup.instance_ids[np.maximum(tri, 0)], NO_INSTANCE)
    return depth, inst, tri


def cast_rays_brute_force(soup: TriangleSoup, origin, dirs) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Reference all-triangles loop with the same contract as ``cast_rays``."""
    dirs = _check_dirs(dirs)
    tris = soup.triangles
    v0 = np.ascontiguousarray(tris[:, 0])
    e1 = np.ascontiguousarray(tris[:, 1] - v0)
    e2 = np.ascontiguousarray(tris[:, 2] - v0)
    depth, tri = _cast_many_brute(np.asarray(origin, dtype=np.float64), dirs, v0, e1, e2)
    inst = np.where(tri >= 0, soup.instance_ids[np.maximum(tri, 0)], NO_INSTANCE)
    return depth, inst, tri


def cast(bvh: Bvh, origin, direction) -> HitRecord | None:
    depth, inst, tri = cast_rays(bvh, origin, np.asarray(direction, dtype=np.float64)[None, :])
    if tri[0] < 0:
        return None
    return HitRecord(float(depth[0]), int(inst[0]), int(tri[0]))


def render(bvh: Bvh | None, grid: ScanGrid, pose: SensorPose) -> tuple[np.ndarray, np.ndarray]:
    """Range image (float32, holes = 0.0) and per-pixel instance ids (-1 = miss).

    ``bvh=None`` renders an empty scene.
    """
    if bvh is None:
        return np.full(grid.shape, HOLE, dtype=np.float32), np.full(grid.shape, NO_INSTANCE, dtype=np.int32)
    depth, inst, _ = cast_rays(bvh, pose.origin_array, ray_directions(grid).reshape(-1, 3))
    miss = ~np.isfinite(depth)
    depth[miss] = HOLE
    return depth.astype(np.float32).reshape(grid.shape), inst.astype(np.int32).reshape(grid.shape)


def render_brute_force(soup: TriangleSoup, grid: ScanGrid, pose: SensorPose) -> tuple[np.ndarray, np.ndarray]:
    depth, inst, _ = cast_rays_brute_force(soup, pose.origin_array, ray_directions(grid).reshape(-1, 3))
    depth[~np.isfinite(depth)] = HOLE
    return depth.astype(np.float32).reshape(grid.shape), inst.astype(np.int32).reshape(grid.shape)


def traverse_leaves(bvh: Bvh) -> np.ndarray:
    """Triangle ids in leaf order from a full traversal (for auditing)."""
    out = []
    stack = [0]
    while stack:
        node = stack.pop()
        if bvh.left[node] < 0:
            s = bvh.start[node]
            out.extend(bvh.order[s:s + bvh.count[node]].tolist())
        else:
            stack.extend((bvh.right[node], bvh.left[node]))
    return np.array(out, dtype=np.int64)
