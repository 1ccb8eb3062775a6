"""Sample containers (HDF5, LHD1), per-scene XML metadata, and background pools.

LHD1 layout (all little-endian)::

    b"LHD1" | u32 sample_count | u32 rings | u32 columns
    then per sample, row-major ring-then-column:
        depth f32[rings*columns] | xyz f32[rings*columns*3] | label u8[rings*columns]

HDF5 layout: datasets ``depth`` (N,R,C,1) float32, ``xyz`` (N,R,C,3) float32,
``label`` (N,R,C,1) uint8; file attributes ``format_version`` and ``grid``
(JSON of the lattice parameters).
"""

from __future__ import annotations

import json
import os
import struct
import tempfile
import xml.etree.ElementTree as ET
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .raycast import TriangleSoup, build_bvh, render
from .scene import HumanPlacement, LabeledSample, SceneSpec
from .sensor import HOLE, ScanGrid, SensorPose, depthmap_to_xyzmap, validate_depthmap

LHD1_MAGIC = b"LHD1"
HDF5_MAGIC = b"\x89HDF\r\n\x1a\n"
FORMAT_VERSION = 1
FORMATS = ("hdf5", "lhd1")
SUFFIXES = {"hdf5": ".h5", "lhd1": ".lhd"}


class DatasetFormatError(ValueError):
    pass


class BadMagicError(DatasetFormatError):
    pass


class TruncatedFileError(DatasetFormatError):
    pass


class ShapeMismatchError(DatasetFormatError):
    pass


class MetadataError(ValueError):
    def __init__(self, message: str, position: tuple[int, int] | None = None):
        if position is not None:
            message = f"line {position[0]}, column {position[1]}: {message}"
        super().__init__(message)
        self.position = position


def _umask() -> int:
    mask = os.umask(0)
    os.umask(mask)
    return mask


def _atomic_write(path: Path, write_fn) -> None:
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix="." + path.name, suffix=".tmp")
    os.close(fd)
    try:
        write_fn(tmp)
        os.chmod(tmp, 0o666 & ~_umask())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _stack(samples: Sequence[LabeledSample]):
    if not samples:
        raise ValueError("no samples to write")
    depth = np.stack([np.asarray(s.depth, dtype=np.float32) for s in samples])
    xyz = np.stack([np.asarray(s.xyz, dtype=np.float32) for s in samples])
    label = np.stack([np.asarray(s.label, dtype=np.uint8) for s in samples])
    if depth.ndim == 3:
        depth = depth[..., None]
    if label.ndim == 3:
        label = label[..., None]
    n, r, c = depth.shape[:3]
    if depth.shape != (n, r, c, 1) or xyz.shape != (n, r, c, 3) or label.shape != (n, r, c, 1):
        raise ShapeMismatchError(f"inconsistent shapes: depth {depth.shape}, xyz {xyz.shape}, label {label.shape}")
    return depth, xyz, label


def write_batch(samples: Sequence[LabeledSample], path, format: str = "hdf5", grid: ScanGrid | None = None) -> None:
    if format not in FORMATS:
        raise ValueError(f"format must be one of {FORMATS}")
    depth, xyz, label = _stack(samples)
    if grid is not None and depth.shape[1:3] != grid.shape:
        raise ShapeMismatchError(f"sample shape {depth.shape[1:3]} does not match grid {grid.shape}")
    if format == "lhd1":
        _atomic_write(path, lambda tmp: _write_lhd1(tmp, depth, xyz, label))
    else:
        _atomic_write(path, lambda tmp: _write_hdf5(tmp, depth, xyz, label, grid))


def _write_lhd1(path, depth, xyz, label) -> None:
    n, r, c = depth.shape[:3]
    with open(path, "wb") as fh:
        fh.write(LHD1_MAGIC + struct.pack("<III", n, r, c))
        for i in range(n):
            fh.write(depth[i].astype("<f4").tobytes())
            fh.write(xyz[i].astype("<f4").tobytes())
            fh.write(label[i].astype("u1").tobytes())


def _write_hdf5(path, depth, xyz, label, grid) -> None:
    import h5py

    with h5py.File(path, "w", track_order=False) as f:
        f.attrs["format_version"] = FORMAT_VERSION
        if grid is not None:
            f.attrs["grid"] = json.dumps(grid.to_dict(), sort_keys=True)
        for name, arr in (("depth", depth), ("xyz", xyz), ("label", label)):
            f.create_dataset(name, data=arr, track_times=False)


def _read_lhd1(path):
    data = Path(path).read_bytes()
    if data[:4] != LHD1_MAGIC:
        raise BadMagicError(f"{path}: not an LHD1 file (magic {data[:4]!r})")
    if len(data) < 16:
        raise TruncatedFileError(f"{path}: header truncated ({len(data)} bytes)")
    n, r, c = struct.unpack("<III", data[4:16])
    if r == 0 or c == 0:
        raise ShapeMismatchError(f"{path}: zero-sized lattice {r}x{c}")
    px = r * c
    per = px * 4 + px * 12 + px
    expected = 16 + n * per
    if len(data) < expected:
        raise TruncatedFileError(f"{path}: {len(data)} bytes, header promises {expected}")
    if len(data) > expected:
        raise DatasetFormatError(f"{path}: {len(data) - expected} trailing bytes after {n} samples")
    body = np.frombuffer(data, dtype=np.uint8, offset=16).reshape(n, per)
    depth = body[:, : px * 4].copy().view("<f4").reshape(n, r, c, 1)
    xyz = body[:, px * 4 : px * 16].copy().view("<f4").reshape(n, r, c, 3)
    label = body[:, px * 16 :].copy().reshape(n, r, c, 1)
    return depth.astype(np.float32), xyz.astype(np.float32), label


def _read_hdf5(path):
    import h5py

    try:
        with h5py.File(path, "r") as f:
            missing = [k for k in ("depth", "xyz", "label") if k not in f]
            if missing:
                raise DatasetFormatError(f"{path}: missing datasets {missing}")
            version = int(f.attrs.get("format_version", FORMAT_VERSION))
            if version != FORMAT_VERSION:
                raise BadMagicError(f"{path}: unsupported format_version {version}")
            depth, xyz, label = f["depth"][()], f["xyz"][()], f["label"][()]
    except OSError as exc:
        raise TruncatedFileError(f"{path}: unreadable HDF5 ({exc})") from exc
    if depth.ndim == 3:
        depth = depth[..., None]
    if label.ndim == 3:
        label = label[..., None]
    n, r, c = depth.shape[:3]
    if xyz.shape != (n, r, c, 3) or label.shape != (n, r, c, 1) or depth.shape != (n, r, c, 1):
        raise ShapeMismatchError(f"{path}: inconsistent shapes depth {depth.shape}, xyz {xyz.shape}, label {label.shape}")
    return depth.astype(np.float32), xyz.astype(np.float32), label.astype(np.uint8)


def detect_format(path) -> str:
    with open(path, "rb") as fh:
        head = fh.read(8)
    if head[:4] == LHD1_MAGIC:
        return "lhd1"
    if head == HDF5_MAGIC:
        return "hdf5"
    raise BadMagicError(f"{path}: unrecognized container (magic {head[:4]!r})")


def read_arrays(path) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Stacked ``(depth, xyz, label)`` tensors of a container file."""
    fmt = detect_format(path)
    return _read_lhd1(path) if fmt == "lhd1" else _read_hdf5(path)


def read_batch(path) -> list[LabeledSample]:
    depth, xyz, label = read_arrays(path)
    return [LabeledSample(depth[i], xyz[i], label[i]) for i in range(len(depth))]


# --- scene metadata -------------------------------------------------------

@dataclass
class SceneMetadata:
    scene: SceneSpec
    visible_pixels: list[int] | None = None

    @property
    def human_count(self) -> int:
        return self.scene.human_count


_HUMAN_FIELDS = ("x", "y", "yaw", "height", "weight")


def scene_xml_bytes(meta: SceneMetadata) -> bytes:
    spec = meta.scene
    if meta.visible_pixels is not None and len(meta.visible_pixels) != spec.human_count:
        raise MetadataError("visible_pixels must have one entry per human")
    root = ET.Element("scene", {"index": str(spec.scene_index), "background": str(spec.background_id)})
    if spec.seed is not None:
        root.set("seed", str(spec.seed))
    if meta.visible_pixels is not None:
        root.set("visibility", "1")
    ET.SubElement(root, "count").text = str(spec.human_count)
    for k, h in enumerate(spec.humans):
        el = ET.SubElement(root, "human", {"id": str(k)})
        for name in _HUMAN_FIELDS:
            ET.SubElement(el, name).text = repr(float(getattr(h, name)))
        ET.SubElement(el, "frame").text = str(h.frame)
        if meta.visible_pixels is not None:
            ET.SubElement(el, "visible").text = str(int(meta.visible_pixels[k]))
    ET.indent(root)
    return ET.tostring(root, encoding="utf-8", xml_declaration=True) + b"\n"


def write_scene_xml(meta: SceneMetadata, path) -> None:
    data = scene_xml_bytes(meta)
    _atomic_write(path, lambda tmp: Path(tmp).write_bytes(data))


def _child_text(el, name: str) -> str:
    child = el.find(name)
    if child is None or child.text is None:
        raise MetadataError(f"<{el.tag}> lacks <{name}>")
    return child.text.strip()


def parse_scene_xml(data: bytes | str) -> SceneMetadata:
    try:
        root = ET.fromstring(data)
    except ET.ParseError as exc:
        raise MetadataError(f"malformed XML: {exc.msg if hasattr(exc, 'msg') else exc}", exc.position) from None
    if root.tag != "scene":
        raise MetadataError(f"root element is <{root.tag}>, expected <scene>")
    try:
        count = int(_child_text(root, "count"))
        humans, visible = [], []
        for el in root.findall("human"):
            vals = {name: float(_child_text(el, name)) for name in _HUMAN_FIELDS}
            humans.append(HumanPlacement(frame=int(_child_text(el, "frame")), **vals))
            vis = el.find("visible")
            visible.append(None if vis is None else int(vis.text))
        seed = root.get("seed")
        spec = SceneSpec(
            int(root.get("index", "0")),
            int(root.get("background", "0")),
            tuple(humans),
            None if seed is None else int(seed),
        )
    except ValueError as exc:
        if isinstance(exc, MetadataError):
            raise
        raise MetadataError(f"bad value: {exc}") from None
    if count != len(humans):
        raise MetadataError(f"count is {count} but {len(humans)} <human> elements are present")
    has_visibility = root.get("visibility") == "1"
    if any((v is None) == has_visibility for v in visible):
        raise MetadataError("<visible> must appear on every human exactly when the scene records visibility")
    return SceneMetadata(spec, visible if has_visibility else None)


def read_scene_xml(path) -> SceneMetadata:
    return parse_scene_xml(Path(path).read_bytes())


# --- backgrounds ----------------------------------------------------------

CONTAINER_SUFFIXES = (".h5", ".hdf5", ".lhd")


def load_backgrounds(path, grid: ScanGrid | None = None) -> list[np.ndarray]:
    """Background pool from a container file or a directory of them.

    Files are taken in lexicographic name order, maps in file order. Each map
    is validated (finite, non-negative, matching the grid).
    """
    path = Path(path)
    if path.is_dir():
        files = sorted(p for p in path.iterdir() if p.suffix.lower() in CONTAINER_SUFFIXES)
    else:
        files = [path]
    if not files:
        raise FileNotFoundError(f"no background containers in {path}")
    pool = []
    for f in files:
        depth, _, _ = read_arrays(f)
        for i, d in enumerate(depth):
            try:
                m = validate_depthmap(d, grid)
            except ValueError as exc:
                raise ValueError(f"{f} map {i}: {exc}") from None
            m = np.array(m, dtype=np.float32)
            m.setflags(write=False)
            pool.append(m)
    return pool


BACKGROUND_KINDS = ("flat", "room", "corridor")


@dataclass(frozen=True)
class BackgroundParams:
    length: float = 10000.0  # mm along x
    width: float = 10000.0  # mm along y
    height: float = 3000.0  # mm
    hole_fraction: float = 0.0
    pillar_spacing: float = 5000.0  # corridor only, mm
    pillar_size: float = 400.0  # corridor only, mm

    def validate(self, kind: str) -> None:
        if kind not in BACKGROUND_KINDS:
            raise ValueError(f"kind must be one of {BACKGROUND_KINDS}")
        if not 0.0 <= self.hole_fraction <= 0.5:
            raise ValueError("hole_fraction must lie in [0, 0.5]")
        if kind != "flat" and min(self.length, self.width, self.height) < 2000.0:
            raise ValueError("room extents must be at least 2 m")
        if kind == "corridor" and (self.pillar_spacing <= 0 or self.pillar_size <= 0):
            raise ValueError("pillar spacing and size must be positive")


CORRIDOR_DEFAULTS = BackgroundParams(length=60000.0, width=4000.0, height=3000.0)


def _quad(a, b, c, d) -> list:
    return [(a, b, c), (a, c, d)]


def _box(lo, hi) -> list:
    x0, y0, z0 = lo
    x1, y1, z1 = hi
    p = [(x, y, z) for z in (z0, z1) for y in (y0, y1) for x in (x0, x1)]
    faces = [(0, 1, 3, 2), (4, 6, 7, 5), (0, 4, 5, 1), (2, 3, 7, 6), (0, 2, 6, 4), (1, 5, 7, 3)]
    tris = []
    for a, b, c, d in faces:
        tris += _quad(p[a], p[b], p[c], p[d])
    return tris


def background_triangles(kind: str, params: BackgroundParams, pose: SensorPose) -> np.ndarray:
    """Static geometry (mm, world frame) for a synthetic background."""
    params.validate(kind)
    ox, oy, _ = pose.origin
    if kind == "flat":
        s = 1e6
        tris = _quad((ox - s, oy - s, 0.0), (ox + s, oy - s, 0.0), (ox + s, oy + s, 0.0), (ox - s, oy + s, 0.0))
        return np.array(tris, dtype=np.float64)
    hx, hy = params.length / 2.0, params.width / 2.0
    tris = _box((ox - hx, oy - hy, 0.0), (ox + hx, oy + hy, params.height))
    if kind == "corridor":
        ps = params.pillar_size
        k = int(hx // params.pillar_spacing)
        for i in range(-k, k + 1):
            cx = ox + i * params.pillar_spacing
            if abs(cx - ox) + ps / 2 >= hx:
                continue
            for wall_y in (oy - hy, oy + hy - ps):
                tris += _box((cx - ps / 2, wall_y, 0.0), (cx + ps / 2, wall_y + ps, params.height))
    return np.array(tris, dtype=np.float64)


def synth_background(
    kind: str,
    params: BackgroundParams | None = None,
    seed: int = 0,
    grid: ScanGrid | None = None,
    pose: SensorPose | None = None,
) -> np.ndarray:
    """Render a synthetic background and punch ``hole_fraction`` of its valid pixels to holes."""
    grid = grid or ScanGrid()
    pose = pose or SensorPose()
    if params is None:
        params = CORRIDOR_DEFAULTS if kind == "corridor" else BackgroundParams()
    tris = background_triangles(kind, params, pose)
    bvh = build_bvh(TriangleSoup(tris, np.zeros(len(tris), dtype=np.int32)))
    depth, _ = render(bvh, grid, pose)
    valid = np.flatnonzero(depth.ravel() > 0)
    n_holes = int(round(params.hole_fraction * len(valid)))
    if n_holes:
        rng = np.random.default_rng(seed)
        holes = rng.choice(valid, size=n_holes, replace=False)
        depth.ravel()[holes] = HOLE
    return depth


def background_sample(depth: np.ndarray, grid: ScanGrid, pose: SensorPose) -> LabeledSample:
    """Wrap a background map as a label-free sample for storage."""
    depth = validate_depthmap(depth, grid)
    return LabeledSample(
        depth=depth[..., None],
        xyz=depthmap_to_xyzmap(grid, pose, depth),
        label=np.zeros(grid.shape + (1,), dtype=np.uint8),
    )
