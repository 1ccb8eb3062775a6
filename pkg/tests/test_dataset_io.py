import math
import struct

import h5py
import numpy as np
import pytest

from lhdgen.dataset_io import (
    BackgroundParams,
    BadMagicError,
    DatasetFormatError,
    MetadataError,
    SceneMetadata,
    ShapeMismatchError,
    TruncatedFileError,
    background_sample,
    load_backgrounds,
    parse_scene_xml,
    read_arrays,
    read_batch,
    read_scene_xml,
    scene_xml_bytes,
    synth_background,
    write_batch,
    write_scene_xml,
)
from lhdgen.scene import HumanPlacement, LabeledSample, SceneSpec
from lhdgen.sensor import ScanGrid


def random_samples(n, shape=(32, 1024), seed=0):
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(n):
        depth = rng.uniform(0, 30000, shape + (1,)).astype(np.float32)
        depth[rng.random(shape + (1,)) < 0.1] = 0
        out.append(LabeledSample(depth, rng.normal(0, 5000, shape + (3,)).astype(np.float32),
                                 (rng.random(shape + (1,)) < 0.05).astype(np.uint8)))
    return out


def assert_same(a, b):
    assert len(a) == len(b)
    for x, y in zip(a, b):
        for name in ("depth", "xyz", "label"):
            u, v = getattr(x, name), getattr(y, name)
            assert u.dtype == v.dtype and u.shape == v.shape and u.tobytes() == v.tobytes()


@pytest.mark.parametrize("fmt", ["hdf5", "lhd1"])
def test_round_trip(tmp_path, fmt):
    samples = random_samples(3)
    path = tmp_path / f"b.{fmt}"
    write_batch(samples, path, fmt, ScanGrid())
    back = read_batch(path)
    assert_same(samples, back)
    assert back[0].depth.shape == (32, 1024, 1) and back[0].xyz.shape == (32, 1024, 3)
    assert back[0].label.shape == (32, 1024, 1)
    assert [p.name for p in tmp_path.iterdir()] == [path.name]


def test_hdf5_layout(tmp_path):
    path = tmp_path / "b.h5"
    write_batch(random_samples(2), path, "hdf5", ScanGrid())
    with h5py.File(path) as f:
        assert f["depth"].shape == (2, 32, 1024, 1) and f["depth"].dtype == np.float32
        assert f["xyz"].shape == (2, 32, 1024, 3) and f["xyz"].dtype == np.float32
        assert f["label"].shape == (2, 32, 1024, 1) and f["label"].dtype == np.uint8
        assert '"rings": 32' in f.attrs["grid"]


@pytest.mark.parametrize("fmt", ["hdf5", "lhd1"])
def test_writes_are_byte_stable(tmp_path, fmt):
    s = random_samples(2, seed=5)
    write_batch(s, tmp_path / "a", fmt)
    write_batch(s, tmp_path / "b", fmt)
    assert (tmp_path / "a").read_bytes() == (tmp_path / "b").read_bytes()


def test_hand_crafted_lhd1(tmp_path):
    r, c = 2, 3
    depth = [0.0, 1.5, 2.0, 1000.25, 0.0, 7.0]
    xyz = [float(v) for v in range(18)]
    label = [0, 1, 0, 1, 0, 1]
    blob = b"LHD1" + struct.pack("<III", 1, r, c)
    blob += struct.pack("<6f", *depth) + struct.pack("<18f", *xyz) + bytes(label)
    path = tmp_path / "hand.lhd"
    path.write_bytes(blob)
    (s,) = read_batch(path)
    assert s.depth[..., 0].tolist() == [[0.0, 1.5, 2.0], [1000.25, 0.0, 7.0]]
    assert s.xyz[1, 2].tolist() == [15.0, 16.0, 17.0]
    assert s.label[..., 0].tolist() == [[0, 1, 0], [1, 0, 1]]
    write_batch([s], tmp_path / "again.lhd", "lhd1")
    assert (tmp_path / "again.lhd").read_bytes() == blob


def test_truncated_and_bad_files(tmp_path):
    path = tmp_path / "t.lhd"
    write_batch(random_samples(2, (4, 5)), path, "lhd1")
    data = path.read_bytes()
    path.write_bytes(data[: len(data) - 30])
    with pytest.raises(TruncatedFileError):
        read_batch(path)
    path.write_bytes(data[:10])
    with pytest.raises(TruncatedFileError):
        read_batch(path)
    path.write_bytes(data + b"\0")
    with pytest.raises(DatasetFormatError):
        read_batch(path)
    path.write_bytes(b"NOPE" + data[4:])
    with pytest.raises(BadMagicError):
        read_batch(path)
    h5 = tmp_path / "t.h5"
    write_batch(random_samples(1, (4, 5)), h5, "hdf5")
    h5.write_bytes(h5.read_bytes()[:600])
    with pytest.raises(TruncatedFileError):
        read_batch(h5)


def test_shape_checks(tmp_path):
    with pytest.raises(ShapeMismatchError):
        write_batch(random_samples(1, (4, 5)), tmp_path / "x", "lhd1", ScanGrid())
    bad = random_samples(1, (4, 5))[0]
    bad.xyz = bad.xyz[:, :4]
    with pytest.raises(ShapeMismatchError):
        write_batch([bad], tmp_path / "x", "lhd1")
    with pytest.raises(ValueError):
        write_batch([], tmp_path / "x", "lhd1")


def scene(n, visible=True):
    humans = tuple(HumanPlacement(1700.0, 60.0 + k, 1234.5678901 * (k + 1), -0.1 * k, 359.99999 - k, 17 * k)
                   for k in range(n))
    meta = SceneMetadata(SceneSpec(12, 3, humans, 2**63 + 5), [10 * k for k in range(n)] if visible else None)
    return meta


@pytest.mark.parametrize("n, visible", [(3, True), (3, False), (0, True), (0, False)])
def test_xml_round_trip(tmp_path, n, visible):
    meta = scene(n, visible)
    path = tmp_path / "s.xml"
    write_scene_xml(meta, path)
    back = read_scene_xml(path)
    assert back == meta


def test_xml_zero_humans_has_no_human_elements():
    text = scene_xml_bytes(scene(0)).decode()
    assert "<count>0</count>" in text and "<human" not in text


def test_xml_count_mismatch():
    text = scene_xml_bytes(scene(3)).decode().replace("<count>3</count>", "<count>2</count>")
    with pytest.raises(MetadataError, match="count is 2"):
        parse_scene_xml(text)


def test_xml_malformed_has_position():
    with pytest.raises(MetadataError) as err:
        parse_scene_xml("<scene>\n  <count>1</count>\n  <human id='0'>\n</scene>")
    assert err.value.position is not None and err.value.position[0] == 4


def _write_maps(path, maps, fmt="lhd1"):
    write_batch([LabeledSample(m[..., None], np.zeros(m.shape + (3,), np.float32),
                               np.zeros(m.shape + (1,), np.uint8)) for m in maps], path, fmt)


def test_load_backgrounds_directory(tmp_path, grid):
    rng = np.random.default_rng(0)
    maps = [rng.uniform(0, 9000, grid.shape).astype(np.float32) for _ in range(10)]
    _write_maps(tmp_path / "b.h5", maps[5:], "hdf5")
    _write_maps(tmp_path / "a.lhd", maps[:5])
    (tmp_path / "notes.txt").write_text("ignored")
    pool = load_backgrounds(tmp_path, grid)
    assert len(pool) == 10
    assert all(np.array_equal(p, m) for p, m in zip(pool, maps))
    again = load_backgrounds(tmp_path, grid)
    assert all(a.tobytes() == b.tobytes() for a, b in zip(pool, again))


def test_load_backgrounds_validation(tmp_path, grid):
    m = np.full(grid.shape, 1000, np.float32)
    m[3, 3] = -2
    _write_maps(tmp_path / "neg.lhd", [m])
    with pytest.raises(ValueError, match="neg.lhd"):
        load_backgrounds(tmp_path, grid)
    (tmp_path / "neg.lhd").unlink()
    _write_maps(tmp_path / "small.lhd", [np.ones((16, 1024), np.float32)])
    with pytest.raises(ValueError, match="small.lhd"):
        load_backgrounds(tmp_path, grid)


def test_flat_background_closed_form(grid, pose):
    d = synth_background("flat", BackgroundParams(hole_fraction=0.0), 0, grid, pose)
    elev = grid.elevations()
    down = elev < 0
    assert down.sum() == 23
    assert (d[~down] == 0).all()
    expected = 800.0 / np.sin(np.deg2rad(-elev[down]))
    np.testing.assert_allclose(d[down], np.broadcast_to(expected[:, None], d[down].shape), rtol=1e-6)


def test_hole_fraction(grid, pose):
    d = synth_background("room", BackgroundParams(hole_fraction=0.2), 42, grid, pose)
    holes = np.count_nonzero(d == 0) / d.size
    assert abs(holes - 0.2) <= 0.01
    again = synth_background("room", BackgroundParams(hole_fraction=0.2), 42, grid, pose)
    assert np.array_equal(d, again)


def test_room_depth_bound(grid, pose):
    p = BackgroundParams(length=10000, width=10000, height=3000)
    d = synth_background("room", p, 0, grid, pose)
    assert (d > 0).all()
    bound = math.sqrt(5000**2 + 5000**2 + max(800, 3000 - 800) ** 2)
    assert d.max() <= bound


def test_corridor_has_pillars(grid, pose):
    plain = synth_background("room", BackgroundParams(length=60000, width=4000, height=3000), 0, grid, pose)
    corridor = synth_background("corridor", None, 0, grid, pose)
    assert (corridor <= plain + 1e-3).all() and (corridor < plain - 1).any()


@pytest.mark.parametrize(
    "kind, params",
    [("room", BackgroundParams(length=1500)), ("flat", BackgroundParams(hole_fraction=0.6)), ("cave", BackgroundParams())],
)
def test_invalid_background_params(kind, params, grid, pose):
    with pytest.raises(ValueError):
        synth_background(kind, params, 0, grid, pose)


def test_background_sample_storage(tmp_path, grid, pose):
    d = synth_background("room", BackgroundParams(hole_fraction=0.1), 1, grid, pose)
    write_batch([background_sample(d, grid, pose)], tmp_path / "bg.lhd", "lhd1", grid)
    (pool,) = load_backgrounds(tmp_path / "bg.lhd", grid)
    assert np.array_equal(pool, d)
    depth, xyz, label = read_arrays(tmp_path / "bg.lhd")
    assert not label.any() and np.array_equal(xyz[0].any(axis=-1), d > 0)


def test_hand_crafted_lhd1_two_samples(tmp_path):
    # samples are stored one after another, each as depth | xyz | label
    blob = b"LHD1" + struct.pack("<III", 2, 1, 1)
    blob += struct.pack("<f", 10.0) + struct.pack("<3f", 1, 2, 3) + bytes([1])
    blob += struct.pack("<f", 20.0) + struct.pack("<3f", 4, 5, 6) + bytes([0])
    path = tmp_path / "two.lhd"
    path.write_bytes(blob)
    a, b = read_batch(path)
    assert (a.depth.item(), a.xyz.ravel().tolist(), a.label.item()) == (10.0, [1, 2, 3], 1)
    assert (b.depth.item(), b.xyz.ravel().tolist(), b.label.item()) == (20.0, [4, 5, 6], 0)
