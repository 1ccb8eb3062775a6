"""Batch generation: background pool, scene-parallel rendering, ordered commits."""

from __future__ import annotations

import hashlib
import json
import logging
import multiprocessing as mp
from pathlib import Path

import numpy as np

from . import __version__
from .config import PipelineConfig
from .dataset_io import (
    SUFFIXES,
    SceneMetadata,
    load_backgrounds,
    synth_background,
    write_batch,
    write_scene_xml,
    _atomic_write,
)
from .scene import make_sample, scene_seed

log = logging.getLogger(__name__)

MANIFEST_NAME = "manifest.json"
SEED_RULE = "numpy SeedSequence(entropy=master_seed, spawn_key=(scene_index,)) -> uint64 -> PCG64"


class BackgroundError(RuntimeError):
    pass


def _sha256(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def build_background_pool(cfg: PipelineConfig) -> tuple[list[np.ndarray], dict]:
    """Background maps plus a manifest entry describing where they came from."""
    b = cfg.background
    if b["source"] == "directory":
        root = Path(b["path"])
        try:
            pool = load_backgrounds(root, cfg.grid)
        except (OSError, ValueError) as exc:
            raise BackgroundError(str(exc)) from exc
        files = [root] if root.is_file() else sorted(p for p in root.iterdir() if p.suffix.lower() in (".h5", ".hdf5", ".lhd"))
        listing = [{"file": p.name, "sha256": _sha256(p)} for p in files]
        return pool, {"source": "directory", "maps": len(pool), "files": listing}
    pool = []
    for i in range(b["count"]):
        m = synth_background(b["kind"], cfg.background_params, scene_seed(b["seed"], i), cfg.grid, cfg.pose)
        m.setflags(write=False)
        pool.append(m)
    digest = hashlib.sha256(b"".join(m.tobytes() for m in pool)).hexdigest()
    return pool, {"source": "synthetic", "kind": b["kind"], "maps": len(pool), "seed": b["seed"], "sha256": digest}


_STATE: dict = {}


def _init_worker(cfg: PipelineConfig, pool: list) -> None:
    _STATE["cfg"] = cfg
    _STATE["pool"] = pool


def _generate(index: int):
    cfg = _STATE["cfg"]
    s = make_sample(cfg.synth, _STATE["pool"], cfg.grid, cfg.pose, cfg.seed, index)
    return index, s


def iter_samples(cfg: PipelineConfig, pool: list, workers: int | None = None):
    """Yield ``(index, LabeledSample)`` in index order, computed on ``workers`` processes."""
    workers = cfg.workers if workers is None else workers
    if workers <= 1 or cfg.count <= 1:
        _init_worker(cfg, pool)
        for i in range(cfg.count):
            yield _generate(i)
        return
    ctx = mp.get_context("fork")
    with ctx.Pool(workers, initializer=_init_worker, initargs=(cfg, pool)) as procs:
        yield from procs.imap(_generate, range(cfg.count), chunksize=1)


def shard_name(k: int, fmt: str) -> str:
    return f"samples_{k:05d}{SUFFIXES[fmt]}"


def scene_xml_name(index: int) -> str:
    return f"scene_{index:06d}.xml"


def run_synth(cfg: PipelineConfig) -> dict:
    """Generate ``cfg.count`` scenes into ``cfg.out``; returns the manifest.

    Raises BackgroundError for background problems and OSError for write failures.
    """
    pool, bg_entry = build_background_pool(cfg)
    out = cfg.out
    out.mkdir(parents=True, exist_ok=True)
    shards = []
    buf, start, label_total = [], 0, 0

    def flush():
        nonlocal buf, start
        if not buf:
            return
        name = shard_name(len(shards), cfg.format)
        write_batch(buf, out / name, cfg.format, cfg.grid)
        shards.append({
            "file": name,
            "first_scene": start,
            "scene_count": len(buf),
            "label_pixels": int(sum(int(s.label.sum()) for s in buf)),
            "sha256": _sha256(out / name),
        })
        start += len(buf)
        buf = []

    for index, sample in iter_samples(cfg, pool):
        write_scene_xml(SceneMetadata(sample.scene, sample.visible_pixels), out / scene_xml_name(index))
        label_total += int(sample.label.sum())
        buf.append(sample)
        if len(buf) == cfg.shard_size:
            flush()
        if (index + 1) % 100 == 0:
            log.info("generated %d/%d scenes", index + 1, cfg.count)
    flush()

    manifest = {
        "tool": "lhdgen",
        "version": __version__,
        "config": cfg.content(),
        "config_sha256": cfg.content_hash(),
        "master_seed": cfg.seed,
        "scene_count": cfg.count,
        "scene_seed_rule": SEED_RULE,
        "format": cfg.format,
        "grid": cfg.grid.to_dict(),
        "backgrounds": bg_entry,
        "shards": shards,
        "label_pixels": label_total,
        "metadata_pattern": "scene_{index:06d}.xml",
    }
    blob = (json.dumps(manifest, indent=2, sort_keys=True) + "\n").encode()
    _atomic_write(out / MANIFEST_NAME, lambda tmp: Path(tmp).write_bytes(blob))
    return manifest
