"""Command-line entry point (``lhdgen``)."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from collections import Counter
from pathlib import Path

import numpy as np

from .config import ConfigError, load_config
from .dataset_io import (
    BACKGROUND_KINDS,
    CORRIDOR_DEFAULTS,
    BackgroundParams,
    DatasetFormatError,
    MetadataError,
    background_sample,
    read_arrays,
    read_scene_xml,
    synth_background,
    write_batch,
)
from .human import BodyParams, WALKING, build_body, pose_at_frame, transform_mesh, write_mesh
from .metrics import ConfusionCounts, compute_metrics, confusion, format_report
from .pipeline import MANIFEST_NAME, BackgroundError, run_synth
from .raycast import TriangleSoup, build_bvh, render
from .scene import LabeledSample, composite, distance_histogram, scene_seed
from .sensor import HOLE, ScanGrid, SensorPose, depthmap_to_xyzmap

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_IO = 3
EXIT_WRITE = 4

log = logging.getLogger("lhdgen")


def _err(msg: str) -> None:
    print(f"lhdgen: {msg}", file=sys.stderr)


def cmd_synth(args) -> int:
    overrides = {}
    for key in ("seed", "count", "workers", "format"):
        if getattr(args, key) is not None:
            overrides[key] = getattr(args, key)
    if args.out is not None:
        overrides["out"] = str(args.out)
    try:
        cfg = load_config(args.config, overrides)
    except ConfigError as exc:
        _err(f"config error: {exc}")
        return EXIT_CONFIG
    try:
        manifest = run_synth(cfg)
    except BackgroundError as exc:
        _err(f"background error: {exc}")
        return EXIT_IO
    except OSError as exc:
        _err(f"write error: {exc}")
        return EXIT_WRITE
    print(f"wrote {manifest['scene_count']} scenes to {cfg.out} "
          f"({len(manifest['shards'])} {cfg.format} shard(s), {manifest['label_pixels']} human pixels)")
    return EXIT_OK


def cmd_render_human(args) -> int:
    try:
        params = BodyParams(args.height, args.weight)
    except ValueError as exc:
        _err(str(exc))
        return EXIT_CONFIG
    if args.frame < 0:
        _err("frame must be non-negative")
        return EXIT_CONFIG
    grid, pose = ScanGrid(), SensorPose()
    mesh = pose_at_frame(build_body(params), WALKING, args.frame)
    out = Path(args.out)
    try:
        out.mkdir(parents=True, exist_ok=True)
        write_mesh(mesh, out / "human.obj",
                   header=f"height {params.height!r} mm, weight {params.weight!r} kg, frame {mesh.frame}")
        # placed 3 m ahead of the sensor, facing it
        placed = transform_mesh(mesh, args.distance, 0.0, 180.0)
        depth, ids = render(build_bvh(TriangleSoup.from_meshes([placed])), grid, pose)
        d, label, _ = composite(depth, ids, np.full(grid.shape, HOLE, dtype=np.float32))
        sample = LabeledSample(d[..., None], depthmap_to_xyzmap(grid, pose, d), label[..., None])
        write_batch([sample], out / "render.lhd", "lhd1", grid)
    except OSError as exc:
        _err(f"write error: {exc}")
        return EXIT_WRITE
    print(f"mesh: {len(mesh.vertices)} vertices, {len(mesh.triangles)} triangles, "
          f"z-extent {mesh.extent[2]:.1f} mm; render: {int(label.sum())} human pixels")
    return EXIT_OK


def _fmt_bands(ratios) -> str:
    return "  ".join(f"{100 * r:6.2f}%" for r in ratios)


def cmd_stats(args) -> int:
    root = Path(args.directory)
    files = sorted(root.glob("*.xml")) if root.is_dir() else []
    if not files:
        _err(f"no scene metadata in {root}")
        return EXIT_IO
    try:
        metas = [read_scene_xml(f) for f in files]
    except (OSError, MetadataError) as exc:
        _err(f"unreadable metadata: {exc}")
        return EXIT_IO
    print(f"scenes: {len(metas)}")
    print("bands (m):        0-5      5-10     10-15    15-20    20-25")
    for policy in ("placed", "visible"):
        try:
            ratios = distance_histogram(metas, policy=policy)
            print(f"{policy:<10} {_fmt_bands(ratios)}")
        except ValueError as exc:
            print(f"{policy:<10} n/a ({exc})")
    counts = Counter(m.human_count for m in metas)
    print("humans per scene: " + ", ".join(f"{k}:{counts[k]}" for k in sorted(counts)))
    manifest = root / MANIFEST_NAME
    visible = [m.visible_pixels for m in metas]
    if manifest.exists() and all(v is not None for v in visible):
        grid = json.loads(manifest.read_text())["grid"]
        total = len(metas) * grid["rings"] * grid["columns"]
        print(f"label-pixel fraction: {sum(map(sum, visible)) / total:.6f}")
    else:
        print("label-pixel fraction: n/a")
    return EXIT_OK


def cmd_eval(args) -> int:
    try:
        _, _, pred = read_arrays(args.pred)
        t_depth, _, truth = read_arrays(args.truth)
    except (OSError, DatasetFormatError) as exc:
        _err(str(exc))
        return EXIT_IO
    if pred.shape != truth.shape:
        _err(f"prediction shape {pred.shape} does not match ground truth {truth.shape}")
        return EXIT_CONFIG
    total = ConfusionCounts()
    try:
        for i in range(len(truth)):
            c = confusion(pred[i], truth[i], args.ignore_holes, t_depth[i])
            total = total + c
            if args.per_sample:
                r = compute_metrics(c)
                print(f"sample {i:5d}  tp={c.tp} fp={c.fp} fn={c.fn} tn={c.tn}  "
                      f"acc={r.avg_acc:.4f} prec={r.precision:.4f} rec={r.recall:.4f} threat={r.threat:.4f}")
        report = compute_metrics(total)
    except ValueError as exc:
        _err(str(exc))
        return EXIT_CONFIG
    print(format_report(report, title=f"{len(truth)} samples, tp={total.tp} fp={total.fp} fn={total.fn} tn={total.tn}"))
    return EXIT_OK


def cmd_background_synth(args) -> int:
    base = CORRIDOR_DEFAULTS if args.kind == "corridor" else BackgroundParams()
    params = BackgroundParams(
        length=args.length if args.length is not None else base.length,
        width=args.width if args.width is not None else base.width,
        height=args.height if args.height is not None else base.height,
        hole_fraction=args.hole_fraction,
        pillar_spacing=base.pillar_spacing,
        pillar_size=base.pillar_size,
    )
    try:
        params.validate(args.kind)
    except ValueError as exc:
        _err(str(exc))
        return EXIT_CONFIG
    grid, pose = ScanGrid(), SensorPose()
    out = Path(args.out)
    fmt = "hdf5" if out.suffix.lower() in (".h5", ".hdf5") else "lhd1"
    maps = [synth_background(args.kind, params, scene_seed(args.seed, i), grid, pose) for i in range(args.count)]
    try:
        out.parent.mkdir(parents=True, exist_ok=True)
        write_batch([background_sample(m, grid, pose) for m in maps], out, fmt, grid)
    except OSError as exc:
        _err(f"write error: {exc}")
        return EXIT_WRITE
    print(f"wrote {args.count} {args.kind} background(s) to {out}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="lhdgen", description="Labeled LiDAR human data generator.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", help="generate labeled samples")
    s.add_argument("--config", type=Path)
    s.add_argument("--seed", type=int)
    s.add_argument("--count", type=int)
    s.add_argument("--out", type=Path)
    s.add_argument("--format", choices=("hdf5", "lhd1"))
    s.add_argument("--workers", type=int)
    s.set_defaults(func=cmd_synth)

    r = sub.add_parser("render-human", help="write one posed human mesh and its range image")
    r.add_argument("--height", type=float, required=True, help="mm")
    r.add_argument("--weight", type=float, required=True, help="kg")
    r.add_argument("--frame", type=int, default=0)
    r.add_argument("--distance", type=float, default=3000.0, help="mm in front of the sensor")
    r.add_argument("--out", type=Path, required=True)
    r.set_defaults(func=cmd_render_human)

    st = sub.add_parser("stats", help="distance bands and counts of a generated dataset")
    st.add_argument("directory", type=Path)
    st.set_defaults(func=cmd_stats)

    e = sub.add_parser("eval", help="score predicted labels against ground truth")
    e.add_argument("--pred", type=Path, required=True)
    e.add_argument("--truth", type=Path, required=True)
    e.add_argument("--per-sample", action="store_true")
    e.add_argument("--ignore-holes", action="store_true")
    e.set_defaults(func=cmd_eval)

    b = sub.add_parser("background", help="background utilities")
    bsub = b.add_subparsers(dest="background_command", required=True)
    bs = bsub.add_parser("synth", help="write synthetic background maps")
    bs.add_argument("--kind", choices=BACKGROUND_KINDS, required=True)
    bs.add_argument("--out", type=Path, required=True)
    bs.add_argument("--seed", type=int, default=0)
    bs.add_argument("--count", type=int, default=1)
    bs.add_argument("--hole-fraction", type=float, default=0.0)
    bs.add_argument("--length", type=float)
    bs.add_argument("--width", type=float)
    bs.add_argument("--height", type=float)
    bs.set_defaults(func=cmd_background_synth)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
