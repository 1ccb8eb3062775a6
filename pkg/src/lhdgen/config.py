"""Pipeline configuration: TOML file, ``LHD_*`` environment overrides, validation.

Environment keys map onto the config tree with ``__`` separating sections,
e.g. ``LHD_SEED=7`` or ``LHD_SYNTH__RADIAL_RANGE="[500, 10000]"``. Values are
parsed as TOML literals and fall back to plain strings.
"""

from __future__ import annotations

import copy
import hashlib
import json
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Mapping

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from .dataset_io import BACKGROUND_KINDS, FORMATS, BackgroundParams
from .human import BodyParams
from .scene import BODY_SOURCES, PLACEMENTS, SynthConfig
from .sensor import ScanGrid, SensorPose

ENV_PREFIX = "LHD_"


class ConfigError(ValueError):
    pass


DEFAULTS: dict[str, Any] = {
    "seed": 0,
    "count": 100,
    "workers": 1,
    "format": "hdf5",
    "out": "out",
    "shard_size": 100,
    "grid": ScanGrid().to_dict(),
    "sensor": {"origin": [0.0, 0.0, 800.0]},
    "synth": {
        "human_count": [0, 10],
        "radial_range": [500.0, 25000.0],
        "azimuth_range": None,  # None = the grid's horizontal span
        "rotation_range": [0.0, 360.0],
        "body_source": "catalog",
        "fixed_height": None,
        "fixed_weight": None,
        "mesh_path": None,
        "gait_frame": "uniform",
        "placement": "uniform-radius",
        "hole_wins": False,
    },
    "background": {
        "source": "synthetic",
        "path": None,
        "kind": "room",
        "count": 8,
        "seed": 0,
        "length": 50000.0,
        "width": 50000.0,
        "height": 4000.0,
        "hole_fraction": 0.05,
        "pillar_spacing": 5000.0,
        "pillar_size": 400.0,
    },
}

# Keys that change how a run executes but not what it produces.
EXECUTION_KEYS = ("workers", "out")


def _merge(base: dict, over: Mapping, where: str = "") -> None:
    for key, value in over.items():
        path = f"{where}{key}"
        if key not in base:
            raise ConfigError(f"unknown config key '{path}'")
        if isinstance(base[key], dict):
            if not isinstance(value, Mapping):
                raise ConfigError(f"'{path}' must be a table")
            _merge(base[key], value, path + ".")
        else:
            base[key] = value


def _parse_env_value(raw: str):
    try:
        return tomllib.loads(f"v = {raw}")["v"]
    except tomllib.TOMLDecodeError:
        return raw


def env_overrides(environ: Mapping[str, str] | None = None) -> dict:
    environ = os.environ if environ is None else environ
    tree: dict = {}
    for key in sorted(environ):
        if not key.startswith(ENV_PREFIX):
            continue
        parts = key[len(ENV_PREFIX):].lower().split("__")
        node = tree
        for p in parts[:-1]:
            node = node.setdefault(p, {})
        node[parts[-1]] = _parse_env_value(environ[key])
    return tree


@dataclass
class PipelineConfig:
    raw: dict  # fully resolved tree
    grid: ScanGrid
    pose: SensorPose
    synth: SynthConfig
    background_params: BackgroundParams

    @property
    def seed(self) -> int:
        return self.raw["seed"]

    @property
    def count(self) -> int:
        return self.raw["count"]

    @property
    def workers(self) -> int:
        return self.raw["workers"]

    @property
    def format(self) -> str:
        return self.raw["format"]

    @property
    def out(self) -> Path:
        return Path(self.raw["out"])

    @property
    def shard_size(self) -> int:
        return self.raw["shard_size"]

    @property
    def background(self) -> dict:
        return self.raw["background"]

    def content(self) -> dict:
        """The resolved config minus execution-only keys."""
        return {k: v for k, v in self.raw.items() if k not in EXECUTION_KEYS}

    def content_hash(self) -> str:
        blob = json.dumps(self.content(), sort_keys=True, separators=(",", ":")).encode()
        return hashlib.sha256(blob).hexdigest()


def _pair(value, name, cast=float):
    if not isinstance(value, (list, tuple)) or len(value) != 2:
        raise ConfigError(f"'{name}' must be a two-element list")
    try:
        return (cast(value[0]), cast(value[1]))
    except (TypeError, ValueError):
        raise ConfigError(f"'{name}' must contain numbers") from None


def _int(value, name, minimum=None):
    if isinstance(value, bool) or not isinstance(value, int):
        raise ConfigError(f"'{name}' must be an integer, got {value!r}")
    if minimum is not None and value < minimum:
        raise ConfigError(f"'{name}' must be >= {minimum}")
    return value


def _num(value, name):
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(f"'{name}' must be a number, got {value!r}")
    return float(value)


def resolve(tree: dict) -> PipelineConfig:
    _int(tree["seed"], "seed", 0)
    _int(tree["count"], "count", 0)
    _int(tree["workers"], "workers", 1)
    _int(tree["shard_size"], "shard_size", 1)
    if tree["format"] not in FORMATS:
        raise ConfigError(f"format must be one of {FORMATS}")
    if not isinstance(tree["out"], str):
        raise ConfigError("'out' must be a string")
    try:
        g = tree["grid"]
        grid = ScanGrid(
            rings=_int(g["rings"], "grid.rings"),
            columns=_int(g["columns"], "grid.columns"),
            vertical_max=_num(g["vertical_max"], "grid.vertical_max"),
            vertical_min=_num(g["vertical_min"], "grid.vertical_min"),
            horizontal_step=_num(g["horizontal_step"], "grid.horizontal_step"),
            horizontal_center=_num(g["horizontal_center"], "grid.horizontal_center"),
        )
        origin = tree["sensor"]["origin"]
        if not isinstance(origin, (list, tuple)) or len(origin) != 3:
            raise ConfigError("'sensor.origin' must be a three-element list")
        pose = SensorPose(tuple(_num(v, "sensor.origin") for v in origin))

        s = tree["synth"]
        if s["body_source"] not in BODY_SOURCES:
            raise ConfigError(f"synth.body_source must be one of {BODY_SOURCES}")
        if s["placement"] not in PLACEMENTS:
            raise ConfigError(f"synth.placement must be one of {PLACEMENTS}")
        fixed = None
        if s["body_source"] == "fixed":
            if s["fixed_height"] is None or s["fixed_weight"] is None:
                raise ConfigError("body_source 'fixed' needs synth.fixed_height and synth.fixed_weight")
            fixed = BodyParams(_num(s["fixed_height"], "synth.fixed_height"), _num(s["fixed_weight"], "synth.fixed_weight"))
        frame = s["gait_frame"]
        if frame == "uniform":
            frame = None
        elif frame is not None:
            frame = _int(frame, "synth.gait_frame", 0)
        az = s["azimuth_range"]
        az = grid.horizontal_span if az is None else _pair(az, "synth.azimuth_range")
        hole_wins = s["hole_wins"]
        if not isinstance(hole_wins, bool):
            raise ConfigError("synth.hole_wins must be true or false")
        synth = SynthConfig(
            human_count_range=_pair(s["human_count"], "synth.human_count", int),
            radial_range=_pair(s["radial_range"], "synth.radial_range"),
            azimuth_range=az,
            rotation_range=_pair(s["rotation_range"], "synth.rotation_range"),
            body_source=s["body_source"],
            fixed_params=fixed,
            mesh_path=s["mesh_path"],
            gait_frame=frame,
            placement=s["placement"],
            hole_wins=hole_wins,
        )

        b = tree["background"]
        if b["source"] not in ("synthetic", "directory"):
            raise ConfigError("background.source must be 'synthetic' or 'directory'")
        if b["source"] == "directory" and not b["path"]:
            raise ConfigError("background.source 'directory' needs background.path")
        if b["kind"] not in BACKGROUND_KINDS:
            raise ConfigError(f"background.kind must be one of {BACKGROUND_KINDS}")
        _int(b["count"], "background.count", 1)
        _int(b["seed"], "background.seed", 0)
        bp = BackgroundParams(
            length=_num(b["length"], "background.length"),
            width=_num(b["width"], "background.width"),
            height=_num(b["height"], "background.height"),
            hole_fraction=_num(b["hole_fraction"], "background.hole_fraction"),
            pillar_spacing=_num(b["pillar_spacing"], "background.pillar_spacing"),
            pillar_size=_num(b["pillar_size"], "background.pillar_size"),
        )
        bp.validate(b["kind"])
    except ConfigError:
        raise
    except (ValueError, TypeError, KeyError) as exc:
        raise ConfigError(str(exc)) from None
    return PipelineConfig(tree, grid, pose, synth, bp)


def load_config(
    path=None,
    overrides: Mapping | None = None,
    environ: Mapping[str, str] | None = None,
) -> PipelineConfig:
    """Defaults, then the TOML file, then ``LHD_*`` variables, then ``overrides``."""
    tree = copy.deepcopy(DEFAULTS)
    if path is not None:
        try:
            with open(path, "rb") as fh:
                _merge(tree, tomllib.load(fh))
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"{path}: {exc}") from None
    _merge(tree, env_overrides(environ))
    if overrides:
        _merge(tree, overrides)
    return resolve(tree)
