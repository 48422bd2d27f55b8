"""Generation config: a TOML file with per-option blocks.

Example::

    seed = 7
    num_identities = 64
    images_per_identity = 8
    num_cameras = 6
    beta = 0.08                 # colour-bias magnitude

    [backgrounds]
    source = "procedural"       # procedural | plain | <directory of PNG/JPEG>
    count = 24                  # procedural only
    seed = 0
    crop_manifest = "crops.txt" # directory only, optional

    [poses]
    builtin = ["stand", "walk_0", "walk_1", "walk_2", "walk_3"]
    bvh = "clip.bvh"            # optional
    bvh_frames = [0, 4]
    joint_map = { Hips = "pelvis" }

    [options.gamma]
    mode = "uniform"            # fixed(value) | uniform(lo, hi) | choice(values) | profile
    lo = 0.8
    hi = 1.2

Options left out keep the base settings in :data:`BASE_OPTIONS`.  Relative
paths are resolved against the config file's directory.
"""
from __future__ import annotations

import dataclasses
import hashlib
import json
import math
import os
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, Mapping, Optional, Tuple

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .bvh import DEFAULT_JOINT_MAP
from .imageproc import DEFAULT_BETA
from .scene_model import BUILTIN_POSE_NAMES, MASK64, OptionKey, option_key

SEED_ENV = "TAGFORGE_SEED"
MODES = ("fixed", "uniform", "choice", "profile")
# options whose value is drawn through an OptionMode
MODE_KEYS = tuple(k for k in OptionKey if k.is_scalar and k is not OptionKey.camera_id)


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class OptionMode:
    mode: str
    value: Optional[float] = None
    lo: Optional[float] = None
    hi: Optional[float] = None
    values: Tuple[float, ...] = ()

    @classmethod
    def fixed(cls, v):
        return cls("fixed", value=v)

    @classmethod
    def uniform(cls, lo, hi):
        return cls("uniform", lo=lo, hi=hi)

    @classmethod
    def choice(cls, values):
        return cls("choice", values=tuple(values))

    @classmethod
    def profile(cls):
        return cls("profile")

    def validate(self, key: OptionKey) -> None:
        spec = key.spec
        name = key.value

        def check(v, what):
            if not isinstance(v, (int, float)) or isinstance(v, bool):
                raise ConfigError(f"{name}: {what} must be a number")
            if spec.kind == "int" and float(v) != int(v):
                raise ConfigError(f"{name}: {what} must be an integer")
            if not spec.contains(float(v)):
                raise ConfigError(f"{name}: {what}={v} outside {spec.describe()}")

        if self.mode == "fixed":
            check(self.value, "value")
        elif self.mode == "uniform":
            check(self.lo, "lo")
            if spec.hi_open and self.hi == spec.hi:
                pass  # uniform draws never reach hi
            else:
                check(self.hi, "hi")
            if not self.lo <= self.hi:
                raise ConfigError(f"{name}: lo must not exceed hi")
        elif self.mode == "choice":
            if not self.values:
                raise ConfigError(f"{name}: choice needs a non-empty 'values' list")
            for v in self.values:
                check(v, "choice value")
        elif self.mode != "profile":
            raise ConfigError(f"{name}: unknown mode {self.mode!r} (expected one of {', '.join(MODES)})")


BASE_OPTIONS: Dict[OptionKey, OptionMode] = {
    OptionKey.camera_azimuth_deg: OptionMode.uniform(0.0, 360.0),
    OptionKey.camera_depression_deg: OptionMode.uniform(0.0, 30.0),
    OptionKey.camera_distance_m: OptionMode.uniform(2.4, 2.6),
    OptionKey.light_azimuth_deg: OptionMode.uniform(0.0, 360.0),
    OptionKey.light_elevation_deg: OptionMode.uniform(15.0, 75.0),
    OptionKey.light_intensity: OptionMode.uniform(0.5, 1.2),
    OptionKey.ambient: OptionMode.uniform(0.2, 0.4),
    OptionKey.gamma: OptionMode.uniform(0.8, 1.2),
    OptionKey.working_height_px: OptionMode.uniform(64, 256),
}
DEFAULT_POSES = ("stand", "walk_0", "walk_1", "walk_2", "walk_3")


@dataclass(frozen=True)
class BackgroundSource:
    source: str = "procedural"          # procedural | plain | directory path
    count: int = 24
    seed: int = 0
    crop_manifest: Optional[str] = None

    def load(self):
        from .imageproc import load_corpus, plain_corpus, procedural_corpus
        if self.source == "procedural":
            return procedural_corpus(self.count, self.seed)
        if self.source == "plain":
            return plain_corpus()
        return load_corpus(self.source, self.crop_manifest, self.seed)


@dataclass(frozen=True)
class GenerationConfig:
    seed: int = 0
    num_identities: int = 64
    images_per_identity: int = 8
    num_cameras: int = 6
    beta: float = DEFAULT_BETA
    identity_offset: int = 0
    backgrounds: BackgroundSource = BackgroundSource()
    poses: Tuple[str, ...] = DEFAULT_POSES
    joint_map: Tuple[Tuple[str, str], ...] = tuple(DEFAULT_JOINT_MAP.items())
    options: Mapping[OptionKey, OptionMode] = field(default_factory=lambda: dict(BASE_OPTIONS))

    def __post_init__(self):
        opts = dict(BASE_OPTIONS)
        opts.update({OptionKey(k): v for k, v in self.options.items()})
        object.__setattr__(self, "options", opts)
        self.validate()

    def validate(self) -> None:
        if not 0 <= self.seed <= MASK64:
            raise ConfigError("seed must be a 64-bit unsigned integer")
        for name in ("num_identities", "images_per_identity", "num_cameras"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        if self.identity_offset < 0:
            raise ConfigError("identity_offset must be >= 0")
        if not 0.0 <= self.beta <= 0.5:
            raise ConfigError("beta must be in [0, 0.5]")
        if not self.poses:
            raise ConfigError("at least one pose is required")
        from .scene_model import parse_pose_ref
        for p in self.poses:
            try:
                parse_pose_ref(p)
            except ValueError as e:
                raise ConfigError(str(e)) from None
        for key, mode in self.options.items():
            if key not in MODE_KEYS:
                raise ConfigError(f"option {key.value} cannot be configured by mode")
            mode.validate(key)

    def replace(self, **changes) -> "GenerationConfig":
        return dataclasses.replace(self, **changes)

    def with_option(self, key, mode: OptionMode) -> "GenerationConfig":
        opts = dict(self.options)
        opts[OptionKey(key)] = mode
        return self.replace(options=opts)

    def profile_keys(self):
        return [k for k, m in self.options.items() if m.mode == "profile"]

    def to_dict(self) -> Dict[str, Any]:
        d = dataclasses.asdict(self)
        d["options"] = {k.value: dataclasses.asdict(m) for k, m in self.options.items()}
        d["poses"] = list(self.poses)
        d["joint_map"] = dict(self.joint_map)
        return d

    def digest(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, default=list).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


_TOP_KEYS = {"seed", "num_identities", "images_per_identity", "num_cameras", "beta", "identity_offset",
             "backgrounds", "poses", "options"}


def _mode_from_table(name: str, table: Mapping[str, Any]) -> OptionMode:
    mode = table.get("mode")
    allowed = {"fixed": {"value"}, "uniform": {"lo", "hi"}, "choice": {"values"}, "profile": set()}
    if mode not in allowed:
        raise ConfigError(f"options.{name}: mode must be one of {', '.join(MODES)}")
    extra = set(table) - allowed[mode] - {"mode"}
    missing = allowed[mode] - set(table)
    if extra:
        raise ConfigError(f"options.{name}: unexpected keys {', '.join(sorted(extra))} for mode {mode}")
    if missing:
        raise ConfigError(f"options.{name}: mode {mode} needs {', '.join(sorted(missing))}")
    if mode == "choice":
        return OptionMode.choice(table["values"])
    return OptionMode(mode, **{k: table[k] for k in allowed[mode]})


def config_from_dict(data: Mapping[str, Any], base_dir: Optional[Path] = None) -> GenerationConfig:
    unknown = set(data) - _TOP_KEYS
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(sorted(unknown))}")
    kw: Dict[str, Any] = {k: data[k] for k in _TOP_KEYS - {"backgrounds", "poses", "options"} if k in data}
    base_dir = base_dir or Path(".")

    bg = dict(data.get("backgrounds", {}))
    bad = set(bg) - {"source", "count", "seed", "crop_manifest"}
    if bad:
        raise ConfigError(f"backgrounds: unknown keys {', '.join(sorted(bad))}")
    src = bg.get("source", "procedural")
    if src not in ("procedural", "plain"):
        src = str((base_dir / src).resolve())
    crop = bg.get("crop_manifest")
    if crop is not None:
        crop = str((base_dir / crop).resolve())
    kw["backgrounds"] = BackgroundSource(src, int(bg.get("count", 24)), int(bg.get("seed", 0)), crop)

    poses_t = dict(data.get("poses", {}))
    bad = set(poses_t) - {"builtin", "bvh", "bvh_frames", "joint_map"}
    if bad:
        raise ConfigError(f"poses: unknown keys {', '.join(sorted(bad))}")
    poses = list(poses_t.get("builtin", DEFAULT_POSES if "bvh" not in poses_t else []))
    for name in poses:
        if name not in BUILTIN_POSE_NAMES:
            raise ConfigError(f"poses: unknown pose {name!r}")
    if "bvh" in poses_t:
        path = str((base_dir / poses_t["bvh"]).resolve())
        frames = poses_t.get("bvh_frames", [0])
        poses += [f"bvh:{path}#{int(f)}" for f in frames]
    elif "bvh_frames" in poses_t:
        raise ConfigError("poses: bvh_frames given without bvh")
    kw["poses"] = tuple(poses)
    if "joint_map" in poses_t:
        kw["joint_map"] = tuple(poses_t["joint_map"].items())

    options = {}
    for name, table in dict(data.get("options", {})).items():
        try:
            key = option_key(name)
        except ValueError as e:
            raise ConfigError(str(e)) from None
        if not isinstance(table, Mapping):
            raise ConfigError(f"options.{name} must be a table")
        options[key] = _mode_from_table(name, table)
    kw["options"] = options
    try:
        return GenerationConfig(**kw)
    except TypeError as e:
        raise ConfigError(str(e)) from None


def load_config(path, env: Optional[Mapping[str, str]] = None) -> GenerationConfig:
    """Read a TOML config; ``TAGFORGE_SEED`` in ``env`` (default os.environ) overrides the seed."""
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    try:
        data = tomllib.loads(path.read_text())
    except tomllib.TOMLDecodeError as e:
        raise ConfigError(f"{path}: {e}") from None
    cfg = config_from_dict(data, path.parent)
    return apply_seed_override(cfg, env)


def apply_seed_override(cfg: GenerationConfig, env: Optional[Mapping[str, str]] = None) -> GenerationConfig:
    env = os.environ if env is None else env
    raw = env.get(SEED_ENV)
    if raw:
        try:
            seed = int(raw)
        except ValueError:
            raise ConfigError(f"{SEED_ENV} must be an integer, got {raw!r}") from None
        cfg = cfg.replace(seed=seed)
    return cfg
