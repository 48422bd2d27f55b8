"""Identity and rendering-option data model.

A generated image is fully described by two independent records: a
:class:`PersonSpec` (who is in the picture) and a :class:`RenderOptions`
(how the picture was taken).  Both are immutable and serialize to a flat
``key=value`` text form that is shared by manifests and profiles.

Angles are degrees everywhere.  Euler triples are stored in ZXY order,
i.e. ``(rz, rx, ry)`` with the rotation matrix ``Rz @ Rx @ Ry``.
"""
from __future__ import annotations

import dataclasses
import enum
import math
import re
from dataclasses import dataclass
from typing import Dict, Iterable, Mapping, Tuple

MASK64 = (1 << 64) - 1

RGB = Tuple[float, float, float]


# ---------------------------------------------------------------------------
# seeded derivation
# ---------------------------------------------------------------------------

def _splitmix_step(state: int) -> Tuple[int, int]:
    state = (state + 0x9E3779B97F4A7C15) & MASK64
    z = state
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return state, z ^ (z >> 31)


def seed_hash(*parts: int) -> int:
    """Mix any number of integers into one 64-bit value."""
    state = 0x243F6A8885A308D3
    for p in parts:
        state, out = _splitmix_step(state ^ (int(p) & MASK64))
        state = out
    return state


class SplitMix64:
    """Tiny counter-based generator; bit-exact on every platform."""

    def __init__(self, seed: int):
        self.state = int(seed) & MASK64

    def next_u64(self) -> int:
        self.state, out = _splitmix_step(self.state)
        return out

    def random(self) -> float:
        # 53 random mantissa bits -> [0, 1)
        return (self.next_u64() >> 11) * (1.0 / (1 << 53))

    def uniform(self, lo: float, hi: float) -> float:
        return lo + (hi - lo) * self.random()

    def choice(self, seq):
        return seq[self.next_u64() % len(seq)]


# ---------------------------------------------------------------------------
# PersonSpec
# ---------------------------------------------------------------------------

class Pattern(str, enum.Enum):
    solid = "solid"
    stripes = "stripes"
    checker = "checker"


STATURE_RANGE = (1.45, 1.95)
LIMB_SCALE_RANGE = (0.85, 1.15)
BULK_SCALE_RANGE = (0.85, 1.2)
PATTERN_SCALE_RANGE = (0.04, 0.15)

_SKIN_TONES = (
    (0.95, 0.80, 0.69),
    (0.87, 0.67, 0.53),
    (0.72, 0.52, 0.38),
    (0.55, 0.37, 0.25),
    (0.36, 0.23, 0.15),
)
_COLOR_FIELDS = ("skin_rgb", "hair_rgb", "torso_rgb", "legs_rgb", "shoes_rgb", "pattern_rgb")


@dataclass(frozen=True)
class PersonSpec:
    identity_id: int
    seed: int
    stature_m: float
    limb_scale: float
    bulk_scale: float
    skin_rgb: RGB
    hair_rgb: RGB
    torso_rgb: RGB
    legs_rgb: RGB
    shoes_rgb: RGB
    torso_pattern: Pattern
    pattern_rgb: RGB
    pattern_scale: float

    def __post_init__(self):
        if self.identity_id < 0:
            raise ValueError("identity_id must be non-negative")
        if not 0 <= self.seed <= MASK64:
            raise ValueError("seed must be a 64-bit unsigned integer")
        for name, (lo, hi) in (("stature_m", STATURE_RANGE), ("limb_scale", LIMB_SCALE_RANGE),
                               ("bulk_scale", BULK_SCALE_RANGE), ("pattern_scale", PATTERN_SCALE_RANGE)):
            v = getattr(self, name)
            if not lo <= v <= hi:
                raise ValueError(f"{name}={v} outside [{lo}, {hi}]")
        for name in _COLOR_FIELDS:
            rgb = getattr(self, name)
            if len(rgb) != 3 or not all(0.0 <= c <= 1.0 for c in rgb):
                raise ValueError(f"{name} must be an RGB triple in [0,1]")
        object.__setattr__(self, "torso_pattern", Pattern(self.torso_pattern))

    def to_record(self) -> Dict[str, str]:
        out = {}
        for f in dataclasses.fields(self):
            v = getattr(self, f.name)
            if isinstance(v, tuple):
                out[f.name] = " ".join(repr(float(c)) for c in v)
            elif isinstance(v, Pattern):
                out[f.name] = v.value
            else:
                out[f.name] = repr(v)
        return out

    @classmethod
    def from_record(cls, rec: Mapping[str, str]) -> "PersonSpec":
        kw = {}
        for f in dataclasses.fields(cls):
            raw = rec[f.name]
            if f.name in _COLOR_FIELDS:
                kw[f.name] = tuple(float(c) for c in raw.split())
            elif f.name in ("identity_id", "seed"):
                kw[f.name] = int(raw)
            elif f.name == "torso_pattern":
                kw[f.name] = Pattern(raw)
            else:
                kw[f.name] = float(raw)
        return cls(**kw)

    def to_text(self) -> str:
        return dump_kv(self.to_record())

    @classmethod
    def from_text(cls, text: str) -> "PersonSpec":
        return cls.from_record(parse_kv(text))


def _rand_rgb(rng: SplitMix64, lo: float = 0.0, hi: float = 1.0) -> RGB:
    return (rng.uniform(lo, hi), rng.uniform(lo, hi), rng.uniform(lo, hi))


def derive_person_spec(seed: int, identity_id: int) -> PersonSpec:
    """Deterministically derive the appearance of one identity."""
    seed = int(seed) & MASK64
    rng = SplitMix64(seed_hash(seed, identity_id, 0x5045_5253))
    stature = rng.uniform(*STATURE_RANGE)
    limb = rng.uniform(*LIMB_SCALE_RANGE)
    bulk = rng.uniform(*BULK_SCALE_RANGE)

    # skin: blend of two neighbouring tones plus a small per-channel jitter
    t = rng.uniform(0.0, len(_SKIN_TONES) - 1)
    i = min(int(t), len(_SKIN_TONES) - 2)
    a, b, w = _SKIN_TONES[i], _SKIN_TONES[i + 1], t - i
    skin = tuple(min(1.0, max(0.0, (1 - w) * ca + w * cb + rng.uniform(-0.03, 0.03)))
                 for ca, cb in zip(a, b))

    hair_v = rng.uniform(0.03, 0.6)
    hair = (hair_v * rng.uniform(0.8, 1.25), hair_v * rng.uniform(0.7, 1.0), hair_v * rng.uniform(0.5, 0.9))
    hair = tuple(min(1.0, c) for c in hair)
    torso = _rand_rgb(rng, 0.04, 0.96)
    legs = _rand_rgb(rng, 0.04, 0.9)
    shoes = _rand_rgb(rng, 0.02, 0.7)
    pattern = (Pattern.solid, Pattern.stripes, Pattern.checker)[rng.next_u64() % 3]
    pattern_rgb = _rand_rgb(rng, 0.04, 0.96)
    pattern_scale = rng.uniform(*PATTERN_SCALE_RANGE)
    return PersonSpec(identity_id=int(identity_id), seed=seed, stature_m=stature, limb_scale=limb,
                      bulk_scale=bulk, skin_rgb=skin, hair_rgb=hair, torso_rgb=torso, legs_rgb=legs,
                      shoes_rgb=shoes, torso_pattern=pattern, pattern_rgb=pattern_rgb,
                      pattern_scale=pattern_scale)


# ---------------------------------------------------------------------------
# Pose
# ---------------------------------------------------------------------------

JOINTS = ("pelvis", "spine", "neck", "head",
          "l_shoulder", "r_shoulder", "l_elbow", "r_elbow",
          "l_hip", "r_hip", "l_knee", "r_knee")

Euler = Tuple[float, float, float]


@dataclass(frozen=True)
class Pose:
    """Joint rotations relative to the rest skeleton, ZXY Euler degrees.

    The rest skeleton stands upright facing +z with arms hanging along -y;
    the person's left side is +x.
    """
    angles: Tuple[Euler, ...]

    def __post_init__(self):
        if len(self.angles) != len(JOINTS):
            raise ValueError(f"pose needs {len(JOINTS)} joints, got {len(self.angles)}")
        clean = []
        for name, triple in zip(JOINTS, self.angles):
            triple = tuple(float(v) for v in triple)
            if len(triple) != 3 or not all(math.isfinite(v) and abs(v) <= 180.0 for v in triple):
                raise ValueError(f"bad rotation for joint {name}: {triple}")
            clean.append(triple)
        object.__setattr__(self, "angles", tuple(clean))

    @classmethod
    def from_mapping(cls, rotations: Mapping[str, Iterable[float]]) -> "Pose":
        missing = [j for j in JOINTS if j not in rotations]
        if missing:
            raise ValueError(f"pose is missing joints: {', '.join(missing)}")
        extra = sorted(set(rotations) - set(JOINTS))
        if extra:
            raise ValueError(f"unknown joints: {', '.join(extra)}")
        return cls(tuple(tuple(rotations[j]) for j in JOINTS))

    def __getitem__(self, joint: str) -> Euler:
        return self.angles[JOINTS.index(joint)]

    def as_dict(self) -> Dict[str, Euler]:
        return dict(zip(JOINTS, self.angles))

    def replace(self, **rotations: Euler) -> "Pose":
        d = self.as_dict()
        d.update(rotations)
        return Pose.from_mapping(d)


def _sym(l_shoulder=(0, 0, 0), l_elbow=(0, 0, 0), l_hip=(0, 0, 0), l_knee=(0, 0, 0),
         r_shoulder=None, r_elbow=None, r_hip=None, r_knee=None, **axial) -> Dict[str, Euler]:
    """Build a rotation table; right-side joints default to the mirror of the left.

    Mirroring across the sagittal plane negates the z and y components.
    """
    def mirror(e):
        return (-e[0], e[1], -e[2])

    table = {j: (0.0, 0.0, 0.0) for j in JOINTS}
    table.update({k: tuple(v) for k, v in axial.items()})
    table["l_shoulder"], table["l_elbow"], table["l_hip"], table["l_knee"] = l_shoulder, l_elbow, l_hip, l_knee
    table["r_shoulder"] = r_shoulder if r_shoulder is not None else mirror(l_shoulder)
    table["r_elbow"] = r_elbow if r_elbow is not None else mirror(l_elbow)
    table["r_hip"] = r_hip if r_hip is not None else mirror(l_hip)
    table["r_knee"] = r_knee if r_knee is not None else mirror(l_knee)
    return table


# Flexion that swings a limb forward (+z) is a negative x rotation; knees bend with positive x.
_BUILTIN_POSES: Dict[str, Dict[str, Euler]] = {
    "t_pose": _sym(l_shoulder=(90.0, 0.0, 0.0)),
    "stand": _sym(l_shoulder=(6.0, 0.0, 0.0), l_elbow=(0.0, -8.0, 0.0)),
    "walk_0": _sym(l_shoulder=(6.0, 18.0, 0.0), l_elbow=(0.0, -10.0, 0.0), l_hip=(0.0, -24.0, 0.0),
                   l_knee=(0.0, 6.0, 0.0),
                   r_shoulder=(-6.0, -20.0, 0.0), r_elbow=(0.0, -22.0, 0.0), r_hip=(0.0, 18.0, 0.0),
                   r_knee=(0.0, 20.0, 0.0)),
    "walk_1": _sym(l_shoulder=(6.0, 4.0, 0.0), l_elbow=(0.0, -12.0, 0.0), l_hip=(0.0, -4.0, 0.0),
                   l_knee=(0.0, 4.0, 0.0),
                   r_shoulder=(-6.0, -4.0, 0.0), r_elbow=(0.0, -14.0, 0.0), r_hip=(0.0, -14.0, 0.0),
                   r_knee=(0.0, 42.0, 0.0)),
    "walk_2": _sym(l_shoulder=(6.0, -20.0, 0.0), l_elbow=(0.0, -22.0, 0.0), l_hip=(0.0, 18.0, 0.0),
                   l_knee=(0.0, 20.0, 0.0),
                   r_shoulder=(-6.0, 18.0, 0.0), r_elbow=(0.0, -10.0, 0.0), r_hip=(0.0, -24.0, 0.0),
                   r_knee=(0.0, 6.0, 0.0)),
    "walk_3": _sym(l_shoulder=(6.0, -4.0, 0.0), l_elbow=(0.0, -14.0, 0.0), l_hip=(0.0, -14.0, 0.0),
                   l_knee=(0.0, 42.0, 0.0),
                   r_shoulder=(-6.0, 4.0, 0.0), r_elbow=(0.0, -12.0, 0.0), r_hip=(0.0, -4.0, 0.0),
                   r_knee=(0.0, 4.0, 0.0)),
}
BUILTIN_POSE_NAMES = tuple(_BUILTIN_POSES)


def builtin_pose(name: str) -> Pose:
    try:
        table = _BUILTIN_POSES[name]
    except KeyError:
        raise ValueError(f"unknown pose: {name!r}") from None
    return Pose.from_mapping(table)


# ---------------------------------------------------------------------------
# RenderOptions
# ---------------------------------------------------------------------------

class OptionKey(str, enum.Enum):
    pose = "pose"
    camera_azimuth_deg = "camera_azimuth_deg"
    camera_depression_deg = "camera_depression_deg"
    camera_distance_m = "camera_distance_m"
    light_azimuth_deg = "light_azimuth_deg"
    light_elevation_deg = "light_elevation_deg"
    light_intensity = "light_intensity"
    ambient = "ambient"
    background_ref = "background_ref"
    camera_id = "camera_id"
    gamma = "gamma"
    working_height_px = "working_height_px"

    @property
    def spec(self) -> "OptionSpec":
        return OPTION_SPECS[self]

    @property
    def is_scalar(self) -> bool:
        return self.spec.kind in ("real", "int")


@dataclass(frozen=True)
class OptionSpec:
    kind: str              # real | int | pose | background
    lo: float = -math.inf
    hi: float = math.inf
    hi_open: bool = False  # True for periodic angles: [lo, hi)

    def contains(self, v: float) -> bool:
        if not math.isfinite(v):
            return False
        if self.hi_open:
            return self.lo <= v < self.hi
        return self.lo <= v <= self.hi

    @property
    def width(self) -> float:
        return self.hi - self.lo

    def describe(self) -> str:
        close = ")" if self.hi_open else "]"
        return f"[{self.lo:g}, {self.hi:g}{close}"


OPTION_SPECS: Dict[OptionKey, OptionSpec] = {
    OptionKey.pose: OptionSpec("pose"),
    OptionKey.camera_azimuth_deg: OptionSpec("real", 0.0, 360.0, hi_open=True),
    OptionKey.camera_depression_deg: OptionSpec("real", -10.0, 80.0),
    OptionKey.camera_distance_m: OptionSpec("real", 2.0, 12.0),
    OptionKey.light_azimuth_deg: OptionSpec("real", 0.0, 360.0, hi_open=True),
    OptionKey.light_elevation_deg: OptionSpec("real", 0.0, 90.0),
    OptionKey.light_intensity: OptionSpec("real", 0.3, 1.6),
    OptionKey.ambient: OptionSpec("real", 0.1, 0.5),
    OptionKey.background_ref: OptionSpec("background"),
    OptionKey.camera_id: OptionSpec("int", 1, math.inf),
    OptionKey.gamma: OptionSpec("real", 0.4, 2.5),
    OptionKey.working_height_px: OptionSpec("int", 32, 256),
}

SCALAR_KEYS = tuple(k for k in OptionKey if k.is_scalar)


def option_key(name: str) -> OptionKey:
    try:
        return OptionKey(name)
    except ValueError:
        raise ValueError(f"unknown option key: {name!r}") from None


@dataclass(frozen=True)
class BackgroundRef:
    image_id: str
    x: int
    y: int
    w: int
    h: int

    def __post_init__(self):
        if not self.image_id or any(c in self.image_id for c in "\n\r"):
            raise ValueError("background image id must be a non-empty single-line string")
        if self.x < 0 or self.y < 0 or self.w < 1 or self.h < 1:
            raise ValueError(f"bad crop rectangle {self.x},{self.y},{self.w},{self.h}")

    def __str__(self) -> str:
        return f"{self.image_id}:{self.x}:{self.y}:{self.w}:{self.h}"

    @classmethod
    def parse(cls, text: str) -> "BackgroundRef":
        parts = text.rsplit(":", 4)
        if len(parts) != 5:
            raise ValueError(f"malformed background_ref {text!r}")
        return cls(parts[0], *(int(p) for p in parts[1:]))


_BVH_POSE_RE = re.compile(r"^bvh:(?P<path>.+)#(?P<frame>\d+)$")


def parse_pose_ref(ref: str) -> Tuple[str, str, int]:
    """Split a pose reference into ``("builtin", name, -1)`` or ``("bvh", path, frame)``."""
    if ref in _BUILTIN_POSES:
        return "builtin", ref, -1
    m = _BVH_POSE_RE.match(ref)
    if m:
        return "bvh", m.group("path"), int(m.group("frame"))
    raise ValueError(f"unknown pose: {ref!r}")


@dataclass(frozen=True)
class RenderOptions:
    pose: str
    camera_azimuth_deg: float
    camera_depression_deg: float
    camera_distance_m: float
    light_azimuth_deg: float
    light_elevation_deg: float
    light_intensity: float
    ambient: float
    background_ref: BackgroundRef
    camera_id: int
    gamma: float
    working_height_px: int

    def __post_init__(self):
        parse_pose_ref(self.pose)
        if isinstance(self.background_ref, str):
            object.__setattr__(self, "background_ref", BackgroundRef.parse(self.background_ref))
        for key in SCALAR_KEYS:
            v = getattr(self, key.value)
            if key.spec.kind == "int":
                if isinstance(v, float):
                    if not v.is_integer():
                        raise ValueError(f"{key.value} must be an integer, got {v}")
                    object.__setattr__(self, key.value, int(v))
                    v = int(v)
            else:
                object.__setattr__(self, key.value, float(v))
                v = float(v)
            if not key.spec.contains(v):
                raise ValueError(f"{key.value}={v} outside {key.spec.describe()}")

    def value(self, key: OptionKey):
        return getattr(self, OptionKey(key).value)

    def replace(self, **changes) -> "RenderOptions":
        return dataclasses.replace(self, **changes)

    def to_record(self) -> Dict[str, str]:
        out = {}
        for key in OptionKey:
            v = getattr(self, key.value)
            out[key.value] = repr(v) if isinstance(v, float) else str(v)
        return out

    @classmethod
    def from_record(cls, rec: Mapping[str, str]) -> "RenderOptions":
        kw = {}
        for key in OptionKey:
            if key.value not in rec:
                raise ValueError(f"missing option {key.value}")
            raw = rec[key.value]
            kind = key.spec.kind
            if kind == "real":
                kw[key.value] = float(raw)
            elif kind == "int":
                kw[key.value] = int(raw)
            elif kind == "background":
                kw[key.value] = BackgroundRef.parse(raw)
            else:
                kw[key.value] = raw
        return cls(**kw)

    def to_text(self) -> str:
        return dump_kv(self.to_record())

    @classmethod
    def from_text(cls, text: str) -> "RenderOptions":
        return cls.from_record(parse_kv(text))


def _check_option_mapping() -> None:
    fields = [f.name for f in dataclasses.fields(RenderOptions)]
    keys = [k.value for k in OptionKey]
    assert sorted(fields) == sorted(keys) and len(set(keys)) == len(keys), "OptionKey/RenderOptions mismatch"


_check_option_mapping()


# ---------------------------------------------------------------------------
# key=value text form
# ---------------------------------------------------------------------------

def dump_kv(record: Mapping[str, str]) -> str:
    return "".join(f"{k}={v}\n" for k, v in record.items())


def parse_kv(text: str) -> Dict[str, str]:
    out = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ValueError(f"line {lineno}: expected key=value")
        k, v = line.split("=", 1)
        k = k.strip()
        if k in out:
            raise ValueError(f"line {lineno}: duplicate key {k!r}")
        out[k] = v.strip()
    return out
