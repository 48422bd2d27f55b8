"""BVH motion-capture reader/writer and frame-to-pose mapping.

Only two channel layouts are accepted: three rotations (any order), or
three positions plus three rotations.  Rotation channels are interpreted
as intrinsic rotations in the order written and converted to the ZXY
convention used by :class:`tagforge.scene_model.Pose`.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from importlib import resources
from typing import Dict, Iterator, List, Mapping, Optional, Tuple, Union

from scipy.spatial.transform import Rotation

from .scene_model import JOINTS, Pose, builtin_pose

POSITION_CHANNELS = frozenset({"Xposition", "Yposition", "Zposition"})
ROTATION_CHANNELS = frozenset({"Zrotation", "Xrotation", "Yrotation"})

# joint names used by the bundled sample clip (CMU-style naming)
DEFAULT_JOINT_MAP = {
    "Hips": "pelvis", "Spine": "spine", "Neck": "neck", "Head": "head",
    "LeftArm": "l_shoulder", "LeftForeArm": "l_elbow",
    "RightArm": "r_shoulder", "RightForeArm": "r_elbow",
    "LeftUpLeg": "l_hip", "LeftLeg": "l_knee",
    "RightUpLeg": "r_hip", "RightLeg": "r_knee",
}


class BvhParseError(ValueError):
    def __init__(self, message: str, line: Optional[int] = None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line is not None else message)


@dataclass(frozen=True)
class BvhJoint:
    name: str
    offset: Tuple[float, float, float]
    channels: Tuple[str, ...]
    children: Tuple["BvhJoint", ...] = ()
    end_site: Optional[Tuple[float, float, float]] = None

    def walk(self) -> Iterator["BvhJoint"]:
        yield self
        for c in self.children:
            yield from c.walk()


@dataclass(frozen=True)
class BvhDocument:
    root: BvhJoint
    frame_time_s: float
    frames: Tuple[Tuple[float, ...], ...]

    @property
    def frame_count(self) -> int:
        return len(self.frames)

    @property
    def joints(self) -> List[BvhJoint]:
        return list(self.root.walk())

    @property
    def channel_count(self) -> int:
        return sum(len(j.channels) for j in self.root.walk())

    def channel_offsets(self) -> Dict[str, int]:
        """Index of each joint's first channel within a frame row."""
        out, i = {}, 0
        for j in self.root.walk():
            out[j.name] = i
            i += len(j.channels)
        return out


# ---------------------------------------------------------------------------
# parsing
# ---------------------------------------------------------------------------

class _Tokens:
    def __init__(self, lines: List[str]):
        self.toks: List[Tuple[str, int]] = []
        self.lines = lines
        self.pos = 0

    def peek(self) -> Optional[str]:
        return self.toks[self.pos][0] if self.pos < len(self.toks) else None

    def line(self) -> int:
        if self.pos < len(self.toks):
            return self.toks[self.pos][1]
        return self.toks[-1][1] if self.toks else 1

    def next(self, what: str = "token") -> str:
        if self.pos >= len(self.toks):
            raise BvhParseError(f"unexpected end of input, expected {what}", self.line())
        tok = self.toks[self.pos][0]
        self.pos += 1
        return tok

    def expect(self, word: str) -> None:
        line = self.line()
        tok = self.next(repr(word))
        if tok != word:
            raise BvhParseError(f"expected {word!r}, got {tok!r}", line)


def _number(tok: str, line: int) -> float:
    try:
        v = float(tok)
    except ValueError:
        raise BvhParseError(f"non-numeric value {tok!r}", line) from None
    if not math.isfinite(v):
        raise BvhParseError(f"non-finite value {tok!r}", line)
    return v


def _offset(t: _Tokens) -> Tuple[float, float, float]:
    t.expect("OFFSET")
    vals = []
    for _ in range(3):
        line = t.line()
        vals.append(_number(t.next("offset value"), line))
    return tuple(vals)


def _channels(t: _Tokens) -> Tuple[str, ...]:
    line = t.line()
    t.expect("CHANNELS")
    count_tok = t.next("channel count")
    if count_tok not in ("3", "6"):
        raise BvhParseError(f"unsupported channel count {count_tok!r}", line)
    chans = tuple(t.next("channel name") for _ in range(int(count_tok)))
    allowed = ROTATION_CHANNELS if len(chans) == 3 else POSITION_CHANNELS | ROTATION_CHANNELS
    if set(chans) != allowed:
        raise BvhParseError(f"unsupported channel set {' '.join(chans)}", line)
    return chans


def _joint(t: _Tokens, name: str) -> BvhJoint:
    t.expect("{")
    offset = _offset(t)
    channels = _channels(t)
    children: List[BvhJoint] = []
    end_site = None
    while True:
        line = t.line()
        tok = t.next("'}'")
        if tok == "}":
            break
        if tok == "JOINT":
            children.append(_joint(t, t.next("joint name")))
        elif tok == "End":
            t.expect("Site")
            t.expect("{")
            if end_site is not None:
                raise BvhParseError("duplicate End Site", line)
            end_site = _offset(t)
            t.expect("}")
        else:
            raise BvhParseError(f"unexpected token {tok!r}", line)
    return BvhJoint(name, offset, channels, tuple(children), end_site)


def parse_bvh(text: Union[str, bytes]) -> BvhDocument:
    """Parse BVH text. Any malformed input raises :class:`BvhParseError`."""
    if isinstance(text, (bytes, bytearray)):
        try:
            text = bytes(text).decode("utf-8")
        except UnicodeDecodeError as e:
            raise BvhParseError(f"input is not valid UTF-8 ({e.reason})") from None
    lines = text.splitlines()
    motion_line = None
    for i, line in enumerate(lines):
        if line.strip() == "MOTION":
            motion_line = i
            break

    head = lines if motion_line is None else lines[:motion_line]
    t = _Tokens(lines)
    for lineno, line in enumerate(head, 1):
        t.toks.extend((tok, lineno) for tok in line.split())
    if not t.toks or t.toks[0][0] != "HIERARCHY":
        raise BvhParseError("missing HIERARCHY", t.toks[0][1] if t.toks else 1)
    t.pos = 1
    t.expect("ROOT")
    try:
        root = _joint(t, t.next("root name"))
    except RecursionError:
        raise BvhParseError("joint hierarchy too deep", t.line()) from None
    if t.peek() is not None:
        hint = "missing MOTION, " if motion_line is None else ""
        raise BvhParseError(f"{hint}unexpected token {t.peek()!r} after hierarchy", t.line())
    if motion_line is None:
        raise BvhParseError("missing MOTION", len(lines) or 1)

    names = [j.name for j in root.walk()]
    if len(set(names)) != len(names):
        raise BvhParseError("duplicate joint names")
    n_channels = sum(len(j.channels) for j in root.walk())

    body = [(i + 1, ln.split()) for i, ln in enumerate(lines) if i > motion_line and ln.strip()]
    if len(body) < 2:
        raise BvhParseError("missing Frames/Frame Time header", motion_line + 1)
    (fl, ftoks), (tl, ttoks) = body[0], body[1]
    if len(ftoks) != 2 or ftoks[0] != "Frames:":
        raise BvhParseError("expected 'Frames: <count>'", fl)
    try:
        frame_count = int(ftoks[1])
    except ValueError:
        raise BvhParseError(f"bad frame count {ftoks[1]!r}", fl) from None
    if frame_count < 1:
        raise BvhParseError("frame count must be >= 1", fl)
    if len(ttoks) != 3 or ttoks[:2] != ["Frame", "Time:"]:
        raise BvhParseError("expected 'Frame Time: <seconds>'", tl)
    frame_time = _number(ttoks[2], tl)
    if frame_time <= 0:
        raise BvhParseError("frame time must be positive", tl)

    rows = body[2:]
    frames = []
    for lineno, toks in rows:
        if len(toks) != n_channels:
            raise BvhParseError(f"frame row has {len(toks)} values, expected {n_channels}", lineno)
        frames.append(tuple(_number(tok, lineno) for tok in toks))
    if len(frames) != frame_count:
        raise BvhParseError(f"header declares {frame_count} frames, found {len(frames)}",
                            rows[-1][0] if rows else tl)
    return BvhDocument(root, frame_time, tuple(frames))


def load_bvh(path) -> BvhDocument:
    with open(path, "rb") as fh:
        return parse_bvh(fh.read())


def sample_bvh_text() -> str:
    """The short walking clip bundled with the package."""
    return resources.files("tagforge.data").joinpath("sample_walk.bvh").read_text()


# ---------------------------------------------------------------------------
# writing
# ---------------------------------------------------------------------------

def _fmt(v: float) -> str:
    return repr(float(v))


def _write_joint(j: BvhJoint, depth: int, out: List[str], keyword: str) -> None:
    pad = "\t" * depth
    out.append(f"{pad}{keyword} {j.name}")
    out.append(f"{pad}{{")
    out.append(f"{pad}\tOFFSET {' '.join(_fmt(v) for v in j.offset)}")
    out.append(f"{pad}\tCHANNELS {len(j.channels)} {' '.join(j.channels)}")
    for c in j.children:
        _write_joint(c, depth + 1, out, "JOINT")
    if j.end_site is not None:
        out.append(f"{pad}\tEnd Site")
        out.append(f"{pad}\t{{")
        out.append(f"{pad}\t\tOFFSET {' '.join(_fmt(v) for v in j.end_site)}")
        out.append(f"{pad}\t}}")
    out.append(f"{pad}}}")


def write_bvh(doc: BvhDocument) -> str:
    out = ["HIERARCHY"]
    _write_joint(doc.root, 0, out, "ROOT")
    out.append("MOTION")
    out.append(f"Frames: {doc.frame_count}")
    out.append(f"Frame Time: {_fmt(doc.frame_time_s)}")
    for row in doc.frames:
        out.append(" ".join(_fmt(v) for v in row))
    return "\n".join(out) + "\n"


# ---------------------------------------------------------------------------
# posing
# ---------------------------------------------------------------------------

def _wrap(v: float) -> float:
    if -180.0 <= v <= 180.0:
        return v
    return (v + 180.0) % 360.0 - 180.0


def _to_zxy(order: str, values: List[float]) -> Tuple[float, float, float]:
    if order == "ZXY":
        z, x, y = values
        return (_wrap(z), _wrap(x), _wrap(y))
    # uppercase axis string = intrinsic rotations, matching BVH semantics
    z, x, y = Rotation.from_euler(order, values, degrees=True).as_euler("ZXY", degrees=True)
    return (float(z), float(x), float(y))


def pose_from_frame(doc: BvhDocument, frame_index: int,
                    joint_map: Optional[Mapping[str, str]] = None) -> Pose:
    """Copy the rotation channels of one frame onto the humanoid joints.

    Humanoid joints that no BVH joint maps to keep their ``stand`` values.
    Root translation is ignored.
    """
    if joint_map is None:
        joint_map = DEFAULT_JOINT_MAP
    if not 0 <= frame_index < doc.frame_count:
        raise IndexError(f"frame {frame_index} out of range [0, {doc.frame_count})")
    by_name = {j.name: j for j in doc.root.walk()}
    absent = [n for n in joint_map if n not in by_name]
    if absent:
        raise KeyError(f"joint_map references joints absent from the BVH: {', '.join(absent)}")
    bad = sorted(set(joint_map.values()) - set(JOINTS))
    if bad:
        raise KeyError(f"joint_map targets unknown humanoid joints: {', '.join(bad)}")

    offsets = doc.channel_offsets()
    row = doc.frames[frame_index]
    rotations = builtin_pose("stand").as_dict()
    for bvh_name, joint in joint_map.items():
        j = by_name[bvh_name]
        start = offsets[bvh_name]
        rot = [(c[0], row[start + i]) for i, c in enumerate(j.channels) if c in ROTATION_CHANNELS]
        order = "".join(axis for axis, _ in rot)
        rotations[joint] = _to_zxy(order, [v for _, v in rot])
    return Pose.from_mapping(rotations)
