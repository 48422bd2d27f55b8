"""Empirical option distributions, Wasserstein-1 distance and Monte Carlo sampling.

Profile file grammar (UTF-8 text, ``#`` starts a comment line)::

    TAGFORGE-PROFILE 1
    <meta-name>: <value>          # any number, e.g. seed, created, estimator_version
    [<option_key>]                # one block per option
    source: <free text>
    n: <count>
    <value>                       # exactly <count> lines, one real each
    ...

Values are written with ``repr`` so a save/load round trip is exact.  The
file carries only per-image option estimates, never image content.
"""
from __future__ import annotations

import datetime as _dt
import math
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Mapping, Optional, Sequence

import numpy as np

from .scene_model import OptionKey, option_key

PROFILE_MAGIC = "TAGFORGE-PROFILE"
PROFILE_VERSION = 1
DEFAULT_BINS = 18


class ProfileError(ValueError):
    def __init__(self, message: str, path=None, line: Optional[int] = None):
        where = ":".join(str(p) for p in (path, line) if p is not None)
        super().__init__(f"{where}: {message}" if where else message)
        self.line = line


@dataclass(frozen=True)
class EmpiricalDistribution:
    option_key: OptionKey
    values: tuple
    source: str = ""

    def __post_init__(self):
        key = OptionKey(self.option_key)
        if not key.is_scalar:
            raise ValueError(f"{key.value} is not a scalar option")
        object.__setattr__(self, "option_key", key)
        values = tuple(float(v) for v in self.values)
        if not values:
            raise ValueError(f"empty distribution for {key.value}")
        for v in values:
            if not key.spec.contains(v):
                raise ValueError(f"{key.value} value {v} outside {key.spec.describe()}")
        object.__setattr__(self, "values", values)

    @property
    def n(self) -> int:
        return len(self.values)

    def array(self) -> np.ndarray:
        return np.asarray(self.values, dtype=np.float64)


@dataclass(frozen=True)
class TargetProfile:
    entries: Mapping[OptionKey, EmpiricalDistribution]
    metadata: Mapping[str, str] = field(default_factory=dict)

    def __post_init__(self):
        if not self.entries:
            raise ValueError("a profile needs at least one option")
        for key, dist in self.entries.items():
            if OptionKey(key) is not dist.option_key:
                raise ValueError(f"profile entry {key} holds a {dist.option_key.value} distribution")
        object.__setattr__(self, "entries", {OptionKey(k): v for k, v in self.entries.items()})
        object.__setattr__(self, "metadata", dict(self.metadata))

    def __getitem__(self, key) -> EmpiricalDistribution:
        return self.entries[OptionKey(key)]

    def __contains__(self, key) -> bool:
        return OptionKey(key) in self.entries

    def keys(self):
        return self.entries.keys()

    def merged(self, other: "TargetProfile") -> "TargetProfile":
        """Entries of ``other`` replace same-key entries of self."""
        entries = dict(self.entries)
        entries.update(other.entries)
        meta = dict(self.metadata)
        meta.update(other.metadata)
        return TargetProfile(entries, meta)


def build_distribution(est, images: Iterable[np.ndarray], source: str = "") -> EmpiricalDistribution:
    """Estimate the option value of every image, in input order."""
    values = []
    for i, img in enumerate(images):
        try:
            values.append(est.predict(img))
        except ValueError as e:
            raise ValueError(f"image {i}: {e}") from e
    if not values:
        raise ValueError("no images to estimate")
    return EmpiricalDistribution(est.option_key, tuple(values), source)


# ---------------------------------------------------------------------------
# Wasserstein-1
# ---------------------------------------------------------------------------

def w1_cdf(a: Sequence[float], b: Sequence[float]) -> float:
    """Integral of |F_a - F_b| over the merged support."""
    a = np.sort(np.asarray(a, dtype=np.float64))
    b = np.sort(np.asarray(b, dtype=np.float64))
    if len(a) == 0 or len(b) == 0:
        raise ValueError("W1 of an empty sample")
    support = np.sort(np.concatenate([a, b]))
    widths = np.diff(support)
    fa = np.searchsorted(a, support[:-1], side="right") / len(a)
    fb = np.searchsorted(b, support[:-1], side="right") / len(b)
    return math.fsum((np.abs(fa - fb) * widths).tolist())


def w1_sorted(a: Sequence[float], b: Sequence[float]) -> float:
    """Mean absolute difference of order statistics; equal sample sizes only."""
    a = np.sort(np.asarray(a, dtype=np.float64))
    b = np.sort(np.asarray(b, dtype=np.float64))
    if len(a) != len(b) or len(a) == 0:
        raise ValueError("sorted-pairing W1 needs two non-empty samples of equal size")
    return math.fsum(np.abs(a - b).tolist()) / len(a)


def wasserstein1(a: EmpiricalDistribution, b: EmpiricalDistribution) -> float:
    if a.option_key is not b.option_key:
        raise ValueError(f"option key mismatch: {a.option_key.value} vs {b.option_key.value}")
    return w1_cdf(a.values, b.values)


# ---------------------------------------------------------------------------
# sampling
# ---------------------------------------------------------------------------

def sample_option(dist: EmpiricalDistribution, rng: np.random.Generator) -> float:
    """One stored value, each with equal probability."""
    return dist.values[int(rng.integers(dist.n))]


def text_histogram(values: Sequence[float], lo: float, hi: float, bins: int = DEFAULT_BINS,
                   width: int = 40) -> List[str]:
    counts, edges = histogram(values, lo, hi, bins)
    peak = max(counts.max(), 1)
    lines = []
    for c, e0, e1 in zip(counts, edges[:-1], edges[1:]):
        bar = "#" * int(round(width * c / peak))
        lines.append(f"[{e0:8.3f}, {e1:8.3f})  {c:6d}  {bar}")
    return lines


def histogram(values: Sequence[float], lo: float, hi: float, bins: int = DEFAULT_BINS):
    edges = np.linspace(lo, hi, bins + 1)
    counts, _ = np.histogram(np.clip(values, lo, hi), bins=edges)
    return counts, edges


def histogram_range(key: OptionKey, values: Sequence[float]):
    spec = OptionKey(key).spec
    lo, hi = spec.lo, spec.hi
    if not math.isfinite(hi):
        hi = max(max(values), lo + 1)
    return lo, hi


# ---------------------------------------------------------------------------
# profile files
# ---------------------------------------------------------------------------

def default_metadata(seed=None, estimator_version=None) -> Dict[str, str]:
    meta = {"created": _dt.datetime.now(_dt.timezone.utc).replace(microsecond=0).isoformat()}
    if seed is not None:
        meta["seed"] = str(seed)
    if estimator_version is not None:
        meta["estimator_version"] = str(estimator_version)
    return meta


def dumps_profile(profile: TargetProfile) -> str:
    out = [f"{PROFILE_MAGIC} {PROFILE_VERSION}"]
    for name, value in profile.metadata.items():
        out.append(f"{name}: {value}")
    for key, dist in profile.entries.items():
        out.append(f"[{key.value}]")
        out.append(f"source: {dist.source}")
        out.append(f"n: {dist.n}")
        out.extend(repr(v) for v in dist.values)
    return "\n".join(out) + "\n"


def loads_profile(text: str, path=None) -> TargetProfile:
    lines = [(i + 1, ln.strip()) for i, ln in enumerate(text.splitlines())]
    lines = [(i, ln) for i, ln in lines if ln and not ln.startswith("#")]
    if not lines:
        raise ProfileError("empty profile", path, 1)
    lineno, first = lines[0]
    parts = first.split()
    if len(parts) != 2 or parts[0] != PROFILE_MAGIC:
        raise ProfileError(f"expected '{PROFILE_MAGIC} <version>' header", path, lineno)
    if parts[1] != str(PROFILE_VERSION):
        raise ProfileError(f"unsupported profile version {parts[1]}", path, lineno)

    meta: Dict[str, str] = {}
    entries: Dict[OptionKey, EmpiricalDistribution] = {}
    pos = 1

    def field_line(expect: str):
        nonlocal pos
        if pos >= len(lines):
            raise ProfileError(f"unexpected end of file, expected '{expect}:'", path, lines[-1][0])
        ln_no, ln = lines[pos]
        name, sep, value = ln.partition(":")
        if not sep or name.strip() != expect:
            raise ProfileError(f"expected '{expect}: ...'", path, ln_no)
        pos += 1
        return ln_no, value.strip()

    while pos < len(lines) and not lines[pos][1].startswith("["):
        ln_no, ln = lines[pos]
        name, sep, value = ln.partition(":")
        if not sep or not name.strip():
            raise ProfileError("malformed metadata line", path, ln_no)
        meta[name.strip()] = value.strip()
        pos += 1

    while pos < len(lines):
        ln_no, ln = lines[pos]
        if not (ln.startswith("[") and ln.endswith("]")):
            raise ProfileError(f"expected '[option_key]', got {ln!r}", path, ln_no)
        try:
            key = option_key(ln[1:-1].strip())
        except ValueError as e:
            raise ProfileError(str(e), path, ln_no) from None
        if not key.is_scalar:
            raise ProfileError(f"{key.value} is not a scalar option", path, ln_no)
        if key in entries:
            raise ProfileError(f"duplicate option block {key.value}", path, ln_no)
        pos += 1
        _, source = field_line("source")
        n_line, n_raw = field_line("n")
        try:
            n = int(n_raw)
        except ValueError:
            raise ProfileError(f"bad value count {n_raw!r}", path, n_line) from None
        if n < 1:
            raise ProfileError(f"option {key.value} has no values", path, n_line)
        values = []
        for _ in range(n):
            if pos >= len(lines) or lines[pos][1].startswith("["):
                raise ProfileError(f"option {key.value} declares {n} values, found {len(values)}",
                                   path, lines[pos - 1][0])
            v_no, v_raw = lines[pos]
            try:
                v = float(v_raw)
            except ValueError:
                raise ProfileError(f"non-numeric value {v_raw!r}", path, v_no) from None
            if not key.spec.contains(v):
                raise ProfileError(f"{key.value} value {v} outside {key.spec.describe()}", path, v_no)
            values.append(v)
            pos += 1
        entries[key] = EmpiricalDistribution(key, tuple(values), source)

    if not entries:
        raise ProfileError("profile holds no option blocks", path, lines[-1][0])
    return TargetProfile(entries, meta)


def save_profile(profile: TargetProfile, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(dumps_profile(profile))


def load_profile(path) -> TargetProfile:
    with open(path, encoding="utf-8") as fh:
        return loads_profile(fh.read(), path)
