"""Dataset generation: option resolution, per-image rendering, manifests.

Every random choice for image ``(identity, index)`` is drawn from generators
seeded by ``(global seed, identity, index, purpose)``, never from shared
state, so output does not depend on the number of workers or job order.
"""
from __future__ import annotations

import csv
import io
import logging
import os
import re
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from . import imageproc
from .bvh import load_bvh, pose_from_frame
from .config import MODE_KEYS, ConfigError, GenerationConfig, OptionMode
from .distribution import TargetProfile, sample_option
from .estimation import DEFAULT_EXTRACTOR, ESTIMABLE, extract_features, from_features
from .renderer import build_mesh, render
from .scene_model import (MASK64, OptionKey, Pose, RenderOptions, builtin_pose, derive_person_spec,
                          parse_pose_ref, seed_hash)

log = logging.getLogger(__name__)

MANIFEST_NAME = "manifest.csv"
MANIFEST_MAGIC = "# tagforge-manifest v1"
OPTION_COLUMNS = [k.value for k in OptionKey if k is not OptionKey.camera_id]
MANIFEST_COLUMNS = ["file", "identity_id", "camera_id", "image_index"] + OPTION_COLUMNS
_MARKET_RE = re.compile(r"^(?P<pid>\d{4,})_c(?P<cam>\d+)_(?P<idx>\d{6,})\.png$")

_KEY_STREAM = {k: i for i, k in enumerate(OptionKey)}


class GenerationError(RuntimeError):
    pass


def market_name(identity_id: int, camera_id: int, image_index: int) -> str:
    return f"{identity_id:04d}_c{camera_id}_{image_index:06d}.png"


def parse_market_name(name: str) -> Tuple[int, int, int]:
    m = _MARKET_RE.match(os.path.basename(name))
    if not m:
        raise ValueError(f"not a generated image name: {name!r}")
    return int(m.group("pid")), int(m.group("cam")), int(m.group("idx"))


# ---------------------------------------------------------------------------
# option resolution
# ---------------------------------------------------------------------------

def _stream(cfg: GenerationConfig, identity_id: int, image_index: int, purpose: int) -> np.random.Generator:
    return np.random.default_rng([cfg.seed & MASK64, identity_id, image_index, purpose])


def _draw(key: OptionKey, mode: OptionMode, rng: np.random.Generator, profile: Optional[TargetProfile]):
    integer = key.spec.kind == "int"
    if mode.mode == "fixed":
        v = mode.value
    elif mode.mode == "uniform":
        v = int(rng.integers(mode.lo, mode.hi + 1)) if integer else float(rng.uniform(mode.lo, mode.hi))
    elif mode.mode == "choice":
        v = mode.values[int(rng.integers(len(mode.values)))]
    else:
        if profile is None or key not in profile:
            raise ConfigError(f"option {key.value} is in profile mode but the profile has no {key.value} entry")
        v = sample_option(profile[key], rng)
    return int(round(v)) if integer else float(v)


def resolve_options(cfg: GenerationConfig, profile: Optional[TargetProfile], identity_id: int,
                    image_index: int, corpus: imageproc.BackgroundCorpus,
                    overrides: Optional[Dict[OptionKey, float]] = None) -> RenderOptions:
    values = {}
    for key in MODE_KEYS:
        if overrides and key in overrides:
            values[key.value] = overrides[key]
            continue
        rng = _stream(cfg, identity_id, image_index, _KEY_STREAM[key])
        values[key.value] = _draw(key, cfg.options[key], rng, profile)
    cam_rng = _stream(cfg, identity_id, image_index, _KEY_STREAM[OptionKey.camera_id])
    values["camera_id"] = int(cam_rng.integers(1, cfg.num_cameras + 1))
    pose_rng = _stream(cfg, identity_id, image_index, _KEY_STREAM[OptionKey.pose])
    values["pose"] = cfg.poses[int(pose_rng.integers(len(cfg.poses)))]
    bg_seed = seed_hash(cfg.seed, identity_id, image_index, _KEY_STREAM[OptionKey.background_ref])
    values["background_ref"] = imageproc.choose_background_ref(corpus, bg_seed)
    return RenderOptions(**values)


@lru_cache(maxsize=8)
def _bvh_doc(path: str):
    return load_bvh(path)


def resolve_pose(ref: str, cfg: GenerationConfig) -> Pose:
    kind, name, frame = parse_pose_ref(ref)
    if kind == "builtin":
        return builtin_pose(name)
    return pose_from_frame(_bvh_doc(name), frame, dict(cfg.joint_map))


def render_sample(cfg: GenerationConfig, opts: RenderOptions, identity_id: int,
                  corpus: imageproc.BackgroundCorpus) -> np.ndarray:
    """Full image chain for one sample; returns a float (256, 128, 3) image."""
    spec = derive_person_spec(cfg.seed, identity_id)
    mesh = build_mesh(spec, resolve_pose(opts.pose, cfg))
    w, h = imageproc.OUT_W, imageproc.OUT_H
    fg = render(mesh, opts, w, h)
    img = imageproc.composite(fg, corpus.crop(opts.background_ref, w, h))
    img = imageproc.apply_color_bias(img, imageproc.derive_color_bias(opts.camera_id, cfg.seed, cfg.beta))
    img = imageproc.apply_gamma(img, opts.gamma)
    return imageproc.degrade_resolution(img, opts.working_height_px, w, h)


# ---------------------------------------------------------------------------
# worker plumbing
# ---------------------------------------------------------------------------

_WORKER: Dict[str, object] = {}


def _init_worker(cfg: GenerationConfig, profile: Optional[TargetProfile], corpus=None) -> None:
    _WORKER["cfg"] = cfg
    _WORKER["profile"] = profile
    _WORKER["corpus"] = corpus if corpus is not None else cfg.backgrounds.load()


def _run_jobs(fn, jobs: Sequence, cfg, profile, workers: int, corpus=None) -> List:
    if workers <= 1 or len(jobs) <= 1:
        _init_worker(cfg, profile, corpus)
        return [fn(j) for j in jobs]
    chunk = max(1, len(jobs) // (workers * 4))
    with ProcessPoolExecutor(max_workers=workers, initializer=_init_worker,
                             initargs=(cfg, profile)) as pool:
        return list(pool.map(fn, jobs, chunksize=chunk))


def _generate_one(job):
    identity_id, image_index, out_dir = job
    cfg, profile, corpus = _WORKER["cfg"], _WORKER["profile"], _WORKER["corpus"]
    try:
        opts = resolve_options(cfg, profile, identity_id, image_index, corpus)
        img = render_sample(cfg, opts, identity_id, corpus)
        name = market_name(identity_id, opts.camera_id, image_index)
        imageproc.write_png(os.path.join(out_dir, name), img)
    except Exception as e:  # noqa: BLE001 - re-raised with job context
        raise GenerationError(f"identity {identity_id}, image {image_index}: {e}") from e
    return ManifestRecord(name, identity_id, image_index, opts)


def _features_one(job):
    identity_id, image_index, key, value, tag = job
    cfg, corpus = _WORKER["cfg"], _WORKER["corpus"]
    opts = resolve_options(cfg, None, identity_id, image_index, corpus, overrides={key: value})
    img = imageproc.quantize(render_sample(cfg, opts, identity_id, corpus))
    return extract_features(img, tag), opts.value(key)


def default_workers() -> int:
    return os.cpu_count() or 1


# ---------------------------------------------------------------------------
# manifest
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ManifestRecord:
    file: str
    identity_id: int
    image_index: int
    options: RenderOptions

    @property
    def camera_id(self) -> int:
        return self.options.camera_id

    def row(self) -> List[str]:
        rec = self.options.to_record()
        return [self.file, str(self.identity_id), str(self.camera_id), str(self.image_index)] + \
            [rec[c] for c in OPTION_COLUMNS]


@dataclass(frozen=True)
class DatasetManifest:
    records: Tuple[ManifestRecord, ...]
    seed: int
    config_hash: str

    def __len__(self) -> int:
        return len(self.records)

    def values(self, key) -> List:
        return [r.options.value(key) for r in self.records]


def dumps_manifest(m: DatasetManifest) -> str:
    buf = io.StringIO()
    buf.write(f"{MANIFEST_MAGIC} seed={m.seed} config_hash={m.config_hash} records={len(m.records)}\n")
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(MANIFEST_COLUMNS)
    for r in m.records:
        writer.writerow(r.row())
    return buf.getvalue()


def loads_manifest(text: str) -> DatasetManifest:
    lines = text.splitlines()
    if not lines or not lines[0].startswith(MANIFEST_MAGIC):
        raise ValueError("not a tagforge manifest")
    meta = dict(tok.split("=", 1) for tok in lines[0][len(MANIFEST_MAGIC):].split())
    reader = csv.reader(lines[1:])
    header = next(reader)
    if header != MANIFEST_COLUMNS:
        raise ValueError("unexpected manifest columns")
    records = []
    for row in reader:
        rec = dict(zip(header, row))
        opts = RenderOptions.from_record(rec)
        records.append(ManifestRecord(rec["file"], int(rec["identity_id"]), int(rec["image_index"]), opts))
    if "records" in meta and int(meta["records"]) != len(records):
        raise ValueError("manifest record count does not match header")
    return DatasetManifest(tuple(records), int(meta.get("seed", 0)), meta.get("config_hash", ""))


def read_manifest(path) -> DatasetManifest:
    with open(path, encoding="utf-8") as fh:
        return loads_manifest(fh.read())


# ---------------------------------------------------------------------------
# entry points
# ---------------------------------------------------------------------------

def check_profile(cfg: GenerationConfig, profile: Optional[TargetProfile]) -> None:
    for key in cfg.profile_keys():
        if profile is None or key not in profile:
            raise ConfigError(f"option {key.value} is in profile mode but the profile has no {key.value} entry")


def generate_dataset(cfg: GenerationConfig, out_dir, profile: Optional[TargetProfile] = None,
                     workers: int = 1) -> DatasetManifest:
    """Render every (identity, image) pair to ``out_dir`` and write the manifest last.

    A directory without ``manifest.csv`` holds an incomplete run.
    """
    check_profile(cfg, profile)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    manifest_path = out_dir / MANIFEST_NAME
    if manifest_path.exists():
        manifest_path.unlink()
    jobs = [(cfg.identity_offset + i, j, str(out_dir))
            for i in range(cfg.num_identities) for j in range(cfg.images_per_identity)]
    records = _run_jobs(_generate_one, jobs, cfg, profile, workers)
    records.sort(key=lambda r: (r.identity_id, r.image_index))
    config_hash = cfg.digest()
    if profile is not None:
        from .distribution import dumps_profile
        import hashlib
        config_hash = hashlib.sha256((config_hash + dumps_profile(profile)).encode()).hexdigest()[:16]
    manifest = DatasetManifest(tuple(records), cfg.seed, config_hash)
    tmp = manifest_path.with_suffix(".tmp")
    tmp.write_text(dumps_manifest(manifest), encoding="utf-8")
    tmp.replace(manifest_path)
    return manifest


def sweep_values(key: OptionKey, n: int, lo: float, hi: float) -> List[float]:
    vals = np.linspace(lo, hi, n)
    if key.spec.kind == "int":
        return [int(round(v)) for v in vals]
    return [float(v) for v in vals]


def calibration_features(cfg: GenerationConfig, key, values: Sequence[float], tag: Optional[str] = None,
                         workers: int = 1, corpus=None) -> Tuple[np.ndarray, np.ndarray]:
    """Render one image per value (fresh identity each) and return (features, labels).

    Images go through the same 8-bit quantization as files on disk.
    """
    key = OptionKey(key)
    tag = tag or DEFAULT_EXTRACTOR[key]
    jobs = [(cfg.identity_offset + i, 0, key, v, tag) for i, v in enumerate(values)]
    out = _run_jobs(_features_one, jobs, cfg, None, workers, corpus)
    feats = np.stack([f for f, _ in out])
    labels = np.array([float(v) for _, v in out])
    return feats, labels


def calibrate(cfg: GenerationConfig, key, n: int = 600, lo: Optional[float] = None, hi: Optional[float] = None,
              k: int = 5, tag: Optional[str] = None, workers: int = 1):
    """Fit the default estimator for ``key`` on ``n`` renders sweeping [lo, hi]."""
    key = OptionKey(key)
    if key not in ESTIMABLE:
        raise ValueError(f"option not estimable: {key.value}")
    if n < k:
        raise ValueError(f"need n >= k ({n} < {k})")
    spec = key.spec
    lo = spec.lo if lo is None else lo
    hi = spec.hi if hi is None else hi
    if not (spec.contains(lo) and spec.contains(hi) and lo <= hi):
        raise ValueError(f"sweep range [{lo}, {hi}] outside {spec.describe()}")
    tag = tag or DEFAULT_EXTRACTOR[key]
    feats, labels = calibration_features(cfg, key, sweep_values(key, n, lo, hi), tag, workers)
    return from_features(key, tag, k, feats, labels)


# ---------------------------------------------------------------------------
# gamma variants of an existing image set
# ---------------------------------------------------------------------------

SIDECAR_NAME = "gamma_values.csv"


def make_gamma_variant(input_dir, lo: float, hi: float, seed: int, out_dir) -> List[Tuple[str, Optional[float], str]]:
    """Re-encode every image with its own gamma drawn uniformly from [lo, hi].

    Returns the sidecar rows ``(file, gamma or None, status)``, also written
    to ``gamma_values.csv`` in ``out_dir``.
    """
    if not (0.4 <= lo <= hi <= 2.5):
        raise ValueError(f"need 0.4 <= lo <= hi <= 2.5, got lo={lo}, hi={hi}")
    input_dir, out_dir = Path(input_dir), Path(out_dir)
    files = sorted(p for p in input_dir.iterdir() if p.suffix.lower() in imageproc.IMAGE_SUFFIXES)
    out_dir.mkdir(parents=True, exist_ok=True)
    rows: List[Tuple[str, Optional[float], str]] = []
    for i, path in enumerate(files):
        rng = np.random.default_rng([seed & MASK64, i, 0x6A])
        g = lo if lo == hi else float(rng.uniform(lo, hi))
        try:
            img = imageproc.read_image(path)
        except Exception as e:  # noqa: BLE001 - any decoder failure skips the file
            log.warning("skipping unreadable image %s: %s", path.name, e)
            rows.append((path.name, None, f"skipped: {e}".replace("\n", " ")))
            continue
        imageproc.write_png(out_dir / (path.stem + ".png"), imageproc.apply_gamma(img, g))
        rows.append((path.name, g, "ok"))
    with open(out_dir / SIDECAR_NAME, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["file", "gamma", "status"])
        for name, g, status in rows:
            w.writerow([name, "" if g is None else repr(g), status])
    return rows
