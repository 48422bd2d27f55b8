"""Image -> option-value estimators.

An :class:`Estimator` is a k-nearest-neighbour regressor over one of two
fixed feature extractors.  It is fitted on renders whose option labels are
known and then applied to target images.

Estimator file layout (all integers little-endian)::

    magic    5 bytes  b"TGEST"
    version  1 byte   == ESTIMATOR_VERSION
    hlen     u32      length of the JSON header
    header   hlen     UTF-8 JSON {option_key, tag, k, n, dim}
    features n*dim    float64, row-major
    labels   n        float64
    crc32    u32      over every preceding byte
"""
from __future__ import annotations

import json
import math
import struct
import zlib
from dataclasses import dataclass
from typing import Iterable, List, Sequence, Tuple

import numpy as np

from .scene_model import OptionKey, option_key

HISTOGRAM = "luminance_histogram_32"
THUMBNAIL = "thumbnail_16x8"
FEATURE_DIMS = {HISTOGRAM: 32, THUMBNAIL: 128}
IMAGE_SHAPE = (256, 128)
LUMA = np.array([0.2126, 0.7152, 0.0722])

MAGIC = b"TGEST"
ESTIMATOR_VERSION = 1

# option -> feature extractor used by default
DEFAULT_EXTRACTOR = {
    OptionKey.gamma: HISTOGRAM,
    OptionKey.light_intensity: HISTOGRAM,
    OptionKey.ambient: HISTOGRAM,
    OptionKey.camera_depression_deg: THUMBNAIL,
    OptionKey.camera_distance_m: THUMBNAIL,
    OptionKey.working_height_px: THUMBNAIL,
}
ESTIMABLE = tuple(DEFAULT_EXTRACTOR)


class EstimatorFileError(ValueError):
    pass


def luma(img: np.ndarray) -> np.ndarray:
    return img[..., 0] * LUMA[0] + img[..., 1] * LUMA[1] + img[..., 2] * LUMA[2]


def extract_features(img: np.ndarray, tag: str) -> np.ndarray:
    if img.shape[:2] != IMAGE_SHAPE:
        raise ValueError(f"expected a {IMAGE_SHAPE[0]}x{IMAGE_SHAPE[1]} image, got {img.shape[0]}x{img.shape[1]}")
    y = np.clip(luma(img), 0.0, 1.0)
    if tag == HISTOGRAM:
        bins = np.minimum((y * 32).astype(np.int64), 31)
        hist = np.bincount(bins.ravel(), minlength=32).astype(np.float64)
        return hist / hist.sum()
    if tag == THUMBNAIL:
        return y.reshape(16, 16, 8, 16).mean(axis=(1, 3)).ravel()
    raise ValueError(f"unknown extractor tag {tag!r}")


@dataclass(frozen=True, eq=False)
class Estimator:
    option_key: OptionKey
    tag: str
    k: int
    features: np.ndarray  # (n, dim), canonical order
    labels: np.ndarray    # (n,)

    def __post_init__(self):
        key = OptionKey(self.option_key)
        object.__setattr__(self, "option_key", key)
        if key not in ESTIMABLE:
            raise ValueError(f"option not estimable: {key.value}")
        if self.tag not in FEATURE_DIMS:
            raise ValueError(f"unknown extractor tag {self.tag!r}")
        if self.k < 1:
            raise ValueError("k must be >= 1")
        n = len(self.labels)
        if self.features.shape != (n, FEATURE_DIMS[self.tag]):
            raise ValueError("feature matrix shape does not match labels/tag")
        if n < self.k:
            raise ValueError(f"need at least k={self.k} calibration pairs, got {n}")
        if not np.all(np.isfinite(self.features)):
            raise ValueError("non-finite calibration features")
        spec = key.spec
        if not all(spec.contains(float(v)) for v in self.labels):
            raise ValueError(f"calibration label outside {spec.describe()}")
        self.features.setflags(write=False)
        self.labels.setflags(write=False)

    def neighbours(self, feature: np.ndarray) -> np.ndarray:
        d2 = ((self.features - feature) ** 2).sum(axis=1)
        return np.argsort(d2, kind="stable")[: self.k]

    def predict_features(self, feature: np.ndarray) -> float:
        idx = self.neighbours(feature)
        value = math.fsum(self.labels[idx].tolist()) / self.k
        spec = self.option_key.spec
        return min(max(value, spec.lo), spec.hi)

    def predict(self, img: np.ndarray) -> float:
        return self.predict_features(extract_features(img, self.tag))


def fit(key, labeled: Sequence[Tuple[np.ndarray, float]], tag: str | None = None, k: int = 5) -> Estimator:
    """Store every (feature, label) pair; no iterative training.

    Pairs are put in a canonical order (features, then label, lexicographic)
    so the prediction does not depend on how the calibration set was listed.
    """
    key = option_key(key) if isinstance(key, str) else OptionKey(key)
    if not labeled:
        raise ValueError("cannot fit an estimator on an empty calibration set")
    if k < 1 or k > len(labeled):
        raise ValueError(f"k={k} must be in [1, {len(labeled)}]")
    tag = tag or DEFAULT_EXTRACTOR.get(key, HISTOGRAM)
    feats = np.stack([extract_features(img, tag) for img, _ in labeled])
    labels = np.array([float(v) for _, v in labeled])
    return from_features(key, tag, k, feats, labels)


def from_features(key, tag: str, k: int, feats: np.ndarray, labels: np.ndarray) -> Estimator:
    feats = np.asarray(feats, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.float64)
    if len(labels) == 0:
        raise ValueError("cannot fit an estimator on an empty calibration set")
    order = np.lexsort(np.vstack([labels[None, :], feats.T[::-1]]))
    return Estimator(OptionKey(key), tag, int(k), np.ascontiguousarray(feats[order]),
                     np.ascontiguousarray(labels[order]))


def predict(est: Estimator, img: np.ndarray) -> float:
    return est.predict(img)


# ---------------------------------------------------------------------------
# persistence
# ---------------------------------------------------------------------------

def dumps_estimator(est: Estimator) -> bytes:
    header = json.dumps({"option_key": est.option_key.value, "tag": est.tag, "k": est.k,
                         "n": len(est.labels), "dim": est.features.shape[1]}, sort_keys=True).encode()
    body = (MAGIC + bytes([ESTIMATOR_VERSION]) + struct.pack("<I", len(header)) + header
            + est.features.astype("<f8").tobytes() + est.labels.astype("<f8").tobytes())
    return body + struct.pack("<I", zlib.crc32(body))


def loads_estimator(data: bytes) -> Estimator:
    if len(data) < 10 or data[:5] != MAGIC:
        raise EstimatorFileError("not an estimator file (bad magic)")
    if data[5] != ESTIMATOR_VERSION:
        raise EstimatorFileError(f"unsupported estimator version {data[5]}")
    (hlen,) = struct.unpack_from("<I", data, 6)
    start = 10 + hlen
    if len(data) < start + 4:
        raise EstimatorFileError("truncated estimator file (header)")
    try:
        header = json.loads(data[10:start].decode())
        n, dim = int(header["n"]), int(header["dim"])
    except (ValueError, KeyError, TypeError) as e:
        raise EstimatorFileError(f"corrupt estimator header: {e}") from None
    end = start + 8 * n * dim + 8 * n
    if len(data) != end + 4:
        raise EstimatorFileError(f"truncated estimator file: expected {end + 4} bytes, got {len(data)}")
    (crc,) = struct.unpack_from("<I", data, end)
    if zlib.crc32(data[:end]) != crc:
        raise EstimatorFileError("estimator checksum mismatch")
    feats = np.frombuffer(data, dtype="<f8", count=n * dim, offset=start).reshape(n, dim).astype(np.float64)
    labels = np.frombuffer(data, dtype="<f8", count=n, offset=start + 8 * n * dim).astype(np.float64)
    try:
        return Estimator(option_key(header["option_key"]), header["tag"], int(header["k"]), feats, labels)
    except (ValueError, KeyError) as e:
        raise EstimatorFileError(f"invalid estimator contents: {e}") from None


def save_estimator(est: Estimator, path) -> None:
    with open(path, "wb") as fh:
        fh.write(dumps_estimator(est))


def load_estimator(path) -> Estimator:
    with open(path, "rb") as fh:
        return loads_estimator(fh.read())
