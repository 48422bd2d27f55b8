"""Image-space environment effects: background, colour bias, gamma, resolution.

Images are float arrays in [0, 1] with shape (H, W, 3) unless noted.  The
fixed order applied by the generator is

    render -> composite -> apply_color_bias -> apply_gamma -> degrade_resolution
"""
from __future__ import annotations

import logging
import math
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from PIL import Image

from .renderer import ImageBuffer
from .scene_model import BackgroundRef, SplitMix64, seed_hash

log = logging.getLogger(__name__)

OUT_W, OUT_H = 128, 256
IMAGE_SUFFIXES = (".png", ".jpg", ".jpeg")
DEFAULT_BETA = 0.08
LUMA = np.array([0.2126, 0.7152, 0.0722])
MIN_CROP_AREA = 0.3


# ---------------------------------------------------------------------------
# resampling
# ---------------------------------------------------------------------------

def _resample_matrix(n_in: int, n_out: int) -> np.ndarray:
    """Row-stochastic (n_out, n_in) triangle-filter weights, half-pixel centres.

    When shrinking, the filter support is widened by the scale factor, so the
    downscale averages instead of aliasing.
    """
    scale = n_in / n_out
    centers = (np.arange(n_out) + 0.5) * scale - 0.5
    if scale <= 1.0:
        support = 1.0
        centers = np.clip(centers, 0.0, n_in - 1.0)  # edge clamp
    else:
        support = scale
    src = np.arange(n_in)
    w = np.maximum(0.0, 1.0 - np.abs(src[None, :] - centers[:, None]) / support)
    return w / w.sum(axis=1, keepdims=True)


def resize_bilinear(img: np.ndarray, out_w: int, out_h: int) -> np.ndarray:
    h, w = img.shape[:2]
    if (h, w) == (out_h, out_w):
        return img.copy()
    rest = img.shape[2:]
    wy = _resample_matrix(h, out_h)
    wx = _resample_matrix(w, out_w)
    out = (wy @ img.reshape(h, -1)).reshape((out_h, w) + rest)
    out = np.moveaxis(out, 1, 0).reshape(w, -1)
    out = np.moveaxis((wx @ out).reshape((out_w, out_h) + rest), 0, 1)
    return np.clip(out, 0.0, 1.0)


# ---------------------------------------------------------------------------
# background corpus
# ---------------------------------------------------------------------------

@dataclass
class BackgroundCorpus:
    images: Dict[str, np.ndarray]                 # id -> (H, W, 3) float
    crops: Dict[str, List[Tuple[int, int, int, int]]] = field(default_factory=dict)
    seed: int = 0

    def __post_init__(self):
        if not self.images:
            raise ValueError("background corpus is empty")
        for image_id, rects in self.crops.items():
            if image_id not in self.images:
                raise ValueError(f"crop manifest names unknown image {image_id!r}")
            h, w = self.images[image_id].shape[:2]
            for x, y, cw, ch in rects:
                if x < 0 or y < 0 or cw < 1 or ch < 1 or x + cw > w or y + ch > h:
                    raise ValueError(f"crop {x},{y},{cw},{ch} outside image {image_id!r} ({w}x{h})")
        self.ids = sorted(self.images)

    def crop(self, ref: BackgroundRef, out_w: int, out_h: int) -> np.ndarray:
        img = self.images[ref.image_id]
        h, w = img.shape[:2]
        if ref.x + ref.w > w or ref.y + ref.h > h:
            raise ValueError(f"background_ref {ref} outside image ({w}x{h})")
        return resize_bilinear(img[ref.y:ref.y + ref.h, ref.x:ref.x + ref.w], out_w, out_h)


def read_image(path) -> np.ndarray:
    with Image.open(path) as im:
        return np.asarray(im.convert("RGB"), dtype=np.float64) / 255.0


def write_png(path, img: np.ndarray) -> None:
    data = np.rint(np.clip(img, 0.0, 1.0) * 255.0).astype(np.uint8)
    Image.fromarray(data, "RGB").save(path, format="PNG")


def quantize(img: np.ndarray) -> np.ndarray:
    """What an image looks like after a round trip through an 8-bit PNG."""
    return np.rint(np.clip(img, 0.0, 1.0) * 255.0) / 255.0


def read_crop_manifest(path) -> Dict[str, List[Tuple[int, int, int, int]]]:
    crops: Dict[str, List[Tuple[int, int, int, int]]] = {}
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            if len(parts) != 5:
                raise ValueError(f"{path}:{lineno}: expected 'image_id x y w h'")
            try:
                rect = tuple(int(p) for p in parts[1:])
            except ValueError:
                raise ValueError(f"{path}:{lineno}: non-integer crop rectangle") from None
            crops.setdefault(parts[0], []).append(rect)
    return crops


def load_corpus(directory, crop_manifest=None, seed: int = 0) -> BackgroundCorpus:
    directory = Path(directory)
    files = sorted(p for p in directory.iterdir() if p.suffix.lower() in IMAGE_SUFFIXES)
    if not files:
        raise ValueError(f"no PNG/JPEG images in {directory}")
    images = {p.stem: read_image(p) for p in files}
    crops = read_crop_manifest(crop_manifest) if crop_manifest else {}
    return BackgroundCorpus(images, crops, seed)


def _smooth_noise(rng: np.random.Generator, h: int, w: int, cells: int) -> np.ndarray:
    coarse = rng.random((cells, max(2, cells * w // h)))
    return resize_bilinear(coarse[..., None], w, h)[..., 0]


EXPOSURE_MEAN = (0.42, 0.48)
MUTE = 0.5


def _auto_expose(img: np.ndarray, mean_luma: float) -> np.ndarray:
    """Mute colour and contrast, then shift the mean luma to ``mean_luma``.

    Mimics a surveillance camera's auto exposure: scene brightness varies far
    less between frames than raw scene reflectance does.
    """
    y = (img @ LUMA)[..., None]
    img = y + MUTE * (img - y)
    m = float(y.mean())
    return np.clip(mean_luma + MUTE * (img - m), 0.0, 1.0)


def procedural_corpus(count: int = 24, seed: int = 0, size: Tuple[int, int] = (192, 256)) -> BackgroundCorpus:
    """Synthetic street-like scenes for runs without a photo directory.

    Each image has a sky/wall gradient, a ground plane, a few flat-coloured
    blocks and smooth noise texture.  ``size`` is (width, height).
    """
    w, h = size
    images = {}
    for i in range(count):
        rng = np.random.default_rng([seed, i, 0xB6])
        yy = np.linspace(0.0, 1.0, h)[:, None, None]
        top, bottom = rng.uniform(0.15, 0.85, 3), rng.uniform(0.1, 0.7, 3)
        img = top * (1 - yy) + bottom * yy + np.zeros((h, w, 3))
        horizon = int(h * rng.uniform(0.45, 0.75))
        img[horizon:] = rng.uniform(0.1, 0.6, 3) * (0.8 + 0.4 * yy[horizon:] )
        for _ in range(rng.integers(2, 7)):
            bw, bh = rng.integers(w // 10, w // 2), rng.integers(h // 10, h // 2)
            x0, y0 = rng.integers(0, w - bw), rng.integers(0, max(1, horizon - bh // 2))
            img[y0:y0 + bh, x0:x0 + bw] = rng.uniform(0.05, 0.95, 3)
        texture = _smooth_noise(rng, h, w, int(rng.integers(4, 24)))
        img = img * (0.75 + 0.5 * texture[..., None])
        images[f"proc{i:03d}"] = _auto_expose(img, rng.uniform(*EXPOSURE_MEAN))
    return BackgroundCorpus(images, {}, seed)


def plain_corpus(level: float = 0.5) -> BackgroundCorpus:
    """A single flat grey image: the 'no background' setting."""
    return BackgroundCorpus({"plain": np.full((16, 16, 3), level)}, {"plain": [(0, 0, 16, 16)]}, 0)


def choose_background_ref(corpus: BackgroundCorpus, opts_seed: int) -> BackgroundRef:
    rng = SplitMix64(seed_hash(opts_seed, corpus.seed, 0xBA))
    image_id = corpus.ids[rng.next_u64() % len(corpus.ids)]
    h, w = corpus.images[image_id].shape[:2]
    rects = corpus.crops.get(image_id)
    if rects:
        x, y, cw, ch = rects[rng.next_u64() % len(rects)]
        return BackgroundRef(image_id, x, y, cw, ch)
    # random rectangle holding at least MIN_CROP_AREA of the source
    area = rng.uniform(MIN_CROP_AREA, 1.0)
    aspect = math.exp(rng.uniform(math.log(0.5), math.log(2.0)))
    cw = min(w, max(1, math.ceil(w * math.sqrt(area * aspect))))
    ch = min(h, max(1, math.ceil(area * w * h / cw)))
    cw = min(w, max(cw, math.ceil(MIN_CROP_AREA * w * h / ch)))
    x = rng.next_u64() % (w - cw + 1)
    y = rng.next_u64() % (h - ch + 1)
    return BackgroundRef(image_id, int(x), int(y), int(cw), int(ch))


def pick_background(corpus: BackgroundCorpus, opts_seed: int, out_w: int, out_h: int
                    ) -> Tuple[BackgroundRef, np.ndarray]:
    ref = choose_background_ref(corpus, opts_seed)
    return ref, corpus.crop(ref, out_w, out_h)


# ---------------------------------------------------------------------------
# per-pixel effects
# ---------------------------------------------------------------------------

def composite(fg: ImageBuffer, bg: np.ndarray) -> np.ndarray:
    if bg.shape != fg.rgb.shape:
        raise ValueError(f"background {bg.shape[:2]} does not match foreground {fg.rgb.shape[:2]}")
    a = fg.alpha[..., None]
    return a * fg.rgb + (1.0 - a) * bg


@dataclass(frozen=True)
class ColorBias:
    gains: Tuple[float, float, float]


def derive_color_bias(camera_id: int, global_seed: int, beta: float = DEFAULT_BETA) -> ColorBias:
    if not 0.0 <= beta <= 0.5:
        raise ValueError(f"beta={beta} outside [0, 0.5]")
    rng = SplitMix64(seed_hash(global_seed, camera_id, 0xC0B1A5))
    return ColorBias(tuple(1.0 + beta * (2.0 * rng.random() - 1.0) for _ in range(3)))


def apply_color_bias(img: np.ndarray, bias: ColorBias) -> np.ndarray:
    return np.clip(img * np.asarray(bias.gains), 0.0, 1.0)


def apply_gamma(img: np.ndarray, gamma: float) -> np.ndarray:
    """Power-law tone curve v -> v**gamma; gamma > 1 darkens."""
    return np.power(np.clip(img, 0.0, 1.0), gamma)


def degrade_resolution(img: np.ndarray, working_height_px: int, out_w: int = OUT_W, out_h: int = OUT_H
                       ) -> np.ndarray:
    """Shrink to ``working_height_px`` rows (aspect kept), then resize to the output size."""
    if not 32 <= working_height_px <= 256:
        raise ValueError(f"working_height_px={working_height_px} outside [32, 256]")
    h, w = img.shape[:2]
    work_w = max(1, round(w * working_height_px / h))
    small = resize_bilinear(img, work_w, working_height_px)
    return resize_bilinear(small, out_w, out_h)
