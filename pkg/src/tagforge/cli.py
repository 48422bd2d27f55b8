"""``tagforge`` command line.

Exit codes: 0 success, 1 usage/config/input error, 2 generation error.
"""
from __future__ import annotations

import argparse
import csv
import logging
import os
import sys
from pathlib import Path
from typing import List, Optional, Sequence

import numpy as np

from . import __version__, imageproc
from .config import SEED_ENV, ConfigError, GenerationConfig, apply_seed_override, load_config
from .distribution import (DEFAULT_BINS, ProfileError, TargetProfile, build_distribution, default_metadata,
                           histogram, histogram_range, load_profile, save_profile, text_histogram, wasserstein1)
from .estimation import ESTIMATOR_VERSION, EstimatorFileError, load_estimator, save_estimator
from .pipeline import GenerationError, calibrate, default_workers, generate_dataset, make_gamma_variant, \
    render_sample, resolve_options
from .renderer import RenderError
from .scene_model import SCALAR_KEYS, BackgroundRef, OptionKey, option_key

log = logging.getLogger("tagforge")

EXIT_OK, EXIT_CONFIG, EXIT_GENERATION = 0, 1, 2


class CliError(Exception):
    """Reported as ``error: ...`` with exit code 1."""


class _Parser(argparse.ArgumentParser):
    # usage errors share exit code 1 with config errors; 2 is for generation
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def _out(msg: str = "") -> None:
    print(msg, flush=True)


def _config(path: Optional[str]) -> GenerationConfig:
    if path is None:
        return apply_seed_override(GenerationConfig())
    return load_config(path)


def _summary(values: Sequence[float]) -> str:
    a = np.asarray(values, dtype=np.float64)
    return f"min={a.min():.4g} mean={a.mean():.4g} max={a.max():.4g}"


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def cmd_generate(args) -> int:
    cfg = load_config(args.config)
    if args.num_identities is not None:
        cfg = cfg.replace(num_identities=args.num_identities)
    profile = None
    if args.profile:
        profile = load_profile(args.profile)
        if not cfg.profile_keys():
            log.warning("--profile given but no option in %s uses profile mode; the profile is ignored",
                        args.config)
            profile = None
    try:
        manifest = generate_dataset(cfg, args.out, profile, args.workers)
    except (GenerationError, RenderError) as e:
        print(f"generation failed: {e}", file=sys.stderr)
        return EXIT_GENERATION
    n_ids = len({r.identity_id for r in manifest.records})
    _out(f"wrote {len(manifest)} images of {n_ids} identities to {args.out}")
    for key in SCALAR_KEYS:
        _out(f"  {key.value:22s} {_summary(manifest.values(key))}")
    return EXIT_OK


def cmd_calibrate(args) -> int:
    key = option_key(args.option)
    cfg = _config(args.config)
    lo, hi = args.range if args.range else (None, None)
    est = calibrate(cfg, key, n=args.n, lo=lo, hi=hi, k=args.k, workers=args.workers)
    save_estimator(est, args.out)
    _out(f"calibrated {key.value} estimator ({est.tag}, k={est.k}, n={len(est.labels)}) -> {args.out}")
    return EXIT_OK


def _image_files(directory: Path) -> List[Path]:
    if not directory.is_dir():
        raise CliError(f"not a directory: {directory}")
    return sorted(p for p in directory.iterdir() if p.suffix.lower() in imageproc.IMAGE_SUFFIXES)


def cmd_estimate(args) -> int:
    est = load_estimator(args.estimator)
    files = _image_files(Path(args.images))
    if not files:
        raise CliError(f"no PNG/JPEG images in {args.images}")
    images = (imageproc.read_image(p) for p in files)
    dist = build_distribution(est, images, source=f"{Path(args.images).name} ({len(files)} images)")
    out = Path(args.out)
    meta = default_metadata(os.environ.get(SEED_ENV), ESTIMATOR_VERSION)
    profile = TargetProfile({dist.option_key: dist}, meta)
    if out.exists():
        profile = load_profile(out).merged(profile)
    save_profile(profile, out)
    lo, hi = histogram_range(dist.option_key, dist.values)
    _out(f"{dist.option_key.value}: {dist.n} estimates, {_summary(dist.values)}")
    for line in text_histogram(dist.values, lo, hi, args.bins):
        _out("  " + line)
    if args.hist_csv:
        counts, edges = histogram(dist.values, lo, hi, args.bins)
        with open(args.hist_csv, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["bin_lo", "bin_hi", "count"])
            for c, e0, e1 in zip(counts, edges[:-1], edges[1:]):
                w.writerow([repr(float(e0)), repr(float(e1)), int(c)])
    _out(f"profile {out} holds: {', '.join(k.value for k in profile.keys())}")
    return EXIT_OK


def cmd_compare(args) -> int:
    a, b = load_profile(args.a), load_profile(args.b)
    shared = [k for k in a.keys() if k in b]
    if not shared:
        raise CliError("the two profiles share no option keys")
    for key in shared:
        _out(f"{key.value}\tW1={wasserstein1(a[key], b[key]):.9g}\tn_a={a[key].n}\tn_b={b[key].n}")
    return EXIT_OK


def parse_inline_options(spec: str) -> dict:
    """``"gamma=1.5,camera_depression_deg=30"`` -> {OptionKey: value}."""
    out = {}
    for item in filter(None, (s.strip() for s in spec.split(","))):
        name, sep, raw = item.partition("=")
        name = name.strip()
        if not sep:
            raise CliError(f"option {name!r}: expected name=value")
        try:
            key = option_key(name)
        except ValueError:
            raise CliError(f"unknown option field {name!r}") from None
        raw = raw.strip()
        try:
            if key.spec.kind == "real":
                value = float(raw)
            elif key.spec.kind == "int":
                value = int(raw)
            elif key.spec.kind == "background":
                value = BackgroundRef.parse(raw)
            else:
                value = raw
        except ValueError:
            raise CliError(f"option {name}: bad value {raw!r}") from None
        out[key] = value
    return out


def cmd_preview(args) -> int:
    cfg = _config(args.config)
    if args.seed is not None:
        cfg = cfg.replace(seed=args.seed)
    overrides = parse_inline_options(args.options or "")
    corpus = cfg.backgrounds.load()
    base = resolve_options(cfg, None, args.identity, 0, corpus)
    try:
        opts = base.replace(**{k.value: v for k, v in overrides.items()})
    except ValueError as e:
        raise CliError(str(e)) from None
    img = render_sample(cfg, opts, args.identity, corpus)
    imageproc.write_png(args.out, img)
    _out(opts.to_text().rstrip())
    _out(f"wrote {args.out}")
    return EXIT_OK


def cmd_gamma_variant(args) -> int:
    rows = make_gamma_variant(args.images, args.lo, args.hi, args.seed, args.out)
    skipped = sum(1 for _, g, _ in rows if g is None)
    _out(f"wrote {len(rows) - skipped} gamma variants to {args.out} ({skipped} skipped)")
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="tagforge", description="Synthetic person images with controllable "
                                "rendering options, and target-aware option profiles.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = p.add_subparsers(dest="command", required=True)

    def workers(sp):
        sp.add_argument("--workers", type=int, default=default_workers(),
                        help="worker processes (default: CPU count)")

    g = sub.add_parser("generate", help="render a labelled dataset")
    g.add_argument("--config", required=True, help="TOML generation config")
    g.add_argument("--profile", help="target profile for options in profile mode")
    g.add_argument("--out", required=True, help="output directory")
    g.add_argument("--num-identities", type=int, help="override num_identities")
    workers(g)
    g.set_defaults(func=cmd_generate)

    c = sub.add_parser("calibrate", help="fit an option estimator on a rendered sweep")
    c.add_argument("--option", required=True, help="option key to estimate")
    c.add_argument("--config", help="TOML config for the non-swept options (default: base settings)")
    c.add_argument("--n", type=int, default=600, help="number of calibration renders")
    c.add_argument("--range", type=float, nargs=2, metavar=("LO", "HI"), help="sweep range (default: full)")
    c.add_argument("--k", type=int, default=5, help="neighbours averaged per prediction")
    c.add_argument("--out", required=True, help="estimator file to write")
    workers(c)
    c.set_defaults(func=cmd_calibrate)

    e = sub.add_parser("estimate", help="estimate an option over target images into a profile")
    e.add_argument("--estimator", required=True)
    e.add_argument("--images", required=True, help="directory of target images (256x128)")
    e.add_argument("--out", required=True, help="profile file; merged into if it exists")
    e.add_argument("--bins", type=int, default=DEFAULT_BINS, help="histogram bins")
    e.add_argument("--hist-csv", help="also write the histogram as CSV")
    e.set_defaults(func=cmd_estimate)

    m = sub.add_parser("compare", help="W1 distance per shared option of two profiles")
    m.add_argument("--a", required=True)
    m.add_argument("--b", required=True)
    m.set_defaults(func=cmd_compare)

    v = sub.add_parser("preview", help="render one image with explicit options")
    v.add_argument("--options", default="", help='e.g. "gamma=1.5,camera_depression_deg=30"')
    v.add_argument("--seed", type=int, help="global seed (default: config seed)")
    v.add_argument("--identity", type=int, default=0)
    v.add_argument("--config")
    v.add_argument("--out", required=True)
    v.set_defaults(func=cmd_preview)

    gv = sub.add_parser("gamma-variant", help="re-encode a directory with random per-image gamma")
    gv.add_argument("--images", required=True)
    gv.add_argument("--lo", type=float, required=True)
    gv.add_argument("--hi", type=float, required=True)
    gv.add_argument("--seed", type=int, default=0)
    gv.add_argument("--out", required=True)
    gv.set_defaults(func=cmd_gamma_variant)
    return p


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s: %(message)s")
    if getattr(args, "workers", 1) < 1:
        print("error: --workers must be >= 1", file=sys.stderr)
        return EXIT_CONFIG
    try:
        return args.func(args)
    except (CliError, ConfigError, ProfileError, EstimatorFileError, ValueError, KeyError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
