"""Command-line front end.

    spcdkit ingest MANIFEST
    spcdkit augment MANIFEST --out DIR
    spcdkit extract PATCH_DIR
    spcdkit train FEATURES_CSV --out DIR
    spcdkit evaluate FEATURES_CSV --out DIR
    spcdkit debug-superpixels IMAGE --out PREFIX

Exit codes: 0 success, 2 usage error, 3 data error, 4 training divergence.
"""

from __future__ import annotations

import argparse
import dataclasses
import datetime
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .augmentation import AugmentationError, TransformSpec
from .classifiers import ModelError, TrainingDivergence
from .evaluation import FoldError, format_table
from .features import SpcdParams, spcd_from_means
from .imaging import ImageError, RgbImage, load_image, rgb_to_lab, save_png
from .pipeline import (DataError, OutputLock, RunConfig, augment_manifest, evaluate,
                       extract_features, load_config, load_manifest, train_models,
                       write_run_manifest)
from .slic import SlicParams, boundary_mask, paint_mean_colors, segment, superpixel_means

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_DIVERGED = 0, 2, 3, 4

log = logging.getLogger("spcdkit")


class UsageError(Exception):
    pass


def _csv_list(text):
    return tuple(t.strip() for t in text.split(",") if t.strip())


def build_config(args) -> RunConfig:
    """Config file first, then command-line flags on top."""
    try:
        cfg = load_config(args.config) if getattr(args, "config", None) else RunConfig()
    except DataError:
        raise
    except (ValueError, TypeError) as exc:
        raise UsageError(f"invalid config {args.config}: {exc}") from None
    d = dataclasses.asdict(cfg)
    d["transforms"] = [dataclasses.asdict(t) for t in cfg.transforms]
    for key in ("task", "seed", "balance"):
        if getattr(args, key, None) is not None:
            d[key] = getattr(args, key)
    if getattr(args, "features", None):
        d["features"] = _csv_list(args.features)
    if getattr(args, "model", None):
        d["models"] = _csv_list(args.model)
    if getattr(args, "folds", None):
        d["k_folds"] = args.folds
        d["ratios"] = (1 - 1 / args.folds - d["ratios"][1], d["ratios"][1], 1 / args.folds)
    if getattr(args, "transforms", None) is not None:
        kinds = () if args.transforms == "none" else _csv_list(args.transforms)
        d["transforms"] = [{"kind": k} for k in kinds]
    if getattr(args, "k", None):
        d["spcd"]["k"] = args.k
    if getattr(args, "model_seed", None) is not None:
        d["model_params"]["seed"] = args.model_seed
    try:
        return RunConfig.from_dict(d)
    except (ValueError, TypeError) as exc:
        raise UsageError(str(exc)) from None


def _sidecar(out_dir, command):
    """Timestamps live only here so every other output replays byte-identically."""
    path = Path(out_dir) / "run.log"
    with open(path, "a") as fh:
        fh.write(f"{datetime.datetime.now().isoformat(timespec='seconds')} {command} spcdkit {__version__}\n")


def cmd_ingest(args) -> int:
    manifest = load_manifest(args.manifest)
    summary = manifest.summary()
    for w in manifest.warnings:
        print(f"warning: {w}", file=sys.stderr)
    print(f"{'condition':<12}{'definition':<10}{'cases':>8}{'patches':>9}")
    for task in ("ischaemia", "infection"):
        for definition in ("absent", "present"):
            s = summary[task][definition]
            print(f"{task:<12}{definition:<10}{s['cases']:>8}{s['patches']:>9}")
    print(f"{'total':<22}{summary['total']['cases']:>8}{summary['total']['patches']:>9}")
    if args.json:
        Path(args.json).write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    return EXIT_OK


def cmd_augment(args) -> int:
    config = build_config(args)
    manifest = load_manifest(args.manifest)
    out = Path(args.out)
    with OutputLock(out):
        counts = augment_manifest(manifest, config, out)
        write_run_manifest(out, "augment", config, [args.manifest])
        _sidecar(out, "augment")
    for cls, n in counts.items():
        print(f"{config.task}={cls}: {n} patches")
    return EXIT_OK


def cmd_extract(args) -> int:
    config = build_config(args)
    patch_dir = Path(args.patch_dir)
    out_csv = Path(args.out) if args.out else patch_dir / "features.csv"
    with OutputLock(out_csv.parent):
        path = extract_features(patch_dir, config, out_csv)
        write_run_manifest(out_csv.parent, "extract", config,
                           [patch_dir / "provenance.csv"])
        _sidecar(out_csv.parent, "extract")
    print(f"wrote {path}")
    return EXIT_OK


def _provenance_for(args):
    if args.provenance:
        return Path(args.provenance)
    return Path(args.features_csv).parent / "provenance.csv"


def cmd_train(args) -> int:
    config = build_config(args)
    out = Path(args.out)
    prov = _provenance_for(args)
    with OutputLock(out):
        paths = train_models(args.features_csv, prov, config, out)
        write_run_manifest(out, "train", config, [args.features_csv, prov])
        _sidecar(out, "train")
    for p in paths:
        print(f"wrote {p}")
    return EXIT_OK


def cmd_evaluate(args) -> int:
    config = build_config(args)
    out = Path(args.out)
    prov = _provenance_for(args)
    with OutputLock(out):
        reports = evaluate(args.features_csv, prov, config, out)
        write_run_manifest(out, "evaluate", config, [args.features_csv, prov])
        _sidecar(out, "evaluate")
    print(format_table(reports))
    return EXIT_OK


def cmd_debug_superpixels(args) -> int:
    rgb = load_image(args.image)
    params = SlicParams(k=args.k, m=args.m)
    smap = segment(rgb_to_lab(rgb), params)
    painted = paint_mean_colors(rgb, smap)

    overlay = rgb.pixels.copy()
    overlay[boundary_mask(smap)] = (1.0, 1.0, 0.0)

    means = superpixel_means(painted, smap)
    r, g, b = means.T
    red = r > args.t1 * (r + g + b)
    black = np.maximum(np.maximum(r, g), b) < args.t2
    mask = np.full(means.shape, 0.5)
    mask[red] = (1.0, 0.0, 0.0)
    mask[black] = (0.0, 0.0, 1.0)

    prefix = str(args.out)
    Path(prefix).parent.mkdir(parents=True, exist_ok=True)
    save_png(painted, prefix + "_painted.png")
    save_png(RgbImage(overlay), prefix + "_boundaries.png")
    save_png(RgbImage(mask[smap.labels]), prefix + "_mask.png")
    fv = spcd_from_means(means, SpcdParams())
    print(f"{smap.count} superpixels; red fraction (t1={args.t1}) {red.mean():.3f}; "
          f"black fraction (t2={args.t2}) {black.mean():.3f}")
    print("spcd " + " ".join(f"{n}={v:.3f}" for n, v in zip(fv.names, fv.values)))
    return EXIT_OK


def _common(p, task=True):
    p.add_argument("--config", help="JSON run configuration; flags override it")
    p.add_argument("--seed", type=int, help="root seed")
    if task:
        p.add_argument("--task", choices=("ischaemia", "infection"))


def make_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="spcdkit", description=__doc__.split("\n")[0])
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="validate a manifest and print per-class counts")
    p.add_argument("manifest")
    p.add_argument("--json", help="also write the summary as JSON")
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("augment", help="magnification crops + transforms, class-balanced")
    p.add_argument("manifest")
    p.add_argument("--out", required=True)
    p.add_argument("--balance", choices=("exact", "full", "none"))
    p.add_argument("--transforms", help="comma-separated transform kinds, or 'none'")
    _common(p)
    p.set_defaults(func=cmd_augment)

    p = sub.add_parser("extract", help="feature CSV for an augmented patch directory")
    p.add_argument("patch_dir")
    p.add_argument("--out", help="features CSV (default PATCH_DIR/features.csv)")
    p.add_argument("--features", help="comma-separated subset of spcd,lbp,hog,color")
    p.add_argument("--k", type=int, help="superpixel count for SPCD")
    _common(p)
    p.set_defaults(func=cmd_extract)

    for name, func, helptext in (("train", cmd_train, "fit models on every row"),
                                 ("evaluate", cmd_evaluate, "k-fold cross-validation report")):
        p = sub.add_parser(name, help=helptext)
        p.add_argument("features_csv")
        p.add_argument("--provenance", help="provenance CSV (default: next to the features CSV)")
        p.add_argument("--out", required=True)
        p.add_argument("--model", help="comma-separated subset of nb,rf,mlp")
        p.add_argument("--model-seed", type=int, dest="model_seed")
        if name == "evaluate":
            p.add_argument("--folds", type=int)
        _common(p, task=False)
        p.set_defaults(func=func)

    p = sub.add_parser("debug-superpixels", help="painted image, boundaries and red/black mask PNGs")
    p.add_argument("image")
    p.add_argument("--out", required=True, help="output prefix")
    p.add_argument("--k", type=int, default=200)
    p.add_argument("--m", type=float, default=10.0)
    p.add_argument("--t1", type=float, default=0.50)
    p.add_argument("--t2", type=float, default=0.25)
    p.set_defaults(func=cmd_debug_superpixels)
    return parser


def main(argv=None) -> int:
    parser = make_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"spcdkit {args.command}: usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except TrainingDivergence as exc:
        print(f"spcdkit {args.command}: training diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except FoldError as exc:
        print(f"spcdkit {args.command}: {exc}", file=sys.stderr)
        return EXIT_DIVERGED if isinstance(exc.cause, TrainingDivergence) else EXIT_DATA
    except (DataError, ImageError, ModelError, AugmentationError, ValueError) as exc:
        print(f"spcdkit {args.command}: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
