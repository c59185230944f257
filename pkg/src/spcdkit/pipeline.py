"""Dataset manifests, run configuration and the file-level steps behind the CLI:
ingest -> augment -> extract -> train / evaluate."""

from __future__ import annotations

import csv
import hashlib
import json
import logging
import os
from collections import Counter
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np
from PIL import Image

from .augmentation import (DEFAULT_TRANSFORMS, MagnificationPolicy, TransformSpec,
                           augment_record, plan_balance)
from .classifiers import ModelParams, TrainingSet, save_model, train
from .evaluation import (CVReport, cross_validate, format_table, make_fold_plan,
                         write_aggregate_csv, write_metrics_csv, write_roc_csv)
from .features import FEATURE_KINDS, HogParams, LbpParams, SpcdParams, patch_features
from .imaging import ImageError, Rect, RgbImage, load_image
from .slic import SlicParams

log = logging.getLogger(__name__)

MANIFEST_COLUMNS = ("image_id", "image_path", "roi_x", "roi_y", "roi_w", "roi_h", "ischaemia", "infection")
PROVENANCE_COLUMNS = ("patch_path", "source_id", "factor", "transform", "seed",
                      "record_id", "ischaemia", "infection")
TASKS = ("ischaemia", "infection")


class DataError(ValueError):
    """Invalid manifest, missing input file or inconsistent data."""


# -- manifest ---------------------------------------------------------------------

@dataclass(frozen=True)
class PatchRecord:
    image_id: str
    image_path: str
    roi: Rect
    ischaemia: int
    infection: int
    row: int                 # 1-based data row in the manifest
    record_id: str = ""

    def label(self, task: str) -> int:
        return getattr(self, task)


@dataclass(frozen=True)
class DatasetManifest:
    path: str
    records: tuple
    warnings: tuple = ()

    def counts(self, task: str) -> Counter:
        return Counter(r.label(task) for r in self.records)

    def summary(self) -> dict:
        """Per-condition case (image) and patch (ROI) counts."""
        out = {}
        for task in TASKS:
            by_image: dict = {}
            for r in self.records:
                by_image[r.image_id] = max(by_image.get(r.image_id, 0), r.label(task))
            cases = Counter(by_image.values())
            patches = self.counts(task)
            out[task] = {
                "absent": {"cases": cases.get(0, 0), "patches": patches.get(0, 0)},
                "present": {"cases": cases.get(1, 0), "patches": patches.get(1, 0)},
            }
        out["total"] = {"cases": len({r.image_id for r in self.records}), "patches": len(self.records)}
        return out


def _parse_int(value, column, row):
    try:
        return int(value)
    except (TypeError, ValueError):
        raise DataError(f"row {row}: column {column!r} is not an integer: {value!r}") from None


def load_manifest(path, check_images: bool = True) -> DatasetManifest:
    """Read and validate a manifest CSV. Image paths resolve relative to the
    manifest's directory. Duplicate (image_id, roi) rows are dropped with a
    warning."""
    path = Path(path)
    if not path.is_file():
        raise DataError(f"manifest not found: {path}")
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        header = tuple(reader.fieldnames or ())
        missing = [c for c in MANIFEST_COLUMNS if c not in header]
        if missing:
            raise DataError(f"{path}: missing columns {missing}")
        rows = list(reader)
    if not rows:
        raise DataError(f"{path}: manifest has no rows")

    base = path.parent
    sizes: dict = {}
    seen = set()
    records, warns = [], []
    for i, row in enumerate(rows, start=1):
        image_id = (row["image_id"] or "").strip()
        if not image_id:
            raise DataError(f"row {i}: empty image_id")
        img_path = (base / row["image_path"]).resolve()
        x, y, w, h = (_parse_int(row[c], c, i) for c in ("roi_x", "roi_y", "roi_w", "roi_h"))
        labels = {}
        for c in TASKS:
            v = _parse_int(row[c], c, i)
            if v not in (0, 1):
                raise DataError(f"row {i}: {c} must be 0 or 1, got {v}")
            labels[c] = v
        try:
            roi = Rect(x, y, w, h)
        except ValueError as exc:
            raise DataError(f"row {i}: invalid ROI: {exc}") from None
        if check_images:
            if img_path not in sizes:
                try:
                    with Image.open(img_path) as im:
                        sizes[img_path] = im.size
                except (OSError, ValueError) as exc:
                    raise DataError(f"row {i}: unreadable image {img_path}: {exc}") from None
            iw, ih = sizes[img_path]
            if not roi.fits(iw, ih):
                raise DataError(f"row {i}: ROI {x},{y},{w},{h} outside {iw}x{ih} image {img_path.name}")
        key = (image_id, x, y, w, h)
        if key in seen:
            warns.append(f"row {i}: duplicate ROI for image {image_id!r} dropped")
            continue
        seen.add(key)
        records.append(PatchRecord(image_id, str(img_path), roi, labels["ischaemia"],
                                   labels["infection"], i))

    per_image = Counter(r.image_id for r in records)
    index: Counter = Counter()
    named = []
    for r in records:
        if per_image[r.image_id] == 1:
            rid = r.image_id
        else:
            rid = f"{r.image_id}.{index[r.image_id]}"
            index[r.image_id] += 1
        named.append(replace(r, record_id=rid))
    for wmsg in warns:
        log.warning(wmsg)
    return DatasetManifest(str(path), tuple(named), tuple(warns))


# -- configuration --------------------------------------------------------------------

def _build(cls, values):
    if values is None:
        return cls()
    if isinstance(values, cls):
        return values
    known = {f.name for f in fields(cls)}
    unknown = set(values) - known
    if unknown:
        raise ValueError(f"unknown {cls.__name__} keys: {sorted(unknown)}")
    return cls(**values)


@dataclass(frozen=True)
class RunConfig:
    task: str = "ischaemia"
    features: tuple = ("spcd",)
    models: tuple = ("nb",)
    seed: int = 0
    k_folds: int = 5
    ratios: tuple = (0.7, 0.1, 0.2)
    balance: str = "exact"            # exact | full | none
    balance_target: int | None = None  # patches per class; None means minority capacity
    slic: SlicParams = field(default_factory=SlicParams)
    spcd: SpcdParams = field(default_factory=SpcdParams)
    lbp: LbpParams = field(default_factory=LbpParams)
    hog: HogParams = field(default_factory=HogParams)
    model_params: ModelParams = field(default_factory=ModelParams)
    magnification: MagnificationPolicy = field(default_factory=MagnificationPolicy)
    transforms: tuple = DEFAULT_TRANSFORMS

    def __post_init__(self):
        if self.task not in TASKS:
            raise ValueError(f"unknown task {self.task!r}; expected one of {TASKS}")
        feats = tuple(self.features)
        if not feats or set(feats) - set(FEATURE_KINDS):
            raise ValueError(f"features must be a nonempty subset of {FEATURE_KINDS}, got {feats}")
        models = tuple(self.models)
        if not models or set(models) - {"nb", "rf", "mlp"}:
            raise ValueError(f"models must be drawn from nb, rf, mlp, got {models}")
        if self.balance not in ("exact", "full", "none"):
            raise ValueError(f"unknown balance mode {self.balance!r}")
        if self.balance_target is not None and (not isinstance(self.balance_target, int)
                                                or self.balance_target < 1):
            raise ValueError(f"balance_target must be a positive integer, got {self.balance_target!r}")
        object.__setattr__(self, "features", feats)
        object.__setattr__(self, "models", models)
        object.__setattr__(self, "ratios", tuple(self.ratios))
        object.__setattr__(self, "transforms", tuple(
            t if isinstance(t, TransformSpec) else TransformSpec(**t) for t in self.transforms))

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        d = dict(d)
        nested = {"slic": SlicParams, "spcd": SpcdParams, "lbp": LbpParams, "hog": HogParams,
                  "model_params": ModelParams, "magnification": MagnificationPolicy}
        for key, sub in nested.items():
            if key in d:
                d[key] = _build(sub, d[key])
        unknown = set(d) - {f.name for f in fields(cls)}
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["transforms"] = [asdict(t) for t in self.transforms]
        return d

    @property
    def slic_for_spcd(self) -> SlicParams:
        """SLIC parameters with k taken from the SPCD settings."""
        return SlicParams(k=self.spcd.k, m=self.slic.m, iterations=self.slic.iterations,
                          min_region_fraction=self.slic.min_region_fraction)


def load_config(path) -> RunConfig:
    path = Path(path)
    if not path.is_file():
        raise DataError(f"config not found: {path}")
    with open(path) as fh:
        return RunConfig.from_dict(json.load(fh))


# -- augmentation -----------------------------------------------------------------------

def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def plan_for_manifest(manifest: DatasetManifest, config: RunConfig) -> dict:
    """record_id -> set of (factor_index, variant_index), or None for the
    full cross product."""
    n_variants = 1 + len(config.transforms)
    n_factors = len(config.magnification.factors)
    if config.balance == "none":
        return {r.record_id: None for r in manifest.records}
    by_class: dict = {}
    for r in manifest.records:
        by_class.setdefault(r.label(config.task), []).append(r)
    if len(by_class) < 2:
        raise DataError(f"manifest has a single {config.task} class; cannot balance")
    counts = {c: len(v) for c, v in by_class.items()}
    plans = plan_balance(counts, n_factors, n_variants, target=config.balance_target,
                         mode=config.balance, seed=config.seed)
    out = {}
    for cls, recs in by_class.items():
        for rec, sel in zip(recs, plans[cls].selections):
            out[rec.record_id] = set(sel)
    return out


def augment_manifest(manifest: DatasetManifest, config: RunConfig, out_dir) -> dict:
    """Write augmented PNG patches and provenance.csv; return per-class
    patch counts for the configured task."""
    out_dir = Path(out_dir)
    if not manifest.records:
        raise DataError("empty manifest")
    out_dir.mkdir(parents=True, exist_ok=True)
    selection = plan_for_manifest(manifest, config)
    counts: Counter = Counter()
    cache: dict = {}
    rows = []
    for rec in manifest.records:
        if rec.image_path not in cache:
            cache.clear()
            try:
                cache[rec.image_path] = load_image(rec.image_path)
            except ImageError as exc:
                raise DataError(f"row {rec.row}: {exc}") from None
        img = cache[rec.image_path]
        sel = selection[rec.record_id]
        if sel is not None and not sel:
            continue
        patches = augment_record(img, rec.roi, config.magnification, config.transforms,
                                 config.seed, rec.image_id, rec.record_id, sel)
        for p in patches:
            name = p.provenance.patch_name + ".png"
            Image.fromarray(p.patch.to_uint8(), mode="RGB").save(out_dir / name, format="PNG")
            pv = p.provenance
            rows.append([name, pv.source_id, repr(pv.factor), pv.transform,
                         "" if pv.seed is None else str(pv.seed), pv.record_id,
                         rec.ischaemia, rec.infection])
            counts[rec.label(config.task)] += 1
    with open(out_dir / "provenance.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(PROVENANCE_COLUMNS)
        w.writerows(rows)
    return dict(sorted(counts.items()))


def read_provenance(path) -> list[dict]:
    path = Path(path)
    if not path.is_file():
        raise DataError(f"provenance file not found: {path}")
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        missing = [c for c in PROVENANCE_COLUMNS if c not in (reader.fieldnames or ())]
        if missing:
            raise DataError(f"{path}: missing columns {missing}")
        return list(reader)


# -- features ------------------------------------------------------------------------

def extract_features(patch_dir, config: RunConfig, out_csv=None) -> Path:
    """One feature row per patch listed in ``patch_dir/provenance.csv``."""
    patch_dir = Path(patch_dir)
    prov = read_provenance(patch_dir / "provenance.csv")
    if not prov:
        raise DataError(f"{patch_dir}: no patches listed")
    out_csv = Path(out_csv) if out_csv else patch_dir / "features.csv"
    names = None
    rows = []
    for row in prov:
        p = patch_dir / row["patch_path"]
        try:
            img = load_image(p)
        except ImageError as exc:
            raise DataError(str(exc)) from None
        fv = patch_features(img, config.features, config.spcd, config.slic_for_spcd,
                            config.lbp, config.hog)
        if names is None:
            names = fv.names
        rows.append([Path(row["patch_path"]).stem, row[config.task]] + [repr(v) for v in fv.values.tolist()])
    out_csv.parent.mkdir(parents=True, exist_ok=True)
    with open(out_csv, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["patch_id", "label", *names])
        w.writerows(rows)
    return out_csv


def read_features(path):
    """(patch_ids, labels, feature_names, matrix) from a features CSV."""
    path = Path(path)
    if not path.is_file():
        raise DataError(f"features file not found: {path}")
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if not header or header[:2] != ["patch_id", "label"]:
            raise DataError(f"{path}: expected header starting with patch_id,label")
        ids, labels, values = [], [], []
        for row in reader:
            ids.append(row[0])
            labels.append(int(row[1]))
            values.append([float(v) for v in row[2:]])
    return ids, np.array(labels), tuple(header[2:]), np.array(values, dtype=np.float64).reshape(len(ids), -1)


def training_set(features_csv, provenance_csv) -> tuple[list, TrainingSet]:
    ids, labels, names, X = read_features(features_csv)
    source = {Path(r["patch_path"]).stem: r["source_id"] for r in read_provenance(provenance_csv)}
    missing = [i for i in ids if i not in source]
    if missing:
        raise DataError(f"{len(missing)} patches lack provenance, e.g. {missing[0]!r}")
    return ids, TrainingSet(X, labels, tuple(source[i] for i in ids), names)


def train_models(features_csv, provenance_csv, config: RunConfig, out_dir) -> list[Path]:
    _, data = training_set(features_csv, provenance_csv)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = []
    for kind in config.models:
        model = train(kind, data, config.model_params)
        p = out_dir / f"{kind}.spcdmodel"
        p.write_bytes(save_model(model))
        paths.append(p)
    return paths


def evaluate(features_csv, provenance_csv, config: RunConfig, out_dir) -> list[CVReport]:
    ids, data = training_set(features_csv, provenance_csv)
    plan = make_fold_plan(ids, data.groups, data.labels, config.k_folds, config.ratios, config.seed)
    reports = [cross_validate(data, plan, kind, config.model_params) for kind in config.models]
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    write_metrics_csv(reports, out_dir / "metrics.csv")
    write_aggregate_csv(reports, out_dir / "aggregate.csv")
    write_roc_csv(reports, out_dir / "roc.csv")
    (out_dir / "summary.txt").write_text(format_table(reports) + "\n")
    return reports


def write_run_manifest(out_dir, command: str, config: RunConfig, inputs) -> Path:
    """Config, root seed and input checksums; no timestamps."""
    doc = {
        "command": command,
        "seed": config.seed,
        "config": config.to_dict(),
        "inputs": {str(p): sha256_file(p) for p in inputs},
    }
    path = Path(out_dir) / f"run_{command}.json"
    path.write_text(json.dumps(doc, indent=2, sort_keys=True, default=str) + "\n")
    return path


class OutputLock:
    """Exclusive lock file guarding an output directory."""

    def __init__(self, out_dir):
        self.path = Path(out_dir) / ".lock"
        self.fd = None

    def __enter__(self):
        self.path.parent.mkdir(parents=True, exist_ok=True)
        try:
            self.fd = os.open(self.path, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
        except FileExistsError:
            raise DataError(f"{self.path.parent} is in use by another run (remove {self.path} if stale)") from None
        os.write(self.fd, str(os.getpid()).encode())
        return self

    def __exit__(self, *exc):
        os.close(self.fd)
        self.path.unlink(missing_ok=True)
