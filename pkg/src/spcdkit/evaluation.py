"""Binary-classification metrics, ROC/AUC, group-aware fold plans and
cross-validation with mean +/- sample-std aggregation."""

from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .classifiers import ModelParams, TrainingSet, predict_scores, train

METRIC_NAMES = ("accuracy", "sensitivity", "precision", "specificity", "f_measure", "mcc", "auc")


class FoldError(RuntimeError):
    def __init__(self, fold: int, cause: Exception):
        super().__init__(f"fold {fold} failed: {cause}")
        self.fold = fold
        self.cause = cause


@dataclass(frozen=True)
class ConfusionMatrix:
    tp: int
    fp: int
    tn: int
    fn: int

    def __post_init__(self):
        if min(self.tp, self.fp, self.tn, self.fn) < 0:
            raise ValueError("confusion counts must be non-negative")

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.tn + self.fn


@dataclass(frozen=True)
class MetricsReport:
    accuracy: float
    sensitivity: float
    precision: float
    specificity: float
    f_measure: float
    mcc: float
    auc: float = math.nan
    undefined: tuple = ()   # metrics whose formula hit 0/0 and were set to 0

    def as_dict(self) -> dict:
        return {k: getattr(self, k) for k in METRIC_NAMES}


def confusion(scores, labels, threshold: float = 0.5) -> ConfusionMatrix:
    scores = np.asarray(scores, dtype=np.float64).ravel()
    labels = np.asarray(labels).ravel()
    if scores.size == 0:
        raise ValueError("empty input")
    if scores.size != labels.size:
        raise ValueError(f"{scores.size} scores but {labels.size} labels")
    if not np.all(np.isin(labels, (0, 1))):
        raise ValueError("labels must be 0 or 1")
    pred = scores >= threshold
    pos = labels == 1
    return ConfusionMatrix(tp=int(np.sum(pred & pos)), fp=int(np.sum(pred & ~pos)),
                           tn=int(np.sum(~pred & ~pos)), fn=int(np.sum(~pred & pos)))


def _ratio(num, den, name, flagged):
    if den == 0:
        flagged.append(name)
        return 0.0
    return num / den


def metrics(cm: ConfusionMatrix, auc: float | None = None) -> MetricsReport:
    if cm.total == 0:
        raise ValueError("empty confusion matrix")
    tp, fp, tn, fn = cm.tp, cm.fp, cm.tn, cm.fn
    flagged: list = []
    acc = (tp + tn) / cm.total
    sens = _ratio(tp, tp + fn, "sensitivity", flagged)
    prec = _ratio(tp, tp + fp, "precision", flagged)
    spec = _ratio(tn, tn + fp, "specificity", flagged)
    f = _ratio(2 * prec * sens, prec + sens, "f_measure", flagged)
    den = (tp + fp) * (tp + fn) * (tn + fp) * (tn + fn)
    mcc = _ratio(tp * tn - fp * fn, math.sqrt(den), "mcc", flagged)
    if flagged:
        warnings.warn(f"undefined metrics set to 0: {', '.join(flagged)}", RuntimeWarning, stacklevel=2)
    return MetricsReport(acc, sens, prec, spec, f, mcc,
                         math.nan if auc is None else float(auc), tuple(flagged))


def roc_curve(scores, labels) -> np.ndarray:
    """(n, 2) array of (fpr, tpr) from (0, 0) to (1, 1), one step per
    distinct score, thresholds descending."""
    scores = np.asarray(scores, dtype=np.float64).ravel()
    labels = np.asarray(labels).ravel()
    if scores.size != labels.size:
        raise ValueError(f"{scores.size} scores but {labels.size} labels")
    n_pos = int(np.sum(labels == 1))
    n_neg = int(np.sum(labels == 0))
    if n_pos == 0 or n_neg == 0:
        raise ValueError("ROC needs both classes")
    order = np.argsort(-scores, kind="stable")
    s, pos = scores[order], labels[order] == 1
    tps = np.cumsum(pos)
    fps = np.cumsum(~pos)
    last = np.r_[np.nonzero(s[1:] != s[:-1])[0], s.size - 1]
    fpr = np.r_[0.0, fps[last] / n_neg]
    tpr = np.r_[0.0, tps[last] / n_pos]
    return np.stack([fpr, tpr], axis=1)


def auc(curve) -> float:
    curve = np.asarray(curve, dtype=np.float64)
    if curve.ndim != 2 or curve.shape[0] < 2:
        raise ValueError("ROC curve needs at least two points")
    x, y = curve[:, 0], curve[:, 1]
    return float(np.sum((x[1:] - x[:-1]) * (y[1:] + y[:-1]) / 2))


def evaluate_scores(scores, labels, threshold: float = 0.5) -> tuple[MetricsReport, np.ndarray]:
    curve = roc_curve(scores, labels)
    return metrics(confusion(scores, labels, threshold), auc(curve)), curve


# -- fold plans ----------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class Fold:
    train: np.ndarray
    validation: np.ndarray
    test: np.ndarray


@dataclass(frozen=True, eq=False)
class FoldPlan:
    patch_ids: tuple
    groups: tuple
    folds: tuple
    seed: int = 0

    def ids(self, fold: int, role: str) -> list:
        return [self.patch_ids[i] for i in getattr(self.folds[fold], role)]

    def role_groups(self, fold: int, role: str) -> set:
        return {self.groups[i] for i in getattr(self.folds[fold], role)}


def make_fold_plan(patch_ids: Sequence, groups: Sequence, labels: Sequence,
                   k_folds: int = 5, ratios=(0.7, 0.1, 0.2), seed: int = 0) -> FoldPlan:
    """Group-aware, class-stratified k-fold plan.

    Every patch of a source image shares one role within a fold. Test groups
    partition each class's groups across folds; validation groups are taken
    from the next folds' test chunks.
    """
    patch_ids, groups = tuple(patch_ids), tuple(groups)
    labels = np.asarray(labels).astype(np.int64).ravel()
    if not (len(patch_ids) == len(groups) == labels.size):
        raise ValueError("patch_ids, groups and labels differ in length")
    if len(set(patch_ids)) != len(patch_ids):
        raise ValueError("patch ids must be unique")
    if k_folds < 2:
        raise ValueError("k_folds must be >= 2")
    train_r, val_r, test_r = ratios
    if abs(train_r + val_r + test_r - 1) > 1e-9 or min(ratios) < 0:
        raise ValueError(f"ratios {ratios} must be non-negative and sum to 1")
    if abs(test_r - 1 / k_folds) > 1e-9:
        raise ValueError(f"test ratio {test_r} must equal 1/k_folds for {k_folds} folds")

    rows_of: dict = {}
    for i, g in enumerate(groups):
        rows_of.setdefault(g, []).append(i)
    group_label = {g: int(2 * labels[r].sum() >= len(r)) for g, r in rows_of.items()}

    chunks_by_class = []
    for cls in (0, 1):
        members = sorted((g for g, c in group_label.items() if c == cls), key=str)
        if len(members) < k_folds:
            raise ValueError(f"class {cls} has {len(members)} source images; need >= {k_folds}")
        rng = np.random.default_rng([seed, cls])
        shuffled = [members[i] for i in rng.permutation(len(members))]
        chunks = [[shuffled[i] for i in c] for c in np.array_split(np.arange(len(shuffled)), k_folds)]
        n_val = int(math.floor(val_r * len(members) + 0.5))
        n_val = min(n_val, len(members) - len(max(chunks, key=len)) - 1)
        chunks_by_class.append((chunks, max(n_val, 0)))

    folds = []
    for f in range(k_folds):
        test_g, val_g = [], []
        for chunks, n_val in chunks_by_class:
            test_g += chunks[f]
            pool = [g for j in range(1, k_folds) for g in chunks[(f + j) % k_folds]]
            val_g += pool[:n_val]
        test_set, val_set = set(test_g), set(val_g)
        role = np.array([2 if g in test_set else 1 if g in val_set else 0 for g in groups])
        folds.append(Fold(*(np.nonzero(role == r)[0] for r in (0, 1, 2))))
    return FoldPlan(patch_ids, groups, tuple(folds), seed)


# -- cross-validation ------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class FoldResult:
    fold: int
    metrics: MetricsReport
    roc: np.ndarray
    n_train: int
    n_test: int


@dataclass(eq=False)
class CVReport:
    model: str
    folds: list = field(default_factory=list)

    def values(self, metric: str) -> np.ndarray:
        return np.array([getattr(r.metrics, metric) for r in self.folds])

    def aggregate(self) -> dict:
        """metric -> (mean, sample std)."""
        return {name: aggregate_values(self.values(name)) for name in METRIC_NAMES}


def aggregate_values(values) -> tuple[float, float]:
    v = np.asarray(values, dtype=np.float64)
    return float(v.mean()), (float(v.std(ddof=1)) if v.size > 1 else 0.0)


def cross_validate(data: TrainingSet, plan: FoldPlan, kind: str,
                   params: ModelParams = ModelParams(), threshold: float = 0.5) -> CVReport:
    """Train on each fold's training role and score its test role."""
    if len(plan.patch_ids) != len(data):
        raise ValueError("fold plan and data disagree on row count")
    report = CVReport(kind)
    for f, fold in enumerate(plan.folds):
        try:
            model = train(kind, data.subset(fold.train), params)
            test = data.subset(fold.test)
            scores = predict_scores(model, test.features)
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", RuntimeWarning)
                rep, curve = evaluate_scores(scores, test.labels, threshold)
        except Exception as exc:
            raise FoldError(f, exc) from exc
        report.folds.append(FoldResult(f, rep, curve, fold.train.size, fold.test.size))
    return report


# -- report files ------------------------------------------------------------------

def write_metrics_csv(reports: Sequence[CVReport], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["model", "fold", "metric", "value"])
        for rep in reports:
            for r in rep.folds:
                for name in METRIC_NAMES:
                    w.writerow([rep.model, r.fold, name, repr(getattr(r.metrics, name))])


def write_aggregate_csv(reports: Sequence[CVReport], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["model", "metric", "mean", "std"])
        for rep in reports:
            for name, (m, s) in rep.aggregate().items():
                w.writerow([rep.model, name, repr(m), repr(s)])


def write_roc_csv(reports: Sequence[CVReport], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["model", "fold", "fpr", "tpr"])
        for rep in reports:
            for r in rep.folds:
                for fpr, tpr in r.roc.tolist():
                    w.writerow([rep.model, r.fold, repr(fpr), repr(tpr)])


def format_table(reports: Sequence[CVReport]) -> str:
    """Plain-text mean+/-std table, one row per model."""
    head = ["model"] + list(METRIC_NAMES)
    rows = [head]
    for rep in reports:
        agg = rep.aggregate()
        rows.append([rep.model] + [f"{agg[n][0]:.3f}+/-{agg[n][1]:.3f}" for n in METRIC_NAMES])
    widths = [max(len(r[i]) for r in rows) for i in range(len(head))]
    return "\n".join("  ".join(c.ljust(wd) for c, wd in zip(r, widths)) for r in rows)
