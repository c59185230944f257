"""Classical binary classifiers: Gaussian naive Bayes, random forest, MLP.

All models standardize features with statistics fitted on their own
training rows and return the class-1 probability from ``predict_scores``.
"""

from __future__ import annotations

import base64
import json
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

MODEL_FORMAT = "spcdmodel"
MODEL_VERSION = 1
MODEL_KINDS = ("nb", "rf", "mlp")


class ModelError(ValueError):
    """Bad training data, schema mismatch or malformed model payload."""


class TrainingDivergence(RuntimeError):
    pass


@dataclass(frozen=True, eq=False)
class TrainingSet:
    features: np.ndarray
    labels: np.ndarray
    groups: tuple = ()
    feature_names: tuple = ()

    def __post_init__(self):
        X = np.ascontiguousarray(self.features, dtype=np.float64)
        y = np.asarray(self.labels).astype(np.int64).ravel()
        if X.ndim != 2:
            raise ModelError("features must be a 2-D matrix")
        if X.shape[0] != y.size:
            raise ModelError(f"{X.shape[0]} feature rows but {y.size} labels")
        if self.groups and len(self.groups) != y.size:
            raise ModelError("groups must have one entry per row")
        if not np.all(np.isin(y, (0, 1))):
            raise ModelError("labels must be 0 or 1")
        if not np.all(np.isfinite(X)):
            raise ModelError("features contain non-finite values")
        names = tuple(self.feature_names) or tuple(f"x{i}" for i in range(X.shape[1]))
        if len(names) != X.shape[1]:
            raise ModelError("feature_names length does not match feature columns")
        object.__setattr__(self, "features", X)
        object.__setattr__(self, "labels", y)
        object.__setattr__(self, "groups", tuple(self.groups))
        object.__setattr__(self, "feature_names", names)

    def __len__(self):
        return self.labels.size

    def subset(self, idx) -> "TrainingSet":
        idx = np.asarray(idx, dtype=np.int64)
        groups = tuple(self.groups[i] for i in idx) if self.groups else ()
        return TrainingSet(self.features[idx], self.labels[idx], groups, self.feature_names)


@dataclass(frozen=True)
class ModelParams:
    var_floor: float = 1e-9
    n_trees: int = 100
    max_depth: int | None = None
    min_samples_leaf: int = 1
    features_per_split: int | None = None  # None -> sqrt(n_features)
    hidden: tuple = (64,)
    learning_rate: float = 1e-3
    epochs: int = 200
    batch_size: int = 32
    weight_decay: float = 1e-4
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))
        if self.n_trees < 1 or self.min_samples_leaf < 1 or self.batch_size < 1:
            raise ValueError("counts must be >= 1")
        if self.max_depth is not None and self.max_depth < 1:
            raise ValueError("max_depth must be >= 1")
        if self.features_per_split is not None and self.features_per_split < 1:
            raise ValueError("features_per_split must be >= 1")
        if len(self.hidden) != 1 or self.hidden[0] < 1:
            raise ValueError("the MLP has exactly one hidden layer of size >= 1")
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be > 0")
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        if not self.var_floor > 0 or self.weight_decay < 0:
            raise ValueError("var_floor must be > 0 and weight_decay >= 0")


@dataclass(frozen=True, eq=False)
class TrainedModel:
    kind: str
    feature_names: tuple
    mean: np.ndarray
    scale: np.ndarray
    arrays: dict                      # learned parameters
    info: dict = field(default_factory=dict)  # hyperparameters, loss trace

    def standardize(self, X: np.ndarray) -> np.ndarray:
        return (X - self.mean) / self.scale


def _check_training(data: TrainingSet):
    counts = np.bincount(data.labels, minlength=2)
    if counts.min() == 0:
        raise ModelError("training data must contain both classes")


def fit_standardizer(X: np.ndarray):
    mean = X.mean(axis=0)
    scale = X.std(axis=0)
    scale = np.where(scale > 0, scale, 1.0)
    return mean, scale


# -- naive Bayes -------------------------------------------------------------

def train_naive_bayes(data: TrainingSet, params: ModelParams = ModelParams()) -> TrainedModel:
    _check_training(data)
    mean, scale = fit_standardizer(data.features)
    Z = (data.features - mean) / scale
    y = data.labels
    priors = np.array([np.mean(y == c) for c in (0, 1)])
    means = np.stack([Z[y == c].mean(axis=0) for c in (0, 1)])
    variances = np.stack([Z[y == c].var(axis=0) for c in (0, 1)])
    variances = np.maximum(variances, params.var_floor)
    return TrainedModel("nb", data.feature_names, mean, scale,
                        {"priors": priors, "means": means, "variances": variances},
                        {"var_floor": params.var_floor})


def _nb_scores(model: TrainedModel, Z: np.ndarray) -> np.ndarray:
    a = model.arrays
    log_joint = np.log(a["priors"])[None, :] - 0.5 * (
        np.log(2 * np.pi * a["variances"])[None, :, :]
        + (Z[:, None, :] - a["means"][None, :, :]) ** 2 / a["variances"][None, :, :]
    ).sum(axis=2)
    return np.exp(log_joint[:, 1] - np.logaddexp(log_joint[:, 0], log_joint[:, 1]))


# -- random forest -----------------------------------------------------------

def _best_split(Z, y, idx, features, min_leaf):
    """Lowest weighted-Gini threshold split over ``features``; None if no
    feature admits a split respecting ``min_leaf``."""
    n = idx.size
    best = None
    for f in features:
        x = Z[idx, f]
        order = np.argsort(x, kind="stable")
        xs, ys = x[order], y[idx][order]
        ones_left = np.cumsum(ys)[:-1]
        n_left = np.arange(1, n)
        valid = xs[1:] > xs[:-1]
        valid &= (n_left >= min_leaf) & (n - n_left >= min_leaf)
        if not valid.any():
            continue
        n_right = n - n_left
        ones_right = ys.sum() - ones_left
        p_l = ones_left / n_left
        p_r = ones_right / n_right
        gini = (n_left * 2 * p_l * (1 - p_l) + n_right * 2 * p_r * (1 - p_r)) / n
        gini = np.where(valid, gini, np.inf)
        i = int(np.argmin(gini))
        if best is None or gini[i] < best[0]:
            best = (gini[i], f, 0.5 * (xs[i] + xs[i + 1]))
    return best


def _grow_tree(Z, y, idx, params: ModelParams, mtry, rng):
    feature, threshold, left, right, value = [], [], [], [], []

    def node(ids, depth):
        me = len(feature)
        feature.append(-1)
        threshold.append(0.0)
        left.append(-1)
        right.append(-1)
        ones = int(y[ids].sum())
        value.append(1.0 if 2 * ones > ids.size else 0.0)
        if ones in (0, ids.size) or ids.size < 2 * params.min_samples_leaf:
            return me
        if params.max_depth is not None and depth >= params.max_depth:
            return me
        order = rng.permutation(Z.shape[1])
        # like CART implementations, constant candidates do not use up the budget
        candidates = []
        for f in order:
            col = Z[ids, f]
            if col.max() > col.min():
                candidates.append(int(f))
                if len(candidates) == mtry:
                    break
        split = _best_split(Z, y, ids, candidates, params.min_samples_leaf)
        if split is None:
            return me
        _, f, t = split
        go_left = Z[ids, f] <= t
        feature[me] = f
        threshold[me] = t
        left[me] = node(ids[go_left], depth + 1)
        right[me] = node(ids[~go_left], depth + 1)
        return me

    node(idx, 0)
    return (np.array(feature, dtype=np.int64), np.array(threshold),
            np.array(left, dtype=np.int64), np.array(right, dtype=np.int64), np.array(value))


def train_random_forest(data: TrainingSet, params: ModelParams = ModelParams()) -> TrainedModel:
    _check_training(data)
    mean, scale = fit_standardizer(data.features)
    Z = (data.features - mean) / scale
    y = data.labels
    n, d = Z.shape
    mtry = params.features_per_split or max(1, int(math.sqrt(d)))
    mtry = min(mtry, d)
    trees = []
    for t in range(params.n_trees):
        rng = np.random.default_rng([params.seed, t])
        boot = rng.integers(0, n, size=n)
        trees.append(_grow_tree(Z, y, boot, params, mtry, rng))
    sizes = np.array([tr[0].size for tr in trees], dtype=np.int64)
    arrays = {name: np.concatenate([tr[i] for tr in trees])
              for i, name in enumerate(("feature", "threshold", "left", "right", "value"))}
    arrays["offsets"] = np.concatenate([[0], np.cumsum(sizes)[:-1]]).astype(np.int64)
    info = {"n_trees": params.n_trees, "max_depth": params.max_depth,
            "min_samples_leaf": params.min_samples_leaf, "features_per_split": mtry,
            "seed": params.seed}
    return TrainedModel("rf", data.feature_names, mean, scale, arrays, info)


def _rf_scores(model: TrainedModel, Z: np.ndarray) -> np.ndarray:
    a = model.arrays
    feature, threshold, left, right, value = (a[k] for k in ("feature", "threshold", "left", "right", "value"))
    votes = np.zeros(Z.shape[0])
    rows = np.arange(Z.shape[0])
    for off in a["offsets"].tolist():
        node = np.full(Z.shape[0], off, dtype=np.int64)
        while True:
            f = feature[node]
            inner = f >= 0
            if not inner.any():
                break
            r, nd = rows[inner], node[inner]
            go_left = Z[r, f[inner]] <= threshold[nd]
            node[inner] = off + np.where(go_left, left[nd], right[nd])
        votes += value[node]
    return votes / a["offsets"].size


# -- multilayer perceptron ---------------------------------------------------

def init_mlp(n_in: int, n_hidden: int, rng: np.random.Generator) -> dict:
    def glorot(fan_in, fan_out):
        lim = math.sqrt(6.0 / (fan_in + fan_out))
        return rng.uniform(-lim, lim, size=(fan_in, fan_out))

    return {"W1": glorot(n_in, n_hidden), "b1": np.zeros(n_hidden),
            "W2": glorot(n_hidden, 1), "b2": np.zeros(1)}


def mlp_logits(p: dict, Z: np.ndarray) -> np.ndarray:
    hidden = np.maximum(Z @ p["W1"] + p["b1"], 0.0)
    return (hidden @ p["W2"] + p["b2"]).ravel()


def mlp_loss(p: dict, Z: np.ndarray, y: np.ndarray, weight_decay: float) -> float:
    z = mlp_logits(p, Z)
    data = np.mean(np.logaddexp(0.0, z) - y * z)
    return float(data + 0.5 * weight_decay * ((p["W1"] ** 2).sum() + (p["W2"] ** 2).sum()))


def mlp_loss_and_grad(p: dict, Z: np.ndarray, y: np.ndarray, weight_decay: float):
    """Mean binary cross-entropy plus L2 penalty, and its gradient."""
    pre = Z @ p["W1"] + p["b1"]
    hidden = np.maximum(pre, 0.0)
    z = (hidden @ p["W2"] + p["b2"]).ravel()
    n = y.size
    loss = np.mean(np.logaddexp(0.0, z) - y * z)
    loss += 0.5 * weight_decay * ((p["W1"] ** 2).sum() + (p["W2"] ** 2).sum())
    dz = (1.0 / (1.0 + np.exp(-z)) - y) / n
    grad = {
        "W2": hidden.T @ dz[:, None] + weight_decay * p["W2"],
        "b2": np.array([dz.sum()]),
    }
    dpre = (dz[:, None] @ p["W2"].T) * (pre > 0)
    grad["W1"] = Z.T @ dpre + weight_decay * p["W1"]
    grad["b1"] = dpre.sum(axis=0)
    return float(loss), grad


def train_mlp(data: TrainingSet, params: ModelParams = ModelParams()) -> TrainedModel:
    """Adam on mini-batches; ``info['loss_trace'][0]`` is the loss at
    initialization, followed by the full-data loss after every epoch."""
    _check_training(data)
    mean, scale = fit_standardizer(data.features)
    Z = (data.features - mean) / scale
    y = data.labels.astype(np.float64)
    rng = np.random.default_rng(params.seed)
    p = init_mlp(Z.shape[1], params.hidden[0], rng)
    m = {k: np.zeros_like(v) for k, v in p.items()}
    v = {k: np.zeros_like(w) for k, w in p.items()}
    b1, b2, eps = 0.9, 0.999, 1e-8
    trace = [mlp_loss(p, Z, y, params.weight_decay)]
    step = 0
    # overflow is caught below as divergence
    with np.errstate(over="ignore", invalid="ignore"):
        for epoch in range(params.epochs):
            order = rng.permutation(y.size)
            for start in range(0, y.size, params.batch_size):
                batch = order[start:start + params.batch_size]
                _, g = mlp_loss_and_grad(p, Z[batch], y[batch], params.weight_decay)
                step += 1
                for k in p:
                    m[k] = b1 * m[k] + (1 - b1) * g[k]
                    v[k] = b2 * v[k] + (1 - b2) * g[k] ** 2
                    m_hat = m[k] / (1 - b1 ** step)
                    v_hat = v[k] / (1 - b2 ** step)
                    p[k] = p[k] - params.learning_rate * m_hat / (np.sqrt(v_hat) + eps)
            loss = mlp_loss(p, Z, y, params.weight_decay)
            if not math.isfinite(loss):
                raise TrainingDivergence(f"MLP loss became non-finite at epoch {epoch}")
            trace.append(loss)
    info = {"hidden": list(params.hidden), "learning_rate": params.learning_rate,
            "epochs": params.epochs, "batch_size": params.batch_size,
            "weight_decay": params.weight_decay, "seed": params.seed, "loss_trace": trace}
    return TrainedModel("mlp", data.feature_names, mean, scale, p, info)


def _mlp_scores(model: TrainedModel, Z: np.ndarray) -> np.ndarray:
    z = mlp_logits(model.arrays, Z)
    return 0.5 * (1.0 + np.tanh(0.5 * z))


# -- prediction ----------------------------------------------------------------

TRAINERS = {"nb": train_naive_bayes, "rf": train_random_forest, "mlp": train_mlp}
_SCORERS = {"nb": _nb_scores, "rf": _rf_scores, "mlp": _mlp_scores}


def train(kind: str, data: TrainingSet, params: ModelParams = ModelParams()) -> TrainedModel:
    if kind not in TRAINERS:
        raise ModelError(f"unknown model kind {kind!r}; expected one of {MODEL_KINDS}")
    return TRAINERS[kind](data, params)


def predict_scores(model: TrainedModel, X, feature_names: Sequence[str] | None = None) -> np.ndarray:
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    if feature_names is not None and tuple(feature_names) != model.feature_names:
        raise ModelError("feature schema does not match the model")
    if X.shape[1] != len(model.feature_names):
        raise ModelError(f"expected {len(model.feature_names)} features, got {X.shape[1]}")
    if not np.all(np.isfinite(X)):
        raise ModelError("non-finite feature values")
    return _SCORERS[model.kind](model, model.standardize(X))


def predict_score(model: TrainedModel, features) -> float:
    """Class-1 probability for one FeatureVector."""
    return float(predict_scores(model, features.values[None, :], features.names)[0])


# -- serialization -------------------------------------------------------------

_SCHEMA = {
    "nb": {"priors", "means", "variances"},
    "rf": {"feature", "threshold", "left", "right", "value", "offsets"},
    "mlp": {"W1", "b1", "W2", "b2"},
}


def _pack(arr: np.ndarray) -> dict:
    arr = np.ascontiguousarray(arr)
    return {"dtype": arr.dtype.str, "shape": list(arr.shape),
            "data": base64.b64encode(arr.tobytes()).decode("ascii")}


def _unpack(blob: dict) -> np.ndarray:
    raw = base64.b64decode(blob["data"], validate=True)
    arr = np.frombuffer(raw, dtype=np.dtype(blob["dtype"])).reshape(blob["shape"])
    return arr.copy()


def save_model(model: TrainedModel) -> bytes:
    doc = {
        "format": MODEL_FORMAT,
        "version": MODEL_VERSION,
        "kind": model.kind,
        "feature_names": list(model.feature_names),
        "info": model.info,
        "standardize": {"mean": _pack(model.mean), "scale": _pack(model.scale)},
        "arrays": {k: _pack(v) for k, v in sorted(model.arrays.items())},
    }
    return json.dumps(doc, indent=1, sort_keys=True).encode("utf-8")


def load_model(payload: bytes, expected_kind: str | None = None) -> TrainedModel:
    try:
        doc = json.loads(payload.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ModelError(f"malformed model payload: {exc}") from exc
    if not isinstance(doc, dict) or doc.get("format") != MODEL_FORMAT:
        raise ModelError("not a spcdmodel payload")
    if doc.get("version") != MODEL_VERSION:
        raise ModelError(f"unsupported model version {doc.get('version')!r}")
    kind = doc.get("kind")
    if kind not in _SCHEMA:
        raise ModelError(f"unknown model kind {kind!r}")
    if expected_kind is not None and kind != expected_kind:
        raise ModelError(f"payload holds a {kind!r} model, expected {expected_kind!r}")
    try:
        arrays = {k: _unpack(v) for k, v in doc["arrays"].items()}
        mean = _unpack(doc["standardize"]["mean"])
        scale = _unpack(doc["standardize"]["scale"])
        names = tuple(doc["feature_names"])
    except (KeyError, TypeError, ValueError) as exc:
        raise ModelError(f"malformed model payload: {exc}") from exc
    if set(arrays) != _SCHEMA[kind]:
        raise ModelError(f"parameter blocks {sorted(arrays)} do not match kind {kind!r}")
    if mean.shape != (len(names),) or scale.shape != (len(names),):
        raise ModelError("standardization statistics do not match the feature schema")
    return TrainedModel(kind, names, mean, scale, arrays, doc.get("info", {}))
