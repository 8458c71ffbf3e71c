"""Random forest of class-weighted Gini trees."""

from __future__ import annotations

from dataclasses import dataclass, asdict

import numpy as np

from ..aggregate import Aggregator, Sample
from ..errors import ConfigError, DimensionError
from .model import TrainedModel, check_labels


@dataclass
class ForestConfig:
    n_trees: int = 100
    max_features: int | None = None  # None: floor(sqrt(dim))
    bootstrap: bool = True
    class_weight: str | None = "balanced"
    max_depth: int | None = None
    min_samples_leaf: int = 1
    seed: int = 0

    def validate(self) -> "ForestConfig":
        if self.n_trees < 1:
            raise ConfigError("n_trees", "must be >= 1")
        if self.max_features is not None and self.max_features < 1:
            raise ConfigError("max_features", "must be >= 1")
        if self.class_weight not in (None, "balanced"):
            raise ConfigError("class_weight", "must be 'balanced' or null")
        if self.max_depth is not None and self.max_depth < 0:
            raise ConfigError("max_depth", "must be >= 0")
        if self.min_samples_leaf < 1:
            raise ConfigError("min_samples_leaf", "must be >= 1")
        return self

    def to_dict(self) -> dict:
        return asdict(self)


def class_weights(labels: np.ndarray, n_classes: int, mode: str | None) -> np.ndarray:
    """Per-class weights; 'balanced' gives n / (K * n_c)."""
    if mode is None:
        return np.ones(n_classes)
    counts = np.bincount(labels, minlength=n_classes).astype(np.float64)
    present = counts > 0
    w = np.zeros(n_classes)
    w[present] = len(labels) / (present.sum() * counts[present])
    return w


def gini(hist: np.ndarray) -> float:
    total = hist.sum()
    if total <= 0:
        return 0.0
    p = hist / total
    return 1.0 - float(np.dot(p, p))


def best_split(x: np.ndarray, y: np.ndarray, w: np.ndarray, n_classes: int, min_leaf: int = 1):
    """Best threshold on one feature by weighted Gini decrease.

    Returns ``(decrease, threshold)`` or None when no valid split exists.
    Rows with ``x <= threshold`` go left.
    """
    order = np.argsort(x, kind="stable")
    xs = x[order]
    onehot = np.zeros((len(x), n_classes))
    onehot[np.arange(len(x)), y[order]] = w[order]
    left = np.cumsum(onehot, axis=0)[:-1]
    total = onehot.sum(axis=0)
    right = total - left
    pos = np.arange(1, len(x))
    valid = (xs[:-1] < xs[1:]) & (pos >= min_leaf) & (len(x) - pos >= min_leaf)
    if not valid.any():
        return None
    wl = left.sum(axis=1)
    wr = right.sum(axis=1)
    with np.errstate(invalid="ignore", divide="ignore"):
        gl = 1.0 - ((left / wl[:, None]) ** 2).sum(axis=1)
        gr = 1.0 - ((right / wr[:, None]) ** 2).sum(axis=1)
    gl = np.where(wl > 0, gl, 0.0)
    gr = np.where(wr > 0, gr, 0.0)
    wt = total.sum()
    decrease = wt * gini(total) - wl * gl - wr * gr
    decrease = np.where(valid, decrease, -np.inf)
    i = int(np.argmax(decrease))
    lo, hi = xs[i], xs[i + 1]
    threshold = lo + (hi - lo) / 2.0
    if not threshold < hi:
        threshold = lo
    return float(decrease[i]), float(threshold)


class _TreeBuilder:
    def __init__(self, X, y, w, n_classes, max_features, max_depth, min_leaf, rng):
        self.X, self.y, self.w = X, y, w
        self.n_classes = n_classes
        self.max_features = max_features
        self.max_depth = max_depth
        self.min_leaf = min_leaf
        self.rng = rng

    def leaf(self, hist: np.ndarray) -> dict:
        return {"value": (hist / hist.sum()).tolist()}

    def grow(self, idx: np.ndarray, depth: int = 0) -> dict:
        y, w = self.y[idx], self.w[idx]
        hist = np.bincount(y, weights=w, minlength=self.n_classes)
        if (np.count_nonzero(hist) <= 1 or len(idx) < 2 * self.min_leaf
                or (self.max_depth is not None and depth >= self.max_depth)):
            return self.leaf(hist)
        best = None
        visited = 0
        for f in self.rng.permutation(self.X.shape[1]):
            if visited >= self.max_features and best is not None:
                break
            visited += 1
            col = self.X[idx, f]
            if col.min() == col.max():
                continue
            found = best_split(col, y, w, self.n_classes, self.min_leaf)
            if found is not None and (best is None or found[0] > best[0]):
                best = (found[0], int(f), found[1])
        if best is None:
            return self.leaf(hist)
        _, f, thr = best
        go_left = self.X[idx, f] <= thr
        return {"feature": f, "threshold": thr,
                "left": self.grow(idx[go_left], depth + 1),
                "right": self.grow(idx[~go_left], depth + 1)}


def tree_predict(node: dict, x: np.ndarray) -> np.ndarray:
    while "value" not in node:
        node = node["left"] if x[node["feature"]] <= node["threshold"] else node["right"]
    return np.asarray(node["value"])


def forest_train(embeddings, labels, config: ForestConfig | None = None,
                 aggregator: Aggregator | None = None, n_classes: int | None = None) -> TrainedModel:
    """Grow ``n_trees`` trees, each on its own bootstrap resample and derived seed."""
    config = (config or ForestConfig()).validate()
    labels = np.asarray(labels, dtype=np.int64)
    n_classes = check_labels(labels, n_classes)
    if len(embeddings) and isinstance(embeddings[0], Sample):
        if aggregator is None:
            raise ConfigError("strategy", "training on Samples needs an aggregator")
        X = aggregator.embed_all(embeddings)
    else:
        X = np.asarray(embeddings, dtype=np.float64)
    if X.ndim != 2 or len(X) != len(labels):
        raise DimensionError(f"embedding matrix {X.shape} vs {len(labels)} labels")
    n, dim = X.shape
    max_features = config.max_features or max(1, int(np.floor(np.sqrt(dim))))
    max_features = min(max_features, dim)
    cw = class_weights(labels, n_classes, config.class_weight)

    trees = []
    for child in np.random.SeedSequence(config.seed).spawn(config.n_trees):
        rng = np.random.default_rng(child)
        if config.bootstrap:
            counts = np.bincount(rng.integers(0, n, n), minlength=n).astype(np.float64)
        else:
            counts = np.ones(n)
        idx = np.flatnonzero(counts)
        builder = _TreeBuilder(X, labels, counts * cw[labels], n_classes, max_features,
                               config.max_depth, config.min_samples_leaf, rng)
        trees.append(builder.grow(idx))
    return TrainedModel(kind="forest", aggregator=aggregator, n_classes=n_classes,
                        forest_config=config, trees=trees, input_dim=dim)


def forest_predict_proba(model: TrainedModel, inputs) -> np.ndarray:
    if len(inputs) and isinstance(inputs[0], Sample):
        X = model.aggregator.embed_all(inputs)
    else:
        X = np.atleast_2d(np.asarray(inputs, dtype=np.float64))
    if X.shape[1] != model.input_dim:
        raise DimensionError(f"expected {model.input_dim}-dim input, got {X.shape[1]}")
    out = np.zeros((len(X), model.n_classes))
    for tree in model.trees:
        for i, x in enumerate(X):
            out[i] += tree_predict(tree, x)
    return out / len(model.trees)


def forest_predict(model: TrainedModel, x) -> tuple[int, np.ndarray]:
    batch = [x] if isinstance(x, Sample) else np.atleast_2d(np.asarray(x))
    probs = forest_predict_proba(model, batch)[0]
    return int(np.argmax(probs)), probs
