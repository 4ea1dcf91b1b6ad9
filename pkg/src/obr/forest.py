"""Bagged decision-tree forest over encoded cell features."""

from __future__ import annotations

import json
import logging
import math
from collections import Counter
from dataclasses import dataclass, field

import numpy as np

log = logging.getLogger(__name__)

MODEL_VERSION = 1
N_FEATURES = 7


class ModelFormatError(ValueError):
    pass


@dataclass
class Tree:
    feat: np.ndarray  # -1 marks a leaf
    thresh: np.ndarray
    left: np.ndarray
    right: np.ndarray
    label: np.ndarray  # class index at leaves, -1 elsewhere

    def apply(self, X: np.ndarray) -> np.ndarray:
        """Leaf class index for every row of ``X``."""
        node = np.zeros(len(X), dtype=np.int64)
        rows = np.arange(len(X))
        while True:
            f = self.feat[node]
            inner = f >= 0
            if not inner.any():
                return self.label[node]
            go_left = X[rows[inner], f[inner]] <= self.thresh[node[inner]]
            node[inner] = np.where(go_left, self.left[node[inner]], self.right[node[inner]])

    def to_json(self, classes: list[str]) -> dict:
        nodes = []
        for k in range(len(self.feat)):
            if self.feat[k] < 0:
                nodes.append({"feat": -1, "thresh": 0.0, "left": -1, "right": -1,
                              "label": classes[int(self.label[k])]})
            else:
                nodes.append({"feat": int(self.feat[k]), "thresh": float(self.thresh[k]),
                              "left": int(self.left[k]), "right": int(self.right[k])})
        return {"nodes": nodes}

    @classmethod
    def from_json(cls, doc: dict, class_index: dict[str, int]) -> "Tree":
        nodes = doc["nodes"]
        n = len(nodes)
        feat, thresh = np.full(n, -1, np.int64), np.zeros(n)
        left, right, label = np.full(n, -1, np.int64), np.full(n, -1, np.int64), np.full(n, -1, np.int64)
        for k, nd in enumerate(nodes):
            if "label" in nd and nd["label"] is not None:
                label[k] = class_index[nd["label"]]
            else:
                f = int(nd["feat"])
                if not 0 <= f < N_FEATURES:
                    raise ModelFormatError(f"node {k} queries feature {f}")
                feat[k], thresh[k] = f, float(nd["thresh"])
                left[k], right[k] = int(nd["left"]), int(nd["right"])
        return cls(feat, thresh, left, right, label)


@dataclass
class ForestModel:
    trees: list[Tree]
    classes: list[str]
    seed: int
    max_depth: int
    max_features: int
    meta: dict = field(default_factory=dict)

    @property
    def n_trees(self) -> int:
        return len(self.trees)

    def votes(self, X) -> np.ndarray:
        """(rows, classes) vote counts."""
        X = np.asarray(X, dtype=np.float64).reshape(-1, N_FEATURES)
        counts = np.zeros((len(X), len(self.classes)), dtype=np.int64)
        rows = np.arange(len(X))
        for t in self.trees:
            np.add.at(counts, (rows, t.apply(X)), 1)
        return counts

    def predict(self, X) -> list[tuple[str, float]]:
        """Majority label and vote fraction per row; ties go to the smallest label."""
        counts = self.votes(X)
        # classes are sorted, so argmax's first-index rule is the lexicographic tie-break
        best = np.argmax(counts, axis=1)
        return [(self.classes[b], counts[i, b] / self.n_trees) for i, b in enumerate(best)]

    def to_json(self) -> str:
        doc = {
            "version": MODEL_VERSION,
            "seed": self.seed,
            "n_trees": self.n_trees,
            "max_depth": self.max_depth,
            "max_features": self.max_features,
            "classes": self.classes,
            "meta": self.meta,
            "trees": [t.to_json(self.classes) for t in self.trees],
        }
        return json.dumps(doc, ensure_ascii=False, sort_keys=True, separators=(",", ":")) + "\n"

    @classmethod
    def from_json(cls, s: str) -> "ForestModel":
        try:
            doc = json.loads(s)
        except json.JSONDecodeError as e:
            raise ModelFormatError(f"model is not valid JSON: {e}") from e
        if doc.get("version") != MODEL_VERSION:
            raise ModelFormatError(f"unsupported model version {doc.get('version')!r}")
        classes = list(doc["classes"])
        index = {c: i for i, c in enumerate(classes)}
        trees = [Tree.from_json(t, index) for t in doc["trees"]]
        if len(trees) != doc["n_trees"]:
            raise ModelFormatError("n_trees does not match the stored trees")
        return cls(trees, classes, doc["seed"], doc["max_depth"], doc["max_features"], doc.get("meta", {}))


def _gini_from_counts(counts: np.ndarray, totals: np.ndarray) -> np.ndarray:
    with np.errstate(divide="ignore", invalid="ignore"):
        p = counts / totals[..., None]
        g = 1.0 - (p * p).sum(axis=-1)
    return np.where(totals > 0, g, 0.0)


def _best_split(X, y, n_classes, feats):
    """Best (gain, feature, threshold) over ``feats``; ``None`` when no feature varies."""
    m = len(y)
    parent = _gini_from_counts(np.bincount(y, minlength=n_classes)[None, :].astype(float), np.array([m]))[0]
    onehot = np.zeros((m, n_classes))
    onehot[np.arange(m), y] = 1
    best = None
    for f in feats:
        col = X[:, f]
        vals = np.unique(col)
        if vals.size < 2:
            continue
        thresholds = (vals[:-1] + vals[1:]) / 2
        # class counts left of each threshold
        pos = np.searchsorted(vals, col)
        per_val = np.zeros((vals.size, n_classes))
        np.add.at(per_val, pos, onehot)
        left = np.cumsum(per_val, axis=0)[:-1]
        right = per_val.sum(axis=0) - left
        nl, nr = left.sum(axis=1), right.sum(axis=1)
        child = (nl * _gini_from_counts(left, nl) + nr * _gini_from_counts(right, nr)) / m
        k = int(np.argmin(child))
        gain = parent - child[k]
        if best is None or gain > best[0] + 1e-12:
            best = (gain, int(f), float(thresholds[k]))
    return best


def _grow(X, y, n_classes, max_depth, max_features, rng) -> Tree:
    feat, thresh, left, right, label = [], [], [], [], []

    def new_node():
        feat.append(-1)
        thresh.append(0.0)
        left.append(-1)
        right.append(-1)
        label.append(-1)
        return len(feat) - 1

    def leaf(k, idx):
        label[k] = int(np.argmax(np.bincount(y[idx], minlength=n_classes)))

    root = new_node()
    stack = [(root, np.arange(len(y)), 0)]
    while stack:
        k, idx, depth = stack.pop()
        ys = y[idx]
        if depth >= max_depth or np.all(ys == ys[0]):
            leaf(k, idx)
            continue
        perm = rng.permutation(N_FEATURES)
        split = _best_split(X[idx], ys, n_classes, perm[:max_features])
        if split is None or split[0] <= 1e-12:
            # like common CART implementations: keep drawing features until one splits
            split = _best_split(X[idx], ys, n_classes, perm)
        if split is None or split[0] <= 1e-12:
            leaf(k, idx)
            continue
        _, f, t = split
        go_left = X[idx, f] <= t
        lk, rk = new_node(), new_node()
        feat[k], thresh[k], left[k], right[k] = f, t, lk, rk
        # right pushed first so the left subtree is numbered first
        stack.append((rk, idx[~go_left], depth + 1))
        stack.append((lk, idx[go_left], depth + 1))
    return Tree(np.array(feat), np.array(thresh), np.array(left), np.array(right), np.array(label))


def train_forest(rows, labels, n_trees: int = 50, max_depth: int = 8, seed: int = 42,
                 max_features: int | None = None) -> ForestModel:
    """Fit ``n_trees`` Gini trees, each on a bootstrap resample of the rows.

    Every node considers a random subset of ``ceil(sqrt(7)) = 3`` features.
    All randomness derives from ``seed``. Single-class input yields a
    constant model and logs a warning. ``meta["oob_accuracy"]`` is the
    out-of-bag accuracy (``None`` if no row was ever out of bag).
    """
    X = np.asarray(rows, dtype=np.float64).reshape(-1, N_FEATURES)
    if len(X) == 0:
        raise ValueError("no training rows")
    if len(labels) != len(X):
        raise ValueError("rows and labels differ in length")
    if max_features is None:
        max_features = math.ceil(math.sqrt(N_FEATURES))
    classes = sorted(set(labels))
    index = {c: i for i, c in enumerate(classes)}
    y = np.array([index[c] for c in labels], dtype=np.int64)
    if len(classes) < 2:
        log.warning("single-class training data; the model always predicts %r", classes[0])
    master = np.random.default_rng(seed)
    m = len(y)
    draws = [(master.integers(0, m, size=m), int(master.integers(2**63 - 1))) for _ in range(n_trees)]
    trees = []
    oob = np.zeros((m, len(classes)), dtype=np.int64)
    for boot, tree_seed in draws:
        tree = _grow(X[boot], y[boot], len(classes), max_depth, max_features, np.random.default_rng(tree_seed))
        trees.append(tree)
        out = np.ones(m, dtype=bool)
        out[boot] = False
        if out.any():
            np.add.at(oob, (np.nonzero(out)[0], tree.apply(X[out])), 1)
    seen = oob.sum(axis=1) > 0
    oob_acc = float((np.argmax(oob[seen], axis=1) == y[seen]).mean()) if seen.any() else None
    meta = {
        "n_rows": m,
        "class_counts": dict(sorted(Counter(labels).items())),
        "oob_accuracy": None if oob_acc is None else round(oob_acc, 6),
    }
    return ForestModel(trees, classes, seed, max_depth, max_features, meta)


def classify(model: ForestModel, row) -> tuple[str, float]:
    return model.predict([row])[0]
