"""CART decision trees and random forests for depth regression and
10-class depth classification.

Trees are grown on bootstrap samples until leaves are pure or too small.
At every node the candidate features are a random permutation of all
features; the first ``max_features`` non-constant ones are evaluated
(constant features are skipped without counting). Split points are the
midpoints between consecutive distinct values and a sample goes left when
``x[feature] <= threshold``. Ties in split quality keep the first candidate.

Per-tree randomness comes from ``numpy.random.SeedSequence(seed).spawn``:
tree ``i`` uses ``Generator(PCG64(children[i]))`` for its bootstrap draw and
for every node's feature permutation, in depth-first (left before right)
node order.
"""

from __future__ import annotations

import enum
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from numba import njit

N_CLASSES = 10
FORMAT_NAME = "firntopo-forest"
FORMAT_VERSION = 1


class Task(str, enum.Enum):
    REGRESSION = "regression"
    CLASSIFICATION = "classification"


class MaxFeatures(str, enum.Enum):
    SQRT = "sqrt"
    ALL = "all"


@dataclass(frozen=True, eq=False)
class Dataset:
    features: np.ndarray
    labels: np.ndarray
    ids: tuple[str, ...] = ()

    def __post_init__(self):
        X = np.asarray(self.features, dtype=np.float64)
        if X.ndim == 1:
            X = X.reshape(-1, 1)
        y = np.asarray(self.labels)
        if X.ndim != 2 or y.ndim != 1 or len(y) != len(X):
            raise ValueError(f"inconsistent shapes: features {X.shape}, labels {y.shape}")
        ids = tuple(self.ids) if self.ids else tuple(str(i) for i in range(len(y)))
        if len(ids) != len(y):
            raise ValueError("ids and labels differ in length")
        object.__setattr__(self, "features", X)
        object.__setattr__(self, "labels", y)
        object.__setattr__(self, "ids", ids)

    def __len__(self) -> int:
        return len(self.labels)

    @property
    def n_features(self) -> int:
        return self.features.shape[1]


@dataclass(frozen=True)
class ForestConfig:
    task: Task = Task.CLASSIFICATION
    n_trees: int = 100
    max_features: MaxFeatures | None = None  # None: SQRT for classification, ALL for regression
    min_samples_leaf: int = 1
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "task", Task(self.task))
        if self.max_features is not None:
            object.__setattr__(self, "max_features", MaxFeatures(self.max_features))
        if self.n_trees < 1:
            raise ValueError("n_trees must be >= 1")
        if self.min_samples_leaf < 1:
            raise ValueError("min_samples_leaf must be >= 1")
        if not 0 <= self.seed < 2**64:
            raise ValueError("seed must be a 64-bit unsigned integer")

    @property
    def feature_rule(self) -> MaxFeatures:
        if self.max_features is not None:
            return self.max_features
        return MaxFeatures.SQRT if self.task is Task.CLASSIFICATION else MaxFeatures.ALL

    def n_candidates(self, n_features: int) -> int:
        if self.feature_rule is MaxFeatures.ALL:
            return n_features
        return max(1, int(math.sqrt(n_features)))


@dataclass(eq=False)
class Tree:
    """Flat node arrays; ``feature == -1`` marks a leaf whose prediction is ``value``."""

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray

    @property
    def n_nodes(self) -> int:
        return len(self.feature)

    @property
    def n_leaves(self) -> int:
        return int((self.feature < 0).sum())

    def apply(self, X: np.ndarray) -> np.ndarray:
        node = np.zeros(len(X), dtype=np.int64)
        rows = np.arange(len(X))
        active = self.feature[node] >= 0
        while active.any():
            r, n = rows[active], node[active]
            go_left = X[r, self.feature[n]] <= self.threshold[n]
            node[active] = np.where(go_left, self.left[n], self.right[n])
            active = self.feature[node] >= 0
        return node

    def predict(self, X: np.ndarray) -> np.ndarray:
        return self.value[self.apply(X)]


@dataclass(eq=False)
class Forest:
    task: Task
    n_features: int
    trees: list[Tree]
    # bootstrap row indices per tree, kept for out-of-bag scoring
    bootstraps: list[np.ndarray] = field(default_factory=list, repr=False)


# ---------------------------------------------------------------------------
# split search
# ---------------------------------------------------------------------------


@njit(cache=True)
def _label_totals(y, positions, classify, n_classes):
    counts = np.zeros(n_classes, dtype=np.int64)
    total = 0.0
    for p in positions:
        if classify:
            counts[np.int64(y[p])] += 1
        else:
            total += y[p]
    sq = 0
    for c in range(n_classes):
        sq += counts[c] * counts[c]
    return counts, sq, total


@njit(cache=True)
def _scan(sv, ys, counts, total_sq, total_sum, min_leaf, classify, left_counts, right_counts):
    """Best (score, threshold) along one feature given values ``sv`` in
    ascending order and the matching labels ``ys``. Score is -inf when no
    valid split exists."""
    n = sv.shape[0]
    left_counts[:] = 0
    right_counts[:] = counts
    sq_l = 0
    sq_r = total_sq
    sum_l = 0.0
    best = -np.inf
    best_thr = 0.0
    for i in range(n - 1):
        if classify:
            c = np.int64(ys[i])
            sq_l += 2 * left_counts[c] + 1
            sq_r -= 2 * right_counts[c] - 1
            left_counts[c] += 1
            right_counts[c] -= 1
        else:
            sum_l += ys[i]
        n_l = i + 1
        n_r = n - n_l
        if n_l < min_leaf:
            continue
        if n_r < min_leaf:
            break
        a = sv[i]
        b = sv[i + 1]
        if a == b:
            continue
        if classify:
            score = sq_l / n_l + sq_r / n_r
        else:
            sum_r = total_sum - sum_l
            score = sum_l * sum_l / n_l + sum_r * sum_r / n_r
        if score > best:
            best = score
            thr = a + (b - a) / 2.0
            if thr >= b:
                thr = a
            best_thr = thr
    return best, best_thr


@njit(cache=True)
def _best_split(XT, y, idx, perm, n_try, min_leaf, classify, n_classes):
    """Return (feature, threshold) of the best split over the candidate
    features, or (-1, 0.0) if none is valid. Sorts each candidate at the node."""
    n = idx.shape[0]
    vals = np.empty(n, dtype=np.float64)
    sv = np.empty(n, dtype=np.float64)
    ys = np.empty(n, dtype=np.float64)
    left_counts = np.zeros(n_classes, dtype=np.int64)
    right_counts = np.zeros(n_classes, dtype=np.int64)
    counts, total_sq, total_sum = _label_totals(y, idx, classify, n_classes)

    best_feat = -1
    best_thr = 0.0
    best_score = -np.inf
    visited = 0
    for f in perm:
        if visited >= n_try:
            break
        row = XT[f]
        lo = row[idx[0]]
        hi = lo
        for i in range(n):
            v = row[idx[i]]
            vals[i] = v
            if v < lo:
                lo = v
            elif v > hi:
                hi = v
        if lo == hi:
            continue
        visited += 1
        order = np.argsort(vals)
        for i in range(n):
            sv[i] = vals[order[i]]
            ys[i] = y[idx[order[i]]]
        score, thr = _scan(sv, ys, counts, total_sq, total_sum, min_leaf, classify, left_counts, right_counts)
        if score > best_score:
            best_score = score
            best_feat = f
            best_thr = thr
    return best_feat, best_thr


def feature_order(XT: np.ndarray) -> np.ndarray:
    """Row indices sorted by each feature (one row of the result per feature)."""
    return np.argsort(XT, axis=1, kind="stable")


@njit(cache=True)
def _bootstrap_order(G, rows, n_rows):
    """Bootstrap positions sorted by each feature, derived from the full-data
    order ``G`` in linear time. Ties keep row order, then position order."""
    n = rows.shape[0]
    first = np.zeros(n_rows + 1, dtype=np.int64)
    for p in range(n):
        first[rows[p] + 1] += 1
    for r in range(n_rows):
        first[r + 1] += first[r]
    fill = first[:-1].copy()
    pos = np.empty(n, dtype=np.int64)
    for p in range(n):
        pos[fill[rows[p]]] = p
        fill[rows[p]] += 1
    S = np.empty((G.shape[0], n), dtype=np.int64)
    for f in range(G.shape[0]):
        k = 0
        for r in G[f]:
            for j in range(first[r], first[r + 1]):
                S[f, k] = pos[j]
                k += 1
    return S


@njit(cache=True)
def _best_split_sorted(XT, y, S, start, end, perm, n_try, min_leaf, classify, n_classes):
    """As ``_best_split`` but the node's samples are ``S[f, start:end]``,
    already in ascending order of feature ``f``."""
    n = end - start
    sv = np.empty(n, dtype=np.float64)
    ys = np.empty(n, dtype=np.float64)
    left_counts = np.zeros(n_classes, dtype=np.int64)
    right_counts = np.zeros(n_classes, dtype=np.int64)
    counts, total_sq, total_sum = _label_totals(y, S[0, start:end], classify, n_classes)

    best_feat = -1
    best_thr = 0.0
    best_score = -np.inf
    visited = 0
    for f in perm:
        if visited >= n_try:
            break
        seg = S[f, start:end]
        row = XT[f]
        if row[seg[0]] == row[seg[n - 1]]:
            continue
        visited += 1
        for i in range(n):
            sv[i] = row[seg[i]]
            ys[i] = y[seg[i]]
        score, thr = _scan(sv, ys, counts, total_sq, total_sum, min_leaf, classify, left_counts, right_counts)
        if score > best_score:
            best_score = score
            best_feat = f
            best_thr = thr
    return best_feat, best_thr


@njit(cache=True)
def _partition(S, start, end, goes_left):
    """Stable in-place partition of every feature's segment; returns the
    number of samples sent left."""
    buf = np.empty(end - start, dtype=np.int64)
    n_left = 0
    for f in range(S.shape[0]):
        n_left = 0
        n_right = 0
        for i in range(start, end):
            p = S[f, i]
            if goes_left[p]:
                S[f, start + n_left] = p
                n_left += 1
            else:
                buf[n_right] = p
                n_right += 1
        for j in range(n_right):
            S[f, start + n_left + j] = buf[j]
    return n_left


def _leaf_value(y: np.ndarray, task: Task) -> float:
    if task is Task.CLASSIFICATION:
        return float(np.argmax(np.bincount(y.astype(np.int64), minlength=N_CLASSES)))
    return float(y.mean())


class _TreeBuilder:
    """Flat node lists filled in depth-first order."""

    def __init__(self, task: Task):
        self.task = task
        self.feature: list[int] = []
        self.threshold: list[float] = []
        self.left: list[int] = []
        self.right: list[int] = []
        self.value: list[float] = []

    def add(self, labels: np.ndarray) -> int:
        self.feature.append(-1)
        self.threshold.append(0.0)
        self.left.append(-1)
        self.right.append(-1)
        self.value.append(_leaf_value(labels, self.task))
        return len(self.feature) - 1

    def tree(self) -> Tree:
        return Tree(
            np.array(self.feature, dtype=np.int64),
            np.array(self.threshold, dtype=np.float64),
            np.array(self.left, dtype=np.int64),
            np.array(self.right, dtype=np.int64),
            np.array(self.value, dtype=np.float64),
        )


def grow_tree(
    X: np.ndarray,
    y: np.ndarray,
    rows: np.ndarray,
    cfg: ForestConfig,
    rng: np.random.Generator,
    XT: np.ndarray | None = None,
    presort: bool | None = None,
    order: np.ndarray | None = None,
) -> Tree:
    """Grow one CART tree on ``X[rows]`` (rows may repeat).

    With ``presort`` every feature is sorted once per tree and node segments
    are partitioned stably, which pays off when most features are candidates
    at each node. The default uses it exactly when all features are tried.
    Both paths choose the same splits, up to float rounding of label sums.
    ``order`` is ``feature_order(XT)``, passed in to share it across trees.
    """
    if XT is None:
        XT = np.ascontiguousarray(X.T)
    y = np.asarray(y, dtype=np.float64)
    n_features = XT.shape[0]
    n_try = cfg.n_candidates(n_features)
    if presort is None:
        presort = n_try == n_features
    if presort:
        if order is None:
            order = feature_order(XT)
        return _grow_presorted(XT, y, rows, cfg, rng, n_try, order)

    classify = cfg.task is Task.CLASSIFICATION
    min_leaf = cfg.min_samples_leaf
    out = _TreeBuilder(cfg.task)
    stack = [(out.add(y[rows]), rows)]
    while stack:
        node, node_rows = stack.pop()
        ny = y[node_rows]
        if len(node_rows) < 2 * min_leaf or ny.min() == ny.max():
            continue
        perm = rng.permutation(n_features)
        f, thr = _best_split(XT, y, node_rows, perm, n_try, min_leaf, classify, N_CLASSES)
        if f < 0:
            continue
        go_left = XT[f, node_rows] <= thr
        lrows, rrows = node_rows[go_left], node_rows[~go_left]
        out.feature[node], out.threshold[node] = int(f), float(thr)
        out.left[node] = out.add(y[lrows])
        out.right[node] = out.add(y[rrows])
        # right pushed first so the left subtree is expanded (and draws RNG) first
        stack.append((out.right[node], rrows))
        stack.append((out.left[node], lrows))
    return out.tree()


def _grow_presorted(XT, y, rows, cfg, rng, n_try, order) -> Tree:
    # work on the bootstrap sample itself: positions 0..n-1 index XbT and yb
    rows = np.asarray(rows, dtype=np.int64)
    XbT = np.ascontiguousarray(XT[:, rows])
    yb = y[rows]
    S = _bootstrap_order(order, rows, XT.shape[1])
    n_features = XbT.shape[0]
    classify = cfg.task is Task.CLASSIFICATION
    min_leaf = cfg.min_samples_leaf
    out = _TreeBuilder(cfg.task)
    stack = [(out.add(yb), 0, len(yb))]
    while stack:
        node, start, end = stack.pop()
        ny = yb[S[0, start:end]]
        if end - start < 2 * min_leaf or ny.min() == ny.max():
            continue
        perm = rng.permutation(n_features)
        f, thr = _best_split_sorted(XbT, yb, S, start, end, perm, n_try, min_leaf, classify, N_CLASSES)
        if f < 0:
            continue
        mid = start + _partition(S, start, end, XbT[f] <= thr)
        out.feature[node], out.threshold[node] = int(f), float(thr)
        out.left[node] = out.add(yb[S[0, start:mid]])
        out.right[node] = out.add(yb[S[0, mid:end]])
        stack.append((out.right[node], mid, end))
        stack.append((out.left[node], start, mid))
    return out.tree()


def tree_rngs(seed: int, n_trees: int) -> list[np.random.Generator]:
    return [np.random.Generator(np.random.PCG64(s)) for s in np.random.SeedSequence(seed).spawn(n_trees)]


def _check_labels(data: Dataset, task: Task) -> np.ndarray:
    y = np.asarray(data.labels, dtype=np.float64)
    if task is Task.CLASSIFICATION:
        if np.any(y != np.round(y)) or y.min() < 0 or y.max() >= N_CLASSES:
            raise ValueError(f"class labels must be integers in [0, {N_CLASSES})")
    return y


def fit(data: Dataset, cfg: ForestConfig, bootstrap: bool = True) -> Forest:
    """Train ``cfg.n_trees`` trees, each on its own bootstrap sample.

    ``bootstrap=False`` grows every tree on the full data set (used to check
    memorization); feature subsampling still applies.
    """
    if len(data) == 0:
        raise ValueError("cannot fit a forest on an empty dataset")
    if data.n_features == 0:
        raise ValueError("dataset has no features")
    y = _check_labels(data, cfg.task)
    X = data.features
    XT = np.ascontiguousarray(X.T)
    n = len(data)
    presort = cfg.n_candidates(data.n_features) == data.n_features
    order = feature_order(XT) if presort else None
    trees, boots = [], []
    for rng in tree_rngs(cfg.seed, cfg.n_trees):
        rows = rng.integers(0, n, size=n) if bootstrap else np.arange(n)
        trees.append(grow_tree(X, y, rows, cfg, rng, XT=XT, presort=presort, order=order))
        boots.append(rows)
    return Forest(cfg.task, data.n_features, trees, boots)


def _as_matrix(forest: Forest, X) -> tuple[np.ndarray, bool]:
    X = np.asarray(X, dtype=np.float64)
    single = X.ndim == 1
    if single:
        X = X.reshape(1, -1)
    if X.ndim != 2 or X.shape[1] != forest.n_features:
        raise ValueError(f"expected {forest.n_features} features per row, got shape {X.shape}")
    return X, single


def _aggregate(task: Task, per_tree: np.ndarray) -> np.ndarray:
    """Combine a (n_trees, n_rows) prediction matrix."""
    if task is Task.REGRESSION:
        return per_tree.mean(axis=0)
    votes = np.zeros((per_tree.shape[1], N_CLASSES), dtype=np.int64)
    cols = np.arange(per_tree.shape[1])
    for row in per_tree.astype(np.int64):
        np.add.at(votes, (cols, row), 1)
    return np.argmax(votes, axis=1).astype(np.float64)  # first max = smallest class


def predict(forest: Forest, X):
    """Mean of tree outputs (regression) or plurality vote (classification).

    Accepts a single row or a 2D matrix; a single row gives a scalar.
    """
    X, single = _as_matrix(forest, X)
    out = _aggregate(forest.task, np.stack([t.predict(X) for t in forest.trees]))
    if forest.task is Task.CLASSIFICATION:
        out = out.astype(np.int64)
    return out[0] if single else out


def oob_predictions(forest: Forest, data: Dataset) -> tuple[np.ndarray, np.ndarray]:
    """Out-of-bag predictions; returns (predictions, mask of rows with any OOB tree)."""
    X, _ = _as_matrix(forest, data.features)
    n = len(X)
    if forest.task is Task.REGRESSION:
        sums = np.zeros(n)
        counts = np.zeros(n, dtype=np.int64)
    else:
        votes = np.zeros((n, N_CLASSES), dtype=np.int64)
    for tree, rows in zip(forest.trees, forest.bootstraps):
        oob = np.ones(n, dtype=bool)
        oob[rows] = False
        if not oob.any():
            continue
        p = tree.predict(X[oob])
        if forest.task is Task.REGRESSION:
            sums[oob] += p
            counts[oob] += 1
        else:
            np.add.at(votes, (np.flatnonzero(oob), p.astype(np.int64)), 1)
    if forest.task is Task.REGRESSION:
        mask = counts > 0
        return np.where(mask, sums / np.maximum(counts, 1), np.nan), mask
    mask = votes.sum(axis=1) > 0
    return np.argmax(votes, axis=1), mask


def oob_score(forest: Forest, data: Dataset) -> float:
    pred, mask = oob_predictions(forest, data)
    return metrics(pred[mask], np.asarray(data.labels)[mask], forest.task)


def metrics(predictions: Sequence, truths: Sequence, task: Task | str) -> float:
    """MAE for regression, percent correct for classification."""
    p = np.asarray(predictions, dtype=np.float64)
    t = np.asarray(truths, dtype=np.float64)
    if p.shape != t.shape:
        raise ValueError("predictions and truths differ in length")
    if p.size == 0:
        raise ValueError("no predictions to score")
    if Task(task) is Task.REGRESSION:
        return float(np.mean(np.abs(p - t)))
    return float(np.mean(p == t) * 100.0)


# ---------------------------------------------------------------------------
# serialization
# ---------------------------------------------------------------------------


def forest_to_dict(forest: Forest) -> dict:
    return {
        "format": FORMAT_NAME,
        "version": FORMAT_VERSION,
        "task": forest.task.value,
        "n_features": forest.n_features,
        "trees": [
            {
                "feature": t.feature.tolist(),
                "threshold": t.threshold.tolist(),
                "left": t.left.tolist(),
                "right": t.right.tolist(),
                "value": t.value.tolist(),
            }
            for t in forest.trees
        ],
    }


def forest_from_dict(doc: dict) -> Forest:
    if doc.get("format") != FORMAT_NAME:
        raise ValueError("not a serialized forest")
    if doc.get("version") != FORMAT_VERSION:
        raise ValueError(f"unsupported forest format version {doc.get('version')}")
    trees = [
        Tree(
            np.array(t["feature"], dtype=np.int64),
            np.array(t["threshold"], dtype=np.float64),
            np.array(t["left"], dtype=np.int64),
            np.array(t["right"], dtype=np.int64),
            np.array(t["value"], dtype=np.float64),
        )
        for t in doc["trees"]
    ]
    return Forest(Task(doc["task"]), int(doc["n_features"]), trees)


def save_forest(forest: Forest, path) -> None:
    Path(path).write_text(json.dumps(forest_to_dict(forest)))


def load_forest(path) -> Forest:
    return forest_from_dict(json.loads(Path(path).read_text()))
