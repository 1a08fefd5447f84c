"""Bagged decision trees with exhaustive midpoint split search.

Each tree is grown on a bootstrap sample with feature subsampling at
every split (ceil(sqrt(d)) candidates for classification, ceil(d/3) for
regression). Class scores are the mean of per-tree leaf class
frequencies. Everything is a pure function of (data, params), so
repeated fits are bit-identical.

The split scan runs on the backend selected in ``_kernels`` (compiled or
pure python). A user-supplied impurity callable switches the affected
scan to a generic per-boundary path: exact but much slower, intended for
small experiments.
"""

from dataclasses import dataclass, field
from typing import Callable, Optional, Union

import numpy as np

from .. import _kernels
from ..errors import DataError, UsageError
from .model import _check_features


@dataclass
class ForestParams:
    n_trees: int = 100
    max_depth: int = 10
    seed: int = 0
    # None selects the task default (gini / variance); a callable is
    # evaluated per candidate child on class codes (classification) or
    # raw outcomes (regression)
    impurity: Optional[Union[str, Callable]] = None

    def validate(self):
        if self.n_trees < 1:
            raise UsageError("n_trees must be >= 1")
        if self.max_depth < 1:
            raise UsageError("max_depth must be >= 1")


@dataclass
class _Tree:
    feature: np.ndarray  # -1 marks leaves
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray  # (n_nodes, k) class frequencies or (n_nodes,) means

    def apply(self, X):
        node = np.zeros(X.shape[0], dtype=np.int64)
        while True:
            feat = self.feature[node]
            rows = np.nonzero(feat >= 0)[0]
            if rows.shape[0] == 0:
                return node
            cur = node[rows]
            go_left = X[rows, feat[rows]] <= self.threshold[cur]
            node[rows] = np.where(go_left, self.left[cur], self.right[cur])


class _TreeBuilder:
    def __init__(self, task, k):
        self.task = task
        self.k = k
        self.feature = []
        self.threshold = []
        self.left = []
        self.right = []
        self.value = []

    def add(self):
        nid = len(self.feature)
        self.feature.append(-1)
        self.threshold.append(0.0)
        self.left.append(-1)
        self.right.append(-1)
        self.value.append(None)
        return nid

    def finish(self):
        if self.task == "classification":
            value = np.array(self.value, dtype=np.float64).reshape(-1, self.k)
        else:
            value = np.array(self.value, dtype=np.float64)
        return _Tree(
            feature=np.array(self.feature, dtype=np.int64),
            threshold=np.array(self.threshold, dtype=np.float64),
            left=np.array(self.left, dtype=np.int64),
            right=np.array(self.right, dtype=np.int64),
            value=value,
        )


def _generic_best_split(X, idx, feats, targets, impurity_fn):
    """Slow reference split search for user-supplied impurity callables.

    Same semantics as the backends: evaluate every boundary between
    distinct sorted values, weighted child impurity, first strict
    improvement wins, features in draw order.
    """
    n = idx.shape[0]
    best = (-1, 0.0, np.inf)
    tn = targets[idx]
    for f in feats:
        vals = X[idx, f]
        order = np.argsort(vals, kind="stable")
        sv = vals[order]
        st = tn[order]
        nf = float(n)
        for i in range(1, n):
            if sv[i] == sv[i - 1]:
                continue
            il = impurity_fn(st[:i])
            ir = impurity_fn(st[i:])
            metric = (i / nf) * il + ((n - i) / nf) * ir
            if metric < best[2]:
                thr = 0.5 * (sv[i - 1] + sv[i])
                if thr == sv[i]:
                    thr = sv[i - 1]
                best = (int(f), thr, metric)
    return best


def _leaf_value(task, y_node, k):
    if task == "classification":
        counts = np.bincount(y_node, minlength=k)
        return counts / y_node.shape[0]
    return float(np.mean(y_node))


def _grow_tree(X, y, task, k, max_depth, m_try, rng, impurity_fn, rawlsian):
    builder = _TreeBuilder(task, k)
    d = X.shape[1]

    def build(idx, depth):
        nid = builder.add()
        y_node = y[idx]
        pure = bool(np.all(y_node == y_node[0]))
        if depth >= max_depth or idx.shape[0] < 2 or pure:
            builder.value[nid] = _leaf_value(task, y_node, k)
            return nid
        feats = rng.choice(d, size=m_try, replace=False).astype(np.int64)
        if impurity_fn is not None:
            feat, thr, _ = _generic_best_split(X, idx, feats, y, impurity_fn)
        elif rawlsian is not None:
            groups, n_groups, lam, mm_w, avg_w, mgs = rawlsian
            feat, thr, _ = _kernels.best_split_rawlsian(
                X, idx, feats, y, k, groups, n_groups, lam, mm_w, avg_w, mgs
            )
        elif task == "classification":
            feat, thr, _ = _kernels.best_split_classification(X, idx, feats, y, k)
        else:
            feat, thr, _ = _kernels.best_split_regression(X, idx, feats, y)
        if feat < 0:
            builder.value[nid] = _leaf_value(task, y_node, k)
            return nid
        mask = X[idx, feat] <= thr
        left_idx = idx[mask]
        right_idx = idx[~mask]
        builder.feature[nid] = feat
        builder.threshold[nid] = thr
        builder.value[nid] = _leaf_value(task, y_node, k)
        builder.left[nid] = build(left_idx, depth + 1)
        builder.right[nid] = build(right_idx, depth + 1)
        return nid

    build(np.arange(X.shape[0], dtype=np.int64), 0)
    return builder.finish()


def _bootstrap_indices(rng, n, weights):
    if weights is None:
        weights = np.ones(n)
    p = weights / weights.sum()
    return rng.choice(n, size=n, replace=True, p=p)


class ForestModel:
    kind = "forest"

    def __init__(self, task, trees, n_features, classes=None):
        self.task = task
        self.trees = trees
        self.n_features = n_features
        self.classes_ = classes

    def class_scores(self, X):
        X = _check_features(self, X)
        k = self.classes_.shape[0]
        acc = np.zeros((X.shape[0], k))
        for tree in self.trees:
            acc += tree.value[tree.apply(X)]
        return acc / len(self.trees)

    def predict(self, X):
        X = _check_features(self, X)
        if self.task == "classification":
            return self.classes_[np.argmax(self.class_scores(X), axis=1)]
        acc = np.zeros(X.shape[0])
        for tree in self.trees:
            acc += tree.value[tree.apply(X)]
        return acc / len(self.trees)

    def to_dict(self):
        return {
            "kind": self.kind,
            "task": self.task,
            "n_features": self.n_features,
            "classes": None if self.classes_ is None else self.classes_.tolist(),
            "trees": [
                {
                    "feature": t.feature.tolist(),
                    "threshold": t.threshold.tolist(),
                    "left": t.left.tolist(),
                    "right": t.right.tolist(),
                    "value": t.value.tolist(),
                }
                for t in self.trees
            ],
        }

    @classmethod
    def from_dict(cls, doc):
        trees = [
            _Tree(
                feature=np.array(t["feature"], dtype=np.int64),
                threshold=np.array(t["threshold"], dtype=np.float64),
                left=np.array(t["left"], dtype=np.int64),
                right=np.array(t["right"], dtype=np.int64),
                value=np.array(t["value"], dtype=np.float64),
            )
            for t in doc["trees"]
        ]
        classes = doc["classes"]
        return cls(
            task=doc["task"],
            trees=trees,
            n_features=doc["n_features"],
            classes=None if classes is None else np.array(classes),
        )


def grow_forest(X, y, task, params, *, sample_weight=None, rawlsian=None, classes=None):
    """Shared grower behind ``fit_forest`` and the fairness-aware fit.

    ``rawlsian`` is ``(group_ids, n_groups, lam, minimax_w, avg_w,
    min_group_size)``; when given, node impurity blends plain gini with
    the qualifying-group term.
    """
    params.validate()
    X = np.ascontiguousarray(X, dtype=np.float64)
    n, d = X.shape
    if n < 1:
        raise DataError("cannot fit a forest on an empty dataset")
    if task == "classification":
        if classes is None:
            classes = np.unique(y)
        k = classes.shape[0]
        code = {v: i for i, v in enumerate(classes.tolist())}
        y_codes = np.array([code[v] for v in np.asarray(y).tolist()], dtype=np.int64)
        targets = y_codes
        m_try = int(np.ceil(np.sqrt(d)))
    elif task == "regression":
        targets = np.asarray(y, dtype=np.float64)
        classes = None
        k = 0
        m_try = max(1, int(np.ceil(d / 3)))
    else:
        raise UsageError(f"unknown task: {task!r}")

    impurity_fn = params.impurity if callable(params.impurity) else None
    if isinstance(params.impurity, str) and params.impurity not in ("gini", "variance"):
        raise UsageError(f"unknown impurity: {params.impurity!r}")
    if rawlsian is not None and impurity_fn is not None:
        raise UsageError("rawlsian impurity and a custom impurity callable are exclusive")

    rng = np.random.default_rng(params.seed)
    trees = []
    for _ in range(params.n_trees):
        boot = _bootstrap_indices(rng, n, sample_weight)
        Xb = np.ascontiguousarray(X[boot])
        yb = targets[boot]
        raw = None
        if rawlsian is not None:
            groups, n_groups, lam, mm_w, avg_w, mgs = rawlsian
            raw = (groups[boot], n_groups, lam, mm_w, avg_w, mgs)
        trees.append(
            _grow_tree(Xb, yb, task, k, params.max_depth, m_try, rng, impurity_fn, raw)
        )
    return ForestModel(task=task, trees=trees, n_features=d, classes=classes)


def fit_forest(data, params, task):
    """Fit a bagged forest on a dataset with labels."""
    if data.labels is None:
        raise DataError("dataset has no labels")
    return grow_forest(data.features, data.labels, task, params)
