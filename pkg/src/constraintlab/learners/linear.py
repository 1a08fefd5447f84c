"""Least-squares regression and logistic classification.

Regression solves ordinary least squares directly. Classification runs
full-batch gradient descent with backtracking line search until the loss
delta falls below 1e-8 (capped at 10,000 iterations), which keeps the
fit deterministic on tiny datasets. Binary problems use a single sigmoid
score; three or more classes use softmax.
"""

import numpy as np

from ..errors import DataError, UsageError
from .model import _check_features

_TOL = 1e-8
_MAX_ITER = 10_000


def _sigmoid(z):
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def _softmax(Z):
    Z = Z - Z.max(axis=1, keepdims=True)
    E = np.exp(Z)
    return E / E.sum(axis=1, keepdims=True)


def _descend(objective, w0):
    """Monotone gradient descent with per-step backtracking."""
    w = w0
    loss, grad = objective(w)
    for _ in range(_MAX_ITER):
        step = 1.0
        while True:
            w_new = w - step * grad
            loss_new, grad_new = objective(w_new)
            if loss_new <= loss:
                break
            step *= 0.5
            if step < 1e-12:
                return w  # no descent direction left
        delta = loss - loss_new
        w, loss, grad = w_new, loss_new, grad_new
        if delta < _TOL:
            break
    return w


class LinearModel:
    kind = "linear"

    def __init__(self, task, weights, n_features, classes=None):
        self.task = task
        self.weights = weights  # (d+1,) or (d+1, k); row 0 is the intercept
        self.n_features = n_features
        self.classes_ = classes

    def _design(self, X):
        return np.hstack([np.ones((X.shape[0], 1)), X])

    def class_scores(self, X):
        X = _check_features(self, X)
        k = self.classes_.shape[0]
        if k == 1:
            return np.ones((X.shape[0], 1))
        A = self._design(X)
        if k == 2:
            p = _sigmoid(A @ self.weights)
            return np.column_stack([1.0 - p, p])
        return _softmax(A @ self.weights)

    def predict(self, X):
        X = _check_features(self, X)
        if self.task == "classification":
            return self.classes_[np.argmax(self.class_scores(X), axis=1)]
        return self._design(X) @ self.weights

    def to_dict(self):
        return {
            "kind": self.kind,
            "task": self.task,
            "n_features": self.n_features,
            "classes": None if self.classes_ is None else self.classes_.tolist(),
            "weights": np.asarray(self.weights).tolist(),
        }

    @classmethod
    def from_dict(cls, doc):
        classes = doc["classes"]
        return cls(
            task=doc["task"],
            weights=np.array(doc["weights"], dtype=np.float64),
            n_features=doc["n_features"],
            classes=None if classes is None else np.array(classes),
        )


def _binary_objective(A, y01, extra=None):
    def objective(w):
        z = A @ w
        p = _sigmoid(z)
        # log(1+e^z) - y z, evaluated stably
        loss = float(np.mean(np.logaddexp(0.0, z) - y01 * z))
        dz = (p - y01) / y01.shape[0]
        grad = A.T @ dz
        if extra is not None:
            e_loss, e_dz = extra(z, p)
            loss += e_loss
            grad = grad + A.T @ e_dz
        return loss, grad

    return objective


def _softmax_objective(A, codes, k, extra=None):
    n = codes.shape[0]
    Y = np.zeros((n, k))
    Y[np.arange(n), codes] = 1.0

    def objective(W):
        Z = A @ W
        P = _softmax(Z)
        logp = Z - Z.max(axis=1, keepdims=True)
        logp = logp - np.log(np.exp(logp).sum(axis=1, keepdims=True))
        loss = float(-np.mean(logp[np.arange(n), codes]))
        dZ = (P - Y) / n
        grad = A.T @ dZ
        if extra is not None:
            e_loss, e_dZ = extra(Z, P)
            loss += e_loss
            grad = grad + A.T @ e_dZ
        return loss, grad

    return objective


def fit_logistic(X, y, *, classes=None, extra_binary=None, extra_softmax=None):
    """Classification fit shared with the constraint-aware trainer.

    ``extra_*`` add a differentiable penalty: they receive the logit
    matrix and current probabilities and return (loss, dloss/dlogits).
    """
    X = np.asarray(X, dtype=np.float64)
    n, d = X.shape
    if classes is None:
        classes = np.unique(y)
    k = classes.shape[0]
    A = np.hstack([np.ones((n, 1)), X])
    if k == 1:
        weights = np.zeros(d + 1)
    elif k == 2:
        code = {v: i for i, v in enumerate(classes.tolist())}
        y01 = np.array([code[v] for v in np.asarray(y).tolist()], dtype=np.float64)
        weights = _descend(_binary_objective(A, y01, extra_binary), np.zeros(d + 1))
    else:
        code = {v: i for i, v in enumerate(classes.tolist())}
        codes = np.array([code[v] for v in np.asarray(y).tolist()], dtype=np.int64)
        weights = _descend(
            _softmax_objective(A, codes, k, extra_softmax), np.zeros((d + 1, k))
        )
    return LinearModel("classification", weights, d, classes=classes)


def fit_least_squares(X, y):
    """Ordinary least squares on a raw matrix (used by the ensembles)."""
    X = np.asarray(X, dtype=np.float64)
    A = np.hstack([np.ones((X.shape[0], 1)), X])
    weights, *_ = np.linalg.lstsq(A, np.asarray(y, dtype=np.float64), rcond=None)
    return LinearModel("regression", weights, X.shape[1])


def fit_linear(data, task, seed=0):
    """Least squares (regression) or logistic regression (classification).

    ``seed`` is accepted for interface symmetry; both solvers are
    deterministic without it.
    """
    if data.labels is None:
        raise DataError("dataset has no labels")
    X = np.asarray(data.features, dtype=np.float64)
    if X.shape[0] < 1:
        raise DataError("cannot fit a linear model on an empty dataset")
    if task == "regression":
        return fit_least_squares(X, data.labels)
    if task == "classification":
        return fit_logistic(X, data.labels)
    raise UsageError(f"unknown task: {task!r}")
