"""Small feedforward binary classifier trained with Adam.

Full-batch training: one Adam step per epoch. Dropout (inverted scaling)
is active only while training; fresh masks are drawn each epoch from the
seeded generator, so a fit is a pure function of (data, params).

The batch loss is pluggable: ``loss(logits, y01) -> (value,
dvalue/dlogits)`` with ``y01`` the labels mapped to {0, 1}. The default
is mean binary cross-entropy evaluated on logits.
"""

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from ..errors import DataError, UsageError
from .model import _check_features

_ADAM_B1 = 0.9
_ADAM_B2 = 0.999
_ADAM_EPS = 1e-8


@dataclass
class MlpParams:
    hidden_dim: int = 64
    hidden_layers: int = 3
    dropout_rate: float = 0.2
    epochs: int = 100
    learning_rate: float = 0.001
    seed: int = 0
    loss: Optional[Callable] = None

    def validate(self):
        if not 0.0 <= self.dropout_rate < 1.0:
            raise UsageError("dropout_rate must be in [0, 1)")
        if self.learning_rate <= 0.0:
            raise UsageError("learning_rate must be positive")
        if self.hidden_dim < 1 or self.hidden_layers < 0 or self.epochs < 0:
            raise UsageError("hidden_dim >= 1, hidden_layers >= 0, epochs >= 0 required")


def _sigmoid(z):
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def mean_bce_loss(logits, y01):
    """Mean binary cross-entropy on logits; the default batch loss."""
    n = logits.shape[0]
    loss = float(np.mean(np.logaddexp(0.0, logits) - y01 * logits))
    dlogits = (_sigmoid(logits) - y01) / n
    return loss, dlogits


def _init_weights(rng, d, params):
    layers = []
    fan_in = d
    for _ in range(params.hidden_layers):
        W = rng.standard_normal((fan_in, params.hidden_dim)) * np.sqrt(2.0 / fan_in)
        # small positive bias keeps relu units off the exact kink even
        # when a whole row of the previous activation is zero
        b = np.full(params.hidden_dim, 0.01)
        layers.append([W, b])
        fan_in = params.hidden_dim
    W = rng.standard_normal((fan_in, 1)) * np.sqrt(1.0 / fan_in)
    layers.append([W, np.zeros(1)])
    return layers


def forward_logits(layers, X, dropout_masks=None):
    """Logits plus the per-layer activations needed for backprop."""
    a = X
    acts = [a]
    for li, (W, b) in enumerate(layers[:-1]):
        h = np.maximum(a @ W + b, 0.0)
        if dropout_masks is not None:
            h = h * dropout_masks[li]
        acts.append(h)
        a = h
    W, b = layers[-1]
    z = (a @ W + b).ravel()
    return z, acts


def backprop(layers, acts, dlogits, dropout_masks=None):
    grads = []
    delta = dlogits[:, None]
    for li in range(len(layers) - 1, -1, -1):
        W, _ = layers[li]
        a = acts[li]
        gW = a.T @ delta
        gb = delta.sum(axis=0)
        grads.append([gW, gb])
        if li > 0:
            delta = delta @ W.T
            h = acts[li]
            delta = delta * (h > 0.0)
            if dropout_masks is not None:
                delta = delta * dropout_masks[li - 1]
    grads.reverse()
    return grads


def loss_and_grad(layers, X, y01, loss_fn):
    """Loss and weight gradients without dropout (used by gradient checks)."""
    z, acts = forward_logits(layers, X)
    loss, dlogits = loss_fn(z, y01)
    return loss, backprop(layers, acts, dlogits)


def train_mlp(X, y01, params, loss_fn):
    params.validate()
    rng = np.random.default_rng(params.seed)
    layers = _init_weights(rng, X.shape[1], params)
    m = [[np.zeros_like(W), np.zeros_like(b)] for W, b in layers]
    v = [[np.zeros_like(W), np.zeros_like(b)] for W, b in layers]
    keep = 1.0 - params.dropout_rate
    for t in range(1, params.epochs + 1):
        masks = None
        if params.dropout_rate > 0.0:
            masks = [
                (rng.random((X.shape[0], params.hidden_dim)) < keep) / keep
                for _ in range(params.hidden_layers)
            ]
        z, acts = forward_logits(layers, X, masks)
        _, dlogits = loss_fn(z, y01)
        grads = backprop(layers, acts, dlogits, masks)
        c1 = 1.0 - _ADAM_B1**t
        c2 = 1.0 - _ADAM_B2**t
        for li in range(len(layers)):
            for pi in range(2):
                g = grads[li][pi]
                m[li][pi] = _ADAM_B1 * m[li][pi] + (1.0 - _ADAM_B1) * g
                v[li][pi] = _ADAM_B2 * v[li][pi] + (1.0 - _ADAM_B2) * (g * g)
                mhat = m[li][pi] / c1
                vhat = v[li][pi] / c2
                layers[li][pi] = layers[li][pi] - params.learning_rate * mhat / (
                    np.sqrt(vhat) + _ADAM_EPS
                )
    return layers


class MlpModel:
    kind = "mlp"

    def __init__(self, layers, n_features, classes, score_transform=None):
        self.task = "classification"
        self.layers = layers
        self.n_features = n_features
        self.classes_ = classes
        # optional post-hoc transform of the (n, 2) score table; set by
        # the logic-guided trainer so inference always emits repaired scores
        self.score_transform = score_transform

    def class_scores(self, X):
        X = _check_features(self, X)
        z, _ = forward_logits(self.layers, X)
        p = _sigmoid(z)
        scores = np.column_stack([1.0 - p, p])
        if self.score_transform is not None:
            scores = self.score_transform(scores)
        return scores

    def predict(self, X):
        return self.classes_[np.argmax(self.class_scores(X), axis=1)]

    def to_dict(self):
        return {
            "kind": self.kind,
            "task": self.task,
            "n_features": self.n_features,
            "classes": self.classes_.tolist(),
            "layers": [[W.tolist(), b.tolist()] for W, b in self.layers],
        }

    @classmethod
    def from_dict(cls, doc):
        layers = [
            [np.array(W, dtype=np.float64), np.array(b, dtype=np.float64)]
            for W, b in doc["layers"]
        ]
        return cls(
            layers=layers,
            n_features=doc["n_features"],
            classes=np.array(doc["classes"]),
        )


def binary_targets(labels):
    classes = np.unique(labels)
    if classes.shape[0] != 2:
        raise UsageError(f"binary labels required, got {classes.shape[0]} classes")
    code = {v: i for i, v in enumerate(classes.tolist())}
    y01 = np.array([code[v] for v in np.asarray(labels).tolist()], dtype=np.float64)
    return classes, y01


def fit_mlp(data, params):
    """Train the feedforward binary classifier."""
    if data.labels is None:
        raise DataError("dataset has no labels")
    X = np.asarray(data.features, dtype=np.float64)
    if X.shape[0] < 1:
        raise DataError("cannot fit an mlp on an empty dataset")
    classes, y01 = binary_targets(data.labels)
    loss_fn = params.loss if params.loss is not None else mean_bce_loss
    layers = train_mlp(X, y01, params, loss_fn)
    return MlpModel(layers, X.shape[1], classes)
