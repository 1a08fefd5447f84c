"""Fitted-model surface shared by all learners.

Models are immutable after fitting and expose:

- ``task``: ``"classification"`` or ``"regression"``
- ``class_scores(X)``: (n, k) probability table (classification only)
- ``predict(X)``: labels (argmax, ties to the lower class index) or
  point predictions
- ``to_dict()``: versioned JSON-ready document

Module-level ``class_scores`` / ``predict`` are thin dispatch wrappers so
callers do not need to know the concrete model class.
"""

import json

import numpy as np

from ..errors import UsageError

MODEL_FORMAT_VERSION = 1


def _check_features(model, X):
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != model.n_features:
        raise UsageError(
            f"expected {model.n_features} feature columns, got shape {X.shape}"
        )
    return X


def class_scores(model, X):
    """Per-class probability table of a classification model."""
    if model.task != "classification":
        raise UsageError("class_scores requires a classification model")
    return model.class_scores(X)


def predict(model, X, env=None):
    """Predicted labels (classification) or point predictions (regression).

    ``env`` is required only by environment-ensemble models, which use
    the per-row environment id as a meta-model input.
    """
    if getattr(model, "needs_env", False):
        if env is None:
            raise UsageError("this model requires per-row environment ids")
        return model.predict(X, np.asarray(env))
    if model.task == "classification":
        scores = model.class_scores(X)
        return model.classes_[np.argmax(scores, axis=1)]
    return model.predict(X)


def save_model(model, path):
    doc = {"format_version": MODEL_FORMAT_VERSION}
    doc.update(model.to_dict())
    with open(path, "w") as fh:
        json.dump(doc, fh)


def load_model(path):
    from .forest import ForestModel
    from .linear import LinearModel
    from .mlp import MlpModel

    with open(path) as fh:
        doc = json.load(fh)
    version = doc.get("format_version")
    if version != MODEL_FORMAT_VERSION:
        raise UsageError(f"unsupported model format version: {version!r}")
    kind = doc.get("kind")
    loaders = {
        "forest": ForestModel.from_dict,
        "linear": LinearModel.from_dict,
        "mlp": MlpModel.from_dict,
    }
    if kind not in loaders:
        raise UsageError(f"unsupported model kind: {kind!r}")
    return loaders[kind](doc)
