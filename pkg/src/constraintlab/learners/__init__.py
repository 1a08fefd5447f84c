from .forest import ForestModel, ForestParams, fit_forest, grow_forest
from .linear import LinearModel, fit_linear, fit_logistic
from .mlp import MlpModel, MlpParams, fit_mlp, mean_bce_loss
from .model import class_scores, load_model, predict, save_model

__all__ = [
    "ForestModel",
    "ForestParams",
    "LinearModel",
    "MlpModel",
    "MlpParams",
    "class_scores",
    "fit_forest",
    "fit_linear",
    "fit_logistic",
    "fit_mlp",
    "grow_forest",
    "load_model",
    "mean_bce_loss",
    "predict",
    "save_model",
]
