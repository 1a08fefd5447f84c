"""Constraint-aware learning experiments.

Library plus experiment CLI covering: logical-constraint measurement and
repair on classifier score tables, counterfactual minimal-change
clamping and multi-environment ensembles for regressors, and
worst-off-group threshold calibration plus fairness-aware training for
a synthetic hiring task. The learners (forest, linear/logistic, mlp)
are self-contained and deterministic.
"""

from ._kernels import backend_name

__version__ = "0.1.0"

__all__ = ["backend_name", "__version__"]
