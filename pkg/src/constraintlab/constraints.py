"""Declarative logical constraints over class-score tables.

Two constraint forms are supported: mutual exclusion (two classes may
not both score above the activation threshold) and implication edges
(confidence in the antecedent obliges minimum confidence in the
consequent). All comparisons against the threshold are strict, so a
score exactly at the threshold never counts as active or violating.

Rates over an empty evaluation set are defined as 0.
"""

from dataclasses import dataclass, field
from typing import List, Tuple

import numpy as np

from .errors import UsageError


@dataclass
class ConstraintSet:
    """Mutual-exclusion pairs and implication edges with shared tau/rho.

    ``exclusions`` holds unordered class-index pairs; ``implications``
    holds ordered (antecedent, consequent) edges, processed in
    declaration order by the enforcers. Declare chains root-first so
    transfers cascade in one pass.
    """

    exclusions: List[Tuple[int, int]] = field(default_factory=list)
    implications: List[Tuple[int, int]] = field(default_factory=list)
    tau: float = 0.4
    rho: float = 0.3

    def validate(self, n_classes=None):
        if not 0.0 < self.tau < 1.0:
            raise UsageError("tau must lie in (0, 1)")
        if not 0.0 < self.rho < 1.0:
            raise UsageError("rho must lie in (0, 1)")
        for a, b in list(self.exclusions) + list(self.implications):
            if a == b:
                raise UsageError(f"self-pair ({a}, {b}) is not a valid constraint")
            if n_classes is not None and not (
                0 <= a < n_classes and 0 <= b < n_classes
            ):
                raise UsageError(
                    f"constraint ({a}, {b}) out of range for {n_classes} classes"
                )

    @property
    def empty(self):
        return not self.exclusions and not self.implications


@dataclass
class RepairConfig:
    """Minimal-change threshold for counterfactual repair (outcome units)."""

    tau_cf: float = 1.0

    def validate(self):
        if not self.tau_cf > 0.0:
            raise UsageError("tau_cf must be positive")


def violation_score(row, pair, tau):
    """min of the two scores when both strictly exceed tau, else 0."""
    a, b = pair
    pa, pb = row[a], row[b]
    if pa > tau and pb > tau:
        return float(min(pa, pb))
    return 0.0


def per_sample_violation_scores(scores, cs):
    """Per-row sum of the exclusion-pair violation scores (the V of the
    penalized training objective). Implication edges do not contribute."""
    scores = _scores_2d(scores)
    if scores.shape[0] == 0:
        return np.zeros(0)
    cs.validate(scores.shape[1])
    v = np.zeros(scores.shape[0])
    for a, b in cs.exclusions:
        pa = scores[:, a]
        pb = scores[:, b]
        gate = (pa > cs.tau) & (pb > cs.tau)
        v += np.where(gate, np.minimum(pa, pb), 0.0)
    return v


def _scores_2d(scores):
    scores = np.asarray(scores, dtype=np.float64)
    if scores.ndim != 2:
        raise UsageError("scores must be a 2-d table")
    return scores


def exclusion_violation_rate(scores, cs):
    """Fraction of rows where any exclusion pair has both scores > tau."""
    scores = _scores_2d(scores)
    if scores.shape[0] == 0:
        return 0.0
    cs.validate(scores.shape[1])
    hit = np.zeros(scores.shape[0], dtype=bool)
    for a, b in cs.exclusions:
        hit |= (scores[:, a] > cs.tau) & (scores[:, b] > cs.tau)
    return float(np.mean(hit))


def implication_violation_rate(scores, cs):
    """Fraction of rows where some edge a->b has p_a > tau and p_b < tau."""
    scores = _scores_2d(scores)
    if scores.shape[0] == 0:
        return 0.0
    cs.validate(scores.shape[1])
    hit = np.zeros(scores.shape[0], dtype=bool)
    for a, b in cs.implications:
        hit |= (scores[:, a] > cs.tau) & (scores[:, b] < cs.tau)
    return float(np.mean(hit))


def counterfactual_violation_rate(factual, cf, config):
    """Mean of 1(max_t' |cf - factual| > tau_cf) over rows."""
    config.validate()
    factual = np.asarray(factual, dtype=np.float64)
    cf = np.asarray(cf, dtype=np.float64)
    if factual.ndim != 1 or cf.ndim != 2 or cf.shape[0] != factual.shape[0]:
        raise UsageError("factual must be (n,) and cf (n, T-1)")
    if factual.shape[0] == 0:
        return 0.0
    swing = np.max(np.abs(cf - factual[:, None]), axis=1)
    return float(np.mean(swing > config.tau_cf))


def env_mse_variance(per_env_mse):
    """Population variance across held-out environment MSEs."""
    v = np.asarray(per_env_mse, dtype=np.float64)
    if v.size <= 1:
        return 0.0
    return float(np.mean((v - np.mean(v)) ** 2))
