"""Evaluation: accuracy/MSE, per-group reports, and equity deltas.

Groups are identified by ``"feature=value"`` string keys; the part
before the first ``=`` names the sensitive feature, which is how
per-feature accuracy disparities are aggregated.
"""

from dataclasses import dataclass, field
from typing import Dict, List, Optional

import numpy as np

from .errors import UsageError


def evaluate(predictions, labels, task):
    """Accuracy for classification, mean squared error for regression."""
    predictions = np.asarray(predictions)
    labels = np.asarray(labels)
    if predictions.shape != labels.shape:
        raise UsageError("predictions and labels must have identical shape")
    if task == "classification":
        return float(np.mean(predictions == labels)) if labels.size else 0.0
    if task == "regression":
        diff = predictions.astype(np.float64) - labels.astype(np.float64)
        return float(np.mean(diff * diff)) if labels.size else 0.0
    raise UsageError(f"unknown task: {task!r}")


@dataclass
class GroupStat:
    key: str
    feature: str
    value: str
    size: int
    accuracy: float
    positive_rate: float
    small: bool  # below the reporting size floor; still included


@dataclass
class GroupReport:
    entries: List[GroupStat]
    disparities: Dict[str, float]
    overall_accuracy: float
    overall_positive_rate: float

    def stat(self, key):
        for entry in self.entries:
            if entry.key == key:
                return entry
        raise UsageError(f"unknown group key: {key!r}")


def _split_key(key):
    if "=" in key:
        feature, value = key.split("=", 1)
    else:
        feature, value = key, key
    return feature, value


def group_report(decisions, labels, groups, min_group_size=20):
    """Accuracy and positive-decision rate per group plus disparities.

    ``groups`` maps ``"feature=value"`` keys to boolean membership
    masks. Groups below ``min_group_size`` are reported but flagged
    ``small``. Disparity per feature is max - min group accuracy.
    """
    decisions = np.asarray(decisions)
    labels = np.asarray(labels)
    if decisions.shape != labels.shape:
        raise UsageError("decisions and labels must have identical shape")
    entries = []
    for key in sorted(groups):
        mask = np.asarray(groups[key], dtype=bool)
        if mask.shape != decisions.shape:
            raise UsageError(f"group mask {key!r} has wrong shape")
        size = int(np.count_nonzero(mask))
        feature, value = _split_key(key)
        if size == 0:
            entries.append(GroupStat(key, feature, value, 0, 0.0, 0.0, True))
            continue
        acc = float(np.mean(decisions[mask] == labels[mask]))
        rate = float(np.mean(decisions[mask] == 1))
        entries.append(
            GroupStat(key, feature, value, size, acc, rate, size < min_group_size)
        )
    disparities = {}
    for feature in sorted({e.feature for e in entries}):
        accs = [e.accuracy for e in entries if e.feature == feature and e.size > 0]
        disparities[feature] = (max(accs) - min(accs)) if accs else 0.0
    overall_acc = float(np.mean(decisions == labels)) if labels.size else 0.0
    overall_rate = float(np.mean(decisions == 1)) if labels.size else 0.0
    return GroupReport(entries, disparities, overall_acc, overall_rate)


@dataclass
class EquityDeltas:
    worst_off_rate_improvement_pct: Optional[float]
    gap_reduction_pct: Optional[float]
    overall_accuracy_delta: float
    worst_off_groups: List[str] = field(default_factory=list)
    best_off_groups: List[str] = field(default_factory=list)

    def to_dict(self):
        return {
            "worst_off_rate_improvement_pct": self.worst_off_rate_improvement_pct,
            "gap_reduction_pct": self.gap_reduction_pct,
            "overall_accuracy_delta": self.overall_accuracy_delta,
            "worst_off_groups": list(self.worst_off_groups),
            "best_off_groups": list(self.best_off_groups),
        }


def equity_deltas(base, treated, worst_off):
    """Positive-rate movement of the worst-off groups and the equity gap.

    ``worst_off`` lists group keys (typically the calibration's
    selection). The best-off side is the same number of groups with the
    highest baseline accuracy among the remaining ones, ties broken by
    key. Rates are aggregated as unweighted means over the listed
    groups. Undefined ratios (zero baseline rate or gap) are reported as
    None rather than raising.
    """
    worst_off = list(worst_off)
    if not worst_off:
        raise UsageError("worst_off must name at least one group")
    candidates = [e for e in base.entries if e.key not in set(worst_off) and e.size > 0]
    candidates.sort(key=lambda e: (-e.accuracy, e.key))
    best_off = [e.key for e in candidates[: len(worst_off)]]

    def mean_rate(report, keys):
        return sum(report.stat(k).positive_rate for k in keys) / len(keys)

    base_worst = mean_rate(base, worst_off)
    treated_worst = mean_rate(treated, worst_off)
    improvement = (
        None
        if base_worst == 0.0
        else (treated_worst - base_worst) / base_worst * 100.0
    )
    if best_off:
        gap_base = mean_rate(base, best_off) - base_worst
        gap_treated = mean_rate(treated, best_off) - treated_worst
        reduction = (
            None if gap_base == 0.0 else (gap_base - gap_treated) / gap_base * 100.0
        )
    else:
        reduction = None
    return EquityDeltas(
        worst_off_rate_improvement_pct=improvement,
        gap_reduction_pct=reduction,
        overall_accuracy_delta=treated.overall_accuracy - base.overall_accuracy,
        worst_off_groups=worst_off,
        best_off_groups=best_off,
    )
