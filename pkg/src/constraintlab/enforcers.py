"""Post-hoc repairs of model outputs.

Four mechanisms: mutual-exclusion projection and implication transfer on
class-score tables, minimal-change clamping of counterfactual
predictions, and worst-off-group threshold calibration for binary
decisions. None of them refit the underlying model.
"""

from dataclasses import dataclass, field
from math import floor
from typing import Dict, List, Optional

import numpy as np

from .constraints import RepairConfig  # noqa: F401  (re-exported for callers)
from .errors import UsageError

EXCLUSION_EPS = 1e-6


def apply_mutual_exclusion(scores, cs):
    """Project rows onto the feasible region of the exclusion pairs.

    For every pair whose two scores both strictly exceed tau, the lower
    score is multiplied by (1 - rho); if the product still exceeds tau
    it is set to tau - 1e-6, so the output never violates any exclusion
    pair. On an exact tie the higher class index is treated as the lower
    score. Pairs are processed in declaration order on updated values.
    The higher score is never touched, so each row's argmax survives.
    """
    out = np.array(scores, dtype=np.float64)
    if out.shape[0] == 0:
        return out
    cs.validate(out.shape[1])
    for a, b in cs.exclusions:
        pa = out[:, a]
        pb = out[:, b]
        active = (pa > cs.tau) & (pb > cs.tau)
        if not np.any(active):
            continue
        a_lower = active & ((pa < pb) | ((pa == pb) & (a > b)))
        b_lower = active & ~a_lower
        for col, mask in ((a, a_lower), (b, b_lower)):
            reduced = out[mask, col] * (1.0 - cs.rho)
            reduced = np.where(reduced > cs.tau, cs.tau - EXCLUSION_EPS, reduced)
            out[mask, col] = reduced
    return out


def apply_implication_transfer(scores, cs):
    """Raise consequent scores of violated implication edges.

    For each edge a->b with p_a > tau and p_b < tau, set
    p_b += min(rho * p_a, tau - p_b). Edges are processed in declaration
    order on updated values; antecedents are never modified. The
    transfer caps the consequent at tau, so a single pass cannot fix a
    row whose consequent started more than rho * p_a below tau; applying
    the transfer again moves such residual rows further.
    """
    out = np.array(scores, dtype=np.float64)
    if out.shape[0] == 0:
        return out
    cs.validate(out.shape[1])
    for a, b in cs.implications:
        pa = out[:, a]
        pb = out[:, b]
        active = (pa > cs.tau) & (pb < cs.tau)
        if not np.any(active):
            continue
        delta = np.minimum(cs.rho * pa[active], cs.tau - pb[active])
        # the min with tau pins the capped case to exactly tau (the sum
        # can otherwise overshoot by one ulp)
        out[active, b] = np.minimum(pb[active] + delta, cs.tau)
    return out


def repair_counterfactuals(factual, cf, config):
    """Clamp counterfactual predictions into factual +- tau_cf.

    Entries already inside the band are returned bit-identical; entries
    outside are moved to the band edge on their side. The factual
    predictions are never modified, and the repair is idempotent.
    """
    config.validate()
    factual = np.asarray(factual, dtype=np.float64)
    cf = np.asarray(cf, dtype=np.float64)
    if factual.ndim != 1 or cf.ndim != 2 or cf.shape[0] != factual.shape[0]:
        raise UsageError("factual must be (n,) and cf (n, T-1)")
    base = np.broadcast_to(factual[:, None], cf.shape)
    dev = cf - base
    clamped = base + np.sign(dev) * config.tau_cf
    # rounding of base + tau can overshoot the band by one ulp; nudge
    # back so the clamp bound |out - factual| <= tau holds exactly
    over = np.abs(clamped - base) > config.tau_cf
    clamped = np.where(over, np.nextafter(clamped, base), clamped)
    return np.where(np.abs(dev) <= config.tau_cf, cf, clamped)


@dataclass
class CalibrationConfig:
    min_group_size: int = 20
    validation_split: float = 0.20
    min_accuracy_retention: float = 0.90
    worst_off_fraction: float = 1.0 / 3.0
    max_worst_off_groups: int = 5
    threshold_step: float = 0.02
    minimax_weight: float = 0.70
    average_weight: float = 0.30
    per_group_mode: bool = False
    seed: int = 0

    def validate(self):
        if abs(self.minimax_weight + self.average_weight - 1.0) > 1e-9:
            raise UsageError("minimax_weight + average_weight must equal 1")
        steps = round(1.0 / self.threshold_step)
        if steps < 2 or abs(steps * self.threshold_step - 1.0) > 1e-9:
            raise UsageError("threshold_step must divide (0, 1) into a finite grid")
        if self.min_group_size < 1:
            raise UsageError("min_group_size must be >= 1")

    def grid(self):
        steps = round(1.0 / self.threshold_step)
        return [i * self.threshold_step for i in range(1, steps) if i * self.threshold_step < 1.0]


@dataclass
class ThresholdPolicy:
    default_threshold: float = 0.5
    worst_off_groups: List[str] = field(default_factory=list)
    shared_worst_off_threshold: Optional[float] = None
    per_group_thresholds: Optional[Dict[str, float]] = None
    infeasible: bool = False

    def to_dict(self):
        return {
            "default_threshold": self.default_threshold,
            "worst_off_groups": list(self.worst_off_groups),
            "shared_worst_off_threshold": self.shared_worst_off_threshold,
            "per_group_thresholds": self.per_group_thresholds,
            "infeasible": self.infeasible,
        }


def _as_masks(groups, n):
    out = {}
    for key, mask in groups.items():
        mask = np.asarray(mask, dtype=bool)
        if mask.shape != (n,):
            raise UsageError(f"group mask {key!r} has wrong shape")
        out[str(key)] = mask
    return out


def _accuracy(dec, labels):
    if dec.shape[0] == 0:
        return 0.0
    return int(np.count_nonzero(dec == labels)) / dec.shape[0]


def _sample_thresholds(policy, groups, n):
    """Per-sample threshold under a policy; default everywhere it does
    not apply. A member of several worst-off groups takes the threshold
    of the earliest group in the policy's ordering."""
    thr = np.full(n, policy.default_threshold)
    if policy.infeasible:
        return thr
    if policy.per_group_thresholds is not None:
        assigned = np.zeros(n, dtype=bool)
        for key in policy.worst_off_groups:
            mask = groups[key] & ~assigned
            thr[mask] = policy.per_group_thresholds[key]
            assigned |= groups[key]
    elif policy.shared_worst_off_threshold is not None:
        member = np.zeros(n, dtype=bool)
        for key in policy.worst_off_groups:
            member |= groups[key]
        thr[member] = policy.shared_worst_off_threshold
    return thr


def apply_threshold_policy(scores, groups, policy):
    """Binary decisions 1[p > threshold]; strict inequality."""
    scores = np.asarray(scores, dtype=np.float64)
    groups = _as_masks(groups, scores.shape[0])
    thr = _sample_thresholds(policy, groups, scores.shape[0])
    return (scores > thr).astype(np.int64)


def select_worst_off_groups(scores, labels, groups, config):
    """Bottom fraction of groups by accuracy at the default threshold.

    Only groups meeting the size floor are eligible; the count is
    floor(eligible * worst_off_fraction), at least 1, capped at
    max_worst_off_groups; ties break by group key order. Returns an
    empty list when no group is eligible.
    """
    config.validate()
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    groups = _as_masks(groups, scores.shape[0])
    base_dec = (scores > 0.5).astype(np.int64)
    eligible = []
    for key in sorted(groups):
        size = int(np.count_nonzero(groups[key]))
        if size >= config.min_group_size:
            acc = _accuracy(base_dec[groups[key]], labels[groups[key]])
            eligible.append((acc, key))
    if not eligible:
        return []
    eligible.sort()
    k_w = min(
        config.max_worst_off_groups, max(1, floor(len(eligible) * config.worst_off_fraction))
    )
    return [key for _, key in eligible[:k_w]]


def calibrate_rawlsian_thresholds(scores, labels, groups, config):
    """Grid-search decision thresholds for the worst-off groups.

    Inputs are the held-out calibration split: positive-class scores,
    binary labels, and one boolean membership mask per (sensitive
    feature, value) group. Steps: baseline per-group accuracy at 0.5;
    worst-off selection (bottom fraction of groups meeting the size
    floor, capped, ties by key order); grid search of a shared threshold
    for worst-off members maximizing
    ``minimax_weight * min_g acc_g + average_weight * mean_g acc_g``
    subject to overall accuracy retention; among maximizers the
    threshold closest to 0.5 wins, the lower one on ties. With
    ``per_group_mode`` the worst-off groups are optimized one at a time
    in selection order under the same rule.
    """
    config.validate()
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    n = scores.shape[0]
    groups = _as_masks(groups, n)

    base_dec = (scores > 0.5).astype(np.int64)
    a_all0 = _accuracy(base_dec, labels)
    floor_acc = config.min_accuracy_retention * a_all0

    worst = select_worst_off_groups(scores, labels, groups, config)
    if not worst:
        return ThresholdPolicy(infeasible=True)

    if config.per_group_mode:
        return _calibrate_per_group(scores, labels, groups, worst, config, floor_acc)
    return _calibrate_shared(scores, labels, groups, worst, config, floor_acc)


def _objective(accs, config):
    return config.minimax_weight * min(accs) + config.average_weight * (
        sum(accs) / len(accs)
    )


def _calibrate_shared(scores, labels, groups, worst, config, floor_acc):
    n = scores.shape[0]
    member = np.zeros(n, dtype=bool)
    for key in worst:
        member |= groups[key]
    best = None  # (objective, dist, t)
    for t in config.grid():
        dec = np.where(member, scores > t, scores > 0.5).astype(np.int64)
        if _accuracy(dec, labels) < floor_acc:
            continue
        accs = [_accuracy(dec[groups[g]], labels[groups[g]]) for g in worst]
        obj = _objective(accs, config)
        dist = abs(t - 0.5)
        if (
            best is None
            or obj > best[0]
            or (obj == best[0] and (dist < best[1] or (dist == best[1] and t < best[2])))
        ):
            best = (obj, dist, t)
    if best is None:
        return ThresholdPolicy(worst_off_groups=worst, infeasible=True)
    return ThresholdPolicy(
        worst_off_groups=worst, shared_worst_off_threshold=best[2]
    )


def _calibrate_per_group(scores, labels, groups, worst, config, floor_acc):
    thresholds = {key: 0.5 for key in worst}

    def decisions():
        policy = ThresholdPolicy(
            worst_off_groups=worst, per_group_thresholds=thresholds
        )
        thr = _sample_thresholds(policy, groups, scores.shape[0])
        return (scores > thr).astype(np.int64)

    for key in worst:
        best = None
        for t in config.grid():
            thresholds[key] = t
            dec = decisions()
            if _accuracy(dec, labels) < floor_acc:
                continue
            accs = [_accuracy(dec[groups[g]], labels[groups[g]]) for g in worst]
            obj = _objective(accs, config)
            dist = abs(t - 0.5)
            if (
                best is None
                or obj > best[0]
                or (obj == best[0] and (dist < best[1] or (dist == best[1] and t < best[2])))
            ):
                best = (obj, dist, t)
        thresholds[key] = best[2] if best is not None else 0.5
    return ThresholdPolicy(worst_off_groups=worst, per_group_thresholds=dict(thresholds))
