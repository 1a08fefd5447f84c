"""Training-time constraint integration.

Gradient learners take the constraint penalty (or the group-decomposed
fairness loss) directly in their objective; the forest takes it through
iterative exponential reweighting of the bootstrap, or through a blended
node impurity. The logic layer composes the two output repairs and can
run inside an mlp forward pass with gradients flowing through the
reductions and transfers (the clamps contribute zero gradient).
"""

from dataclasses import dataclass

import numpy as np

from .constraints import per_sample_violation_scores
from .enforcers import EXCLUSION_EPS, apply_implication_transfer, apply_mutual_exclusion
from .errors import UsageError
from .learners.forest import ForestParams, grow_forest
from .learners.linear import fit_least_squares, fit_logistic
from .learners.mlp import (
    MlpModel,
    MlpParams,
    _sigmoid,
    binary_targets,
    mean_bce_loss,
    train_mlp,
)
from .learners.model import _check_features


# ---------------------------------------------------------------------------
# logic layer


def logic_layer(scores, cs):
    """Mutual-exclusion projection followed by implication transfer.

    The exclusion step runs first and transfers cap consequents at tau,
    so the output never violates an exclusion pair. Classes not named in
    any constraint are returned untouched.
    """
    return apply_implication_transfer(apply_mutual_exclusion(scores, cs), cs)


def logic_layer_with_jacobian(scores, cs):
    """Logic layer plus per-row Jacobian d(out)/d(scores).

    Reductions multiply the corresponding Jacobian row by (1 - rho),
    transfers add rho times the antecedent's row, and both clamp cases
    (tau - eps, transfer capped at tau) zero it.
    """
    out = np.array(scores, dtype=np.float64)
    n, k = out.shape
    J = np.tile(np.eye(k), (n, 1, 1))
    cs.validate(k)
    for a, b in cs.exclusions:
        pa = out[:, a]
        pb = out[:, b]
        active = (pa > cs.tau) & (pb > cs.tau)
        a_lower = active & ((pa < pb) | ((pa == pb) & (a > b)))
        b_lower = active & ~a_lower
        for col, mask in ((a, a_lower), (b, b_lower)):
            rows = np.nonzero(mask)[0]
            if rows.shape[0] == 0:
                continue
            reduced = out[rows, col] * (1.0 - cs.rho)
            clamped = reduced > cs.tau
            out[rows, col] = np.where(clamped, cs.tau - EXCLUSION_EPS, reduced)
            J[rows, col, :] *= 1.0 - cs.rho
            J[rows[clamped], col, :] = 0.0
    for a, b in cs.implications:
        pa = out[:, a]
        pb = out[:, b]
        active = (pa > cs.tau) & (pb < cs.tau)
        rows = np.nonzero(active)[0]
        if rows.shape[0] == 0:
            continue
        room = cs.tau - pb[rows]
        transfer = cs.rho * pa[rows]
        capped = transfer >= room
        out[rows, b] = np.minimum(pb[rows] + np.minimum(transfer, room), cs.tau)
        free = rows[~capped]
        J[free, b, :] += cs.rho * J[free, a, :]
        J[rows[capped], b, :] = 0.0
    return out, J


# ---------------------------------------------------------------------------
# constraint-aware fitting (penalized loss / iterative reweighting)


@dataclass
class ConstraintLossConfig:
    lam: float = 1.0
    alpha: float = 2.0
    rounds: int = 3

    def validate(self):
        if not (np.isfinite(self.lam) and self.lam >= 0.0):
            raise UsageError("lam must be finite and >= 0")
        if not (np.isfinite(self.alpha) and self.alpha >= 0.0):
            raise UsageError("alpha must be finite and >= 0")
        if self.rounds < 1:
            raise UsageError("rounds must be >= 1")


def violation_weights(v, alpha):
    """Per-sample weights exp(-alpha * v)."""
    return np.exp(-alpha * np.asarray(v, dtype=np.float64))


def _binary_penalty(cs, lam):
    """Penalty hook for the 2-class sigmoid trainer: scores are
    (1 - p, p), and the gate derivative is taken as zero."""

    def extra(z, p):
        scores = np.column_stack([1.0 - p, p])
        n = z.shape[0]
        loss = 0.0
        dv_dp = np.zeros(n)
        for a, b in cs.exclusions:
            sa = scores[:, a]
            sb = scores[:, b]
            gate = (sa > cs.tau) & (sb > cs.tau)
            v = np.where(gate, np.minimum(sa, sb), 0.0)
            loss += float(np.mean(v))
            a_min = sa <= sb
            dmin_dp = np.where(a_min, -1.0 if a == 0 else 1.0, -1.0 if b == 0 else 1.0)
            dv_dp += np.where(gate, dmin_dp, 0.0)
        dz = lam * dv_dp * p * (1.0 - p) / n
        return lam * loss, dz

    return extra


def _softmax_penalty(cs, lam):
    """Penalty hook for the softmax trainer."""

    def extra(Z, P):
        n = Z.shape[0]
        loss = 0.0
        dP = np.zeros_like(P)
        for a, b in cs.exclusions:
            sa = P[:, a]
            sb = P[:, b]
            gate = (sa > cs.tau) & (sb > cs.tau)
            v = np.where(gate, np.minimum(sa, sb), 0.0)
            loss += float(np.mean(v))
            a_min = sa <= sb
            dP[:, a] += np.where(gate & a_min, 1.0, 0.0)
            dP[:, b] += np.where(gate & ~a_min, 1.0, 0.0)
        # chain through softmax: dz_c = p_c * (dP_c - sum_m dP_m p_m)
        inner = np.sum(dP * P, axis=1, keepdims=True)
        dZ = lam * P * (dP - inner) / n
        return lam * loss, dZ

    return extra


def _mlp_penalty_loss(cs, lam):
    def loss_fn(z, y01):
        base_loss, base_dz = mean_bce_loss(z, y01)
        p = _sigmoid(z)
        scores = np.column_stack([1.0 - p, p])
        n = z.shape[0]
        vloss = 0.0
        dv_dp = np.zeros(n)
        for a, b in cs.exclusions:
            sa = scores[:, a]
            sb = scores[:, b]
            gate = (sa > cs.tau) & (sb > cs.tau)
            v = np.where(gate, np.minimum(sa, sb), 0.0)
            vloss += float(np.mean(v))
            a_min = sa <= sb
            dmin_dp = np.where(a_min, -1.0 if a == 0 else 1.0, -1.0 if b == 0 else 1.0)
            dv_dp += np.where(gate, dmin_dp, 0.0)
        loss = base_loss + lam * vloss
        dz = base_dz + lam * dv_dp * p * (1.0 - p) / n
        return loss, dz

    return loss_fn


def constraint_aware_fit(base, data, cs, config, params=None):
    """Fit a learner whose training penalizes mutual-exclusion violations.

    Gradient learners (mlp, logistic) minimize base loss plus
    lam * mean(V); the forest refits on exponentially reweighted
    bootstraps for ``rounds`` iterations with weights exp(-alpha * V).
    V sums the per-pair violation scores; implication edges do not enter
    the penalty.
    """
    config.validate()
    if base == "forest":
        params = params or ForestParams()
        model = grow_forest(data.features, data.labels, "classification", params)
        for _ in range(config.rounds):
            scores = model.class_scores(data.features)
            v = per_sample_violation_scores(scores, cs)
            w = violation_weights(v, config.alpha)
            model = grow_forest(
                data.features, data.labels, "classification", params, sample_weight=w
            )
        return model
    if base == "logistic":
        classes = np.unique(data.labels)
        cs.validate(max(classes.shape[0], 2))
        return fit_logistic(
            data.features,
            data.labels,
            extra_binary=_binary_penalty(cs, config.lam),
            extra_softmax=_softmax_penalty(cs, config.lam),
        )
    if base == "mlp":
        params = params or MlpParams()
        classes, y01 = binary_targets(data.labels)
        layers = train_mlp(
            np.asarray(data.features, dtype=np.float64),
            y01,
            params,
            _mlp_penalty_loss(cs, config.lam),
        )
        return MlpModel(layers, data.features.shape[1], classes)
    raise UsageError(f"unknown base learner: {base!r}")


# ---------------------------------------------------------------------------
# logic-guided fitting (layer in the forward pass / around inference)


class LogicWrappedModel:
    """Classifier whose reported scores always pass the logic layer."""

    kind = "logic_wrapped"

    def __init__(self, base, cs):
        self.base = base
        self.cs = cs
        self.task = "classification"
        self.n_features = base.n_features
        self.classes_ = base.classes_

    def class_scores(self, X):
        return logic_layer(self.base.class_scores(X), self.cs)

    def predict(self, X):
        return self.classes_[np.argmax(self.class_scores(X), axis=1)]

    def to_dict(self):
        return {
            "kind": self.kind,
            "task": self.task,
            "n_features": self.n_features,
            "constraints": {
                "exclusions": [list(p) for p in self.cs.exclusions],
                "implications": [list(p) for p in self.cs.implications],
                "tau": self.cs.tau,
                "rho": self.cs.rho,
            },
            "base": self.base.to_dict(),
        }


def _logic_guided_mlp_loss(cs):
    def loss_fn(z, y01):
        p = _sigmoid(z)
        scores = np.column_stack([1.0 - p, p])
        out, J = logic_layer_with_jacobian(scores, cs)
        s0 = np.clip(out[:, 0], 1e-12, None)
        s1 = np.clip(out[:, 1], 1e-12, None)
        n = z.shape[0]
        loss = float(np.mean(-(y01 * np.log(s1) + (1.0 - y01) * np.log(s0))))
        dl_ds0 = -(1.0 - y01) / s0 / n
        dl_ds1 = -y01 / s1 / n
        # d(out)/dp with scores = (1 - p, p)
        ds0_dp = -J[:, 0, 0] + J[:, 0, 1]
        ds1_dp = -J[:, 1, 0] + J[:, 1, 1]
        dz = (dl_ds0 * ds0_dp + dl_ds1 * ds1_dp) * p * (1.0 - p)
        return loss, dz

    return loss_fn


def logic_guided_fit(base, data, cs, params=None):
    """Fit with the logic layer as part of the model.

    For the mlp the layer sits in the training forward pass and at
    inference; for forest/logistic the fit is unchanged and the layer
    wraps inference. An empty constraint set reduces to the plain fit.
    """
    if base == "forest":
        params = params or ForestParams()
        model = grow_forest(data.features, data.labels, "classification", params)
        return model if cs.empty else LogicWrappedModel(model, cs)
    if base == "logistic":
        model = fit_logistic(np.asarray(data.features, dtype=np.float64), data.labels)
        return model if cs.empty else LogicWrappedModel(model, cs)
    if base == "mlp":
        params = params or MlpParams()
        if cs.empty:
            from .learners.mlp import fit_mlp

            return fit_mlp(data, params)
        classes, y01 = binary_targets(data.labels)
        layers = train_mlp(
            np.asarray(data.features, dtype=np.float64),
            y01,
            params,
            _logic_guided_mlp_loss(cs),
        )
        return MlpModel(
            layers,
            data.features.shape[1],
            classes,
            score_transform=lambda s: logic_layer(s, cs),
        )
    raise UsageError(f"unknown base learner: {base!r}")


# ---------------------------------------------------------------------------
# fairness-aware forest impurity


@dataclass
class RawlsianForestConfig:
    lam: float = 0.3
    minimax_weight: float = 0.7
    average_weight: float = 0.3
    min_group_size: int = 20

    def validate(self):
        if abs(self.minimax_weight + self.average_weight - 1.0) > 1e-9:
            raise UsageError("minimax_weight + average_weight must equal 1")
        if not 0.0 <= self.lam <= 1.0:
            raise UsageError("lam must lie in [0, 1]")
        if self.min_group_size < 1:
            raise UsageError("min_group_size must be >= 1")


def _gini(labels):
    _, counts = np.unique(labels, return_counts=True)
    p = counts / labels.shape[0]
    return 1.0 - float(np.sum(p * p))


def rawlsian_impurity(labels, group_ids, config):
    """Reference node impurity: plain gini blended with the worst /
    average gini over groups that meet the size floor at the node."""
    config.validate()
    labels = np.asarray(labels)
    group_ids = np.asarray(group_ids)
    if labels.shape != group_ids.shape:
        raise UsageError("labels and group_ids must align")
    g = _gini(labels)
    ginis = []
    for gid in np.unique(group_ids):
        mask = group_ids == gid
        if int(np.count_nonzero(mask)) >= config.min_group_size:
            ginis.append(_gini(labels[mask]))
    if not ginis:
        return g
    term = config.minimax_weight * max(ginis) + config.average_weight * (
        sum(ginis) / len(ginis)
    )
    return (1.0 - config.lam) * g + config.lam * term


def _encode_groups(groups, n):
    groups = np.asarray(groups)
    if groups.shape != (n,):
        raise UsageError("group ids must be one value per training row")
    uniques, codes = np.unique(groups, return_inverse=True)
    return codes.astype(np.int64), uniques.shape[0]


def rawlsian_forest_fit(data, groups, params, config):
    """Forest grown with the blended impurity; splits still use the
    plain feature matrix, so sensitive attributes never become split
    features."""
    if groups is None:
        raise UsageError("rawlsian_forest_fit requires group ids for training rows")
    if data.labels is None:
        raise UsageError("dataset has no labels")
    config.validate()
    codes, n_groups = _encode_groups(groups, data.features.shape[0])
    return grow_forest(
        data.features,
        data.labels,
        "classification",
        params,
        rawlsian=(
            codes,
            n_groups,
            config.lam,
            config.minimax_weight,
            config.average_weight,
            config.min_group_size,
        ),
    )


# ---------------------------------------------------------------------------
# fairness-aware network loss


@dataclass
class RawlsianLossConfig:
    lam: float = 0.7
    minimax_weight: float = 0.5
    average_weight: float = 0.3
    variance_weight: float = 0.2
    min_group_size: int = 20

    def validate(self):
        total = self.minimax_weight + self.average_weight + self.variance_weight
        if abs(total - 1.0) > 1e-9:
            raise UsageError("the three psi weights must sum to 1")
        if not 0.0 <= self.lam <= 1.0:
            raise UsageError("lam must lie in [0, 1]")
        if self.min_group_size < 1:
            raise UsageError("min_group_size must be >= 1")


def _psi_terms(per_sample, codes, n_groups, config):
    """psi over qualifying-group mean losses and d(psi)/d(per_sample).

    Returns (None, None) when no group meets the size floor.
    """
    sizes = np.bincount(codes, minlength=n_groups)
    qual = np.nonzero(sizes >= config.min_group_size)[0]
    if qual.shape[0] == 0:
        return None, None
    sums = np.bincount(codes, weights=per_sample, minlength=n_groups)
    means = sums[qual] / sizes[qual]
    gq = qual.shape[0]
    mean_of_means = float(np.sum(means) / gq)
    centered = means - mean_of_means
    var = float(np.sum(centered * centered) / gq)
    imax = int(np.argmax(means))
    psi = (
        config.minimax_weight * float(means[imax])
        + config.average_weight * mean_of_means
        + config.variance_weight * var
    )
    dpsi_dmean = np.full(gq, config.average_weight / gq)
    dpsi_dmean += config.variance_weight * (2.0 / gq) * centered
    dpsi_dmean[imax] += config.minimax_weight
    dpsi = np.zeros(per_sample.shape[0])
    for pos, gid in enumerate(qual.tolist()):
        members = codes == gid
        dpsi[members] = dpsi_dmean[pos] / sizes[gid]
    return psi, dpsi


def rawlsian_loss(per_sample_losses, group_ids, config):
    """Reference value of the blended loss
    lam * psi + (1 - lam) * mean(per-sample loss)."""
    config.validate()
    per = np.asarray(per_sample_losses, dtype=np.float64)
    codes, n_groups = _encode_groups(group_ids, per.shape[0])
    base = float(np.mean(per))
    psi, _ = _psi_terms(per, codes, n_groups, config)
    if psi is None:
        return base
    return config.lam * psi + (1.0 - config.lam) * base


def _rawlsian_mlp_loss(codes, n_groups, config):
    def loss_fn(z, y01):
        base_loss, base_dz = mean_bce_loss(z, y01)
        per = np.logaddexp(0.0, z) - y01 * z
        psi, dpsi = _psi_terms(per, codes, n_groups, config)
        if psi is None:
            return base_loss, base_dz
        dl_dz = _sigmoid(z) - y01
        loss = config.lam * psi + (1.0 - config.lam) * base_loss
        dz = config.lam * (dpsi * dl_dz) + (1.0 - config.lam) * base_dz
        return loss, dz

    return loss_fn


def rawlsian_mlp_fit(data, groups, params, config):
    """Network trained with the group-decomposed loss; groups enter the
    loss only, never the features."""
    if groups is None:
        raise UsageError("rawlsian_mlp_fit requires group ids for training rows")
    if data.labels is None:
        raise UsageError("dataset has no labels")
    config.validate()
    X = np.asarray(data.features, dtype=np.float64)
    codes, n_groups = _encode_groups(groups, X.shape[0])
    classes, y01 = binary_targets(data.labels)
    layers = train_mlp(X, y01, params, _rawlsian_mlp_loss(codes, n_groups, config))
    return MlpModel(layers, X.shape[1], classes)


# ---------------------------------------------------------------------------
# environment ensemble


class EnvEnsembleModel:
    """Per-environment experts blended by a meta-model on
    (expert outputs..., environment id)."""

    kind = "env_ensemble"
    needs_env = True

    def __init__(self, experts, meta, train_envs, n_features):
        self.experts = experts
        self.meta = meta
        self.train_envs = list(train_envs)
        self.n_features = n_features
        self.task = "regression"

    def meta_features(self, X, env):
        X = _check_features(self, X)
        cols = [expert.predict(X) for expert in self.experts]
        cols.append(np.asarray(env, dtype=np.float64))
        return np.column_stack(cols)

    def predict(self, X, env):
        return self.meta.predict(self.meta_features(X, env))

    def to_dict(self):
        return {
            "kind": self.kind,
            "task": self.task,
            "n_features": self.n_features,
            "train_envs": self.train_envs,
            "experts": [expert.to_dict() for expert in self.experts],
            "meta": self.meta.to_dict(),
        }


def env_ensemble_fit(data, train_envs=(0, 1), family="forest", params=None):
    """Fit one expert per training environment plus the meta-model.

    Prediction on any row uses its environment id as the extra meta
    input, so the meta input width is len(train_envs) + 1 regardless of
    the feature dimension.
    """
    if data.environment is None:
        raise UsageError("dataset has no environment column")
    train_envs = sorted(set(int(e) for e in train_envs))
    if len(train_envs) < 2:
        raise UsageError("env_ensemble_fit needs at least 2 training environments")
    X = np.asarray(data.features, dtype=np.float64)
    y = np.asarray(data.labels, dtype=np.float64)
    env = np.asarray(data.environment)

    def fit_family(Xf, yf):
        if family == "forest":
            return grow_forest(Xf, yf, "regression", params or ForestParams())
        if family == "linear":
            return fit_least_squares(Xf, yf)
        raise UsageError(f"unknown family: {family!r}")

    experts = []
    for e in train_envs:
        mask = env == e
        if not np.any(mask):
            raise UsageError(f"training environment {e} has no rows")
        experts.append(fit_family(X[mask], y[mask]))

    pool = np.isin(env, train_envs)
    cols = [expert.predict(X[pool]) for expert in experts]
    cols.append(env[pool].astype(np.float64))
    meta = fit_family(np.column_stack(cols), y[pool])
    return EnvEnsembleModel(experts, meta, train_envs, X.shape[1])
