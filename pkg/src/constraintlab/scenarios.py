"""Experiment harness behind the CLI: one function per scenario run.

Every run is a pure function of its RunConfig: data generation, the
70/30 train/test split (stratified by label for classification), model
seeds, and every downstream step derive from the config seed, so equal
configs yield byte-identical reports. The hiring scenario additionally
carves a 20 percent calibration split out of the training rows; the
base model is fitted on the remainder so calibration never sees
training rows.
"""

from dataclasses import dataclass, field
from typing import Dict

import numpy as np

from . import datagen
from .constraints import (
    ConstraintSet,
    RepairConfig,
    counterfactual_violation_rate,
    env_mse_variance,
    exclusion_violation_rate,
    implication_violation_rate,
)
from .enforcers import (
    CalibrationConfig,
    apply_implication_transfer,
    apply_mutual_exclusion,
    apply_threshold_policy,
    calibrate_rawlsian_thresholds,
    select_worst_off_groups,
)
from .errors import UsageError
from .intrinsic import (
    ConstraintLossConfig,
    RawlsianForestConfig,
    RawlsianLossConfig,
    constraint_aware_fit,
    env_ensemble_fit,
    logic_guided_fit,
    rawlsian_forest_fit,
    rawlsian_mlp_fit,
)
from .learners import ForestParams, MlpParams, fit_forest, fit_linear, fit_mlp
from .metrics import equity_deltas, evaluate, group_report
from .reporting import SCHEMA_VERSION

VALID_COMBOS = {
    "exclusion": {
        "models": ("forest", "linear", "mlp"),
        "modes": ("baseline", "posthoc"),
    },
    "hierarchy": {"models": ("forest", "linear"), "modes": ("baseline", "posthoc")},
    "constraint-loss": {
        "models": ("forest", "linear", "mlp"),
        "modes": ("baseline", "intrinsic"),
    },
    "logic-arch": {"models": ("forest", "linear"), "modes": ("baseline", "intrinsic")},
    "counterfactual": {
        "models": ("forest", "linear"),
        "modes": ("baseline", "posthoc"),
    },
    "env-ensemble": {"models": ("forest", "linear"), "modes": ("baseline", "intrinsic")},
    "hiring": {"models": ("forest", "mlp"), "modes": ("baseline", "posthoc", "intrinsic")},
}

_OVERRIDE_TYPES = {
    "n": int,
    "n_per_env": int,
    "ambiguous_frac": float,
    "tau": float,
    "rho": float,
    "lam": float,
    "alpha": float,
    "rounds": int,
    "tau_cf": float,
    "n_trees": int,
    "max_depth": int,
    "epochs": int,
    "learning_rate": float,
    "hidden_dim": int,
    "hidden_layers": int,
    "dropout_rate": float,
    "threshold_step": float,
    "min_group_size": int,
    "min_accuracy_retention": float,
    "worst_off_fraction": float,
    "max_worst_off_groups": int,
    "per_group_mode": bool,
    "validation_split": float,
}

_DEFAULT_N = {
    "exclusion": 500,
    "hierarchy": 500,
    "constraint-loss": 500,
    "logic-arch": 500,
    "counterfactual": 600,
    "env-ensemble": 250,  # rows per environment
    "hiring": 1500,
}


def valid_combinations_text():
    lines = []
    for scenario, spec in VALID_COMBOS.items():
        lines.append(
            f"  {scenario}: models {'/'.join(spec['models'])}; modes {'/'.join(spec['modes'])}"
        )
    return "\n".join(lines)


@dataclass
class RunConfig:
    scenario: str
    model: str
    mode: str
    seed: int = 42
    overrides: Dict[str, object] = field(default_factory=dict)

    def validate(self):
        combo = VALID_COMBOS.get(self.scenario)
        if combo is None:
            raise UsageError(
                f"unknown scenario {self.scenario!r}; valid combinations:\n"
                + valid_combinations_text()
            )
        if self.model not in combo["models"] or self.mode not in combo["modes"]:
            raise UsageError(
                f"unsupported combination ({self.scenario}, {self.model}, {self.mode});"
                " valid combinations:\n" + valid_combinations_text()
            )
        for key, value in self.overrides.items():
            if key not in _OVERRIDE_TYPES:
                raise UsageError(
                    f"unknown override {key!r}; known keys: "
                    + ", ".join(sorted(_OVERRIDE_TYPES))
                )
        return self

    def param(self, key, default):
        if key not in self.overrides:
            return default
        raw = self.overrides[key]
        typ = _OVERRIDE_TYPES[key]
        if typ is bool and isinstance(raw, str):
            return raw.lower() in ("1", "true", "yes")
        return typ(raw)


def coerce_overrides(pairs):
    """Parse 'key=value' strings into an override dict."""
    out = {}
    for pair in pairs:
        if "=" not in pair:
            raise UsageError(f"override {pair!r} is not of the form key=value")
        key, value = pair.split("=", 1)
        key = key.strip()
        if key not in _OVERRIDE_TYPES:
            raise UsageError(
                f"unknown override {key!r}; known keys: " + ", ".join(sorted(_OVERRIDE_TYPES))
            )
        out[key] = value.strip()
    return out


# ---------------------------------------------------------------------------
# splits and groups


def stratified_split(labels, seed, frac):
    """Per-class shuffled split; first part holds ``frac`` of each class."""
    rng = np.random.default_rng(seed)
    empty = np.zeros(0, dtype=np.int64)
    first, second = [empty], [empty]
    for c in np.unique(labels):
        idx = np.nonzero(labels == c)[0]
        idx = idx[rng.permutation(idx.shape[0])]
        k = int(round(frac * idx.shape[0]))
        first.append(idx[:k])
        second.append(idx[k:])
    return np.concatenate(first), np.concatenate(second)


def plain_split(n, seed, frac):
    rng = np.random.default_rng(seed)
    perm = rng.permutation(n)
    k = int(round(frac * n))
    return perm[:k], perm[k:]


def marginal_group_masks(sensitive, idx):
    """One boolean mask per (feature, value) over the selected rows."""
    out = {}
    for feat, col in sensitive.items():
        for val in np.unique(col):
            out[f"{feat}={val}"] = col[idx] == val
    return out


def intersection_group_ids(sensitive, idx):
    """One id per joint sensitive cell, for the in-training objectives."""
    cols = [sensitive[feat][idx].astype(str) for feat in sensitive]
    combined = cols[0]
    for col in cols[1:]:
        combined = np.char.add(np.char.add(combined, "|"), col)
    return combined


# ---------------------------------------------------------------------------
# model fitting helpers


def _forest_params(config):
    return ForestParams(
        n_trees=config.param("n_trees", 100),
        max_depth=config.param("max_depth", 10),
        seed=config.seed,
    )


def _mlp_params(config):
    return MlpParams(
        hidden_dim=config.param("hidden_dim", 64),
        hidden_layers=config.param("hidden_layers", 3),
        dropout_rate=config.param("dropout_rate", 0.2),
        epochs=config.param("epochs", 100),
        learning_rate=config.param("learning_rate", 0.001),
        seed=config.seed,
    )


def _fit_classifier(config, data):
    if config.model == "forest":
        return fit_forest(data, _forest_params(config), "classification")
    if config.model == "linear":
        return fit_linear(data, "classification", seed=config.seed)
    return fit_mlp(data, _mlp_params(config))


def _constraint_set(config, exclusions=(), implications=()):
    return ConstraintSet(
        exclusions=list(exclusions),
        implications=list(implications),
        tau=config.param("tau", 0.4),
        rho=config.param("rho", 0.3),
    )


def _base_report(config, params, metrics):
    return {
        "schema_version": SCHEMA_VERSION,
        "scenario": config.scenario,
        "model": config.model,
        "mode": config.mode,
        "seed": config.seed,
        "params": params,
        "metrics": metrics,
    }


# ---------------------------------------------------------------------------
# scenario runners


def _run_logic_repair(config):
    """exclusion and hierarchy scenarios: post-hoc output repair."""
    n = config.param("n", _DEFAULT_N[config.scenario])
    cs_kwargs = {}
    params = {"n": n}
    if config.scenario == "exclusion":
        frac = config.param("ambiguous_frac", 0.15)
        data = datagen.gen_exclusion_dataset(config.seed, n, frac)
        cs = _constraint_set(config, exclusions=[(0, 1)])
        rate_fn = exclusion_violation_rate
        repair_fn = apply_mutual_exclusion
        params["ambiguous_frac"] = frac
    else:
        data = datagen.gen_hierarchy_dataset(config.seed, n)
        cs = _constraint_set(config, implications=[(2, 1)])
        rate_fn = implication_violation_rate
        repair_fn = apply_implication_transfer
    params.update({"tau": cs.tau, "rho": cs.rho})

    train, test = stratified_split(data.labels, config.seed, 0.7)
    sub = datagen.Dataset(features=data.features[train], labels=data.labels[train])
    model = _fit_classifier(config, sub)
    scores = model.class_scores(data.features[test])
    classes = model.classes_
    metrics = {
        "accuracy": evaluate(
            classes[np.argmax(scores, axis=1)], data.labels[test], "classification"
        ),
        "violation_rate_before": rate_fn(scores, cs),
    }
    if config.mode == "posthoc":
        repaired = repair_fn(scores, cs)
        metrics["violation_rate_after"] = rate_fn(repaired, cs)
        metrics["accuracy"] = evaluate(
            classes[np.argmax(repaired, axis=1)], data.labels[test], "classification"
        )
    return _base_report(config, params, metrics), model


def _run_constraint_loss(config):
    n = config.param("n", _DEFAULT_N[config.scenario])
    frac = config.param("ambiguous_frac", 0.15)
    data = datagen.gen_exclusion_dataset(config.seed, n, frac)
    cs = _constraint_set(config, exclusions=[(0, 1)])
    loss_cfg = ConstraintLossConfig(
        lam=config.param("lam", 1.0),
        alpha=config.param("alpha", 2.0),
        rounds=config.param("rounds", 3),
    )
    params = {
        "n": n,
        "ambiguous_frac": frac,
        "tau": cs.tau,
        "rho": cs.rho,
        "lam": loss_cfg.lam,
        "alpha": loss_cfg.alpha,
        "rounds": loss_cfg.rounds,
    }
    train, test = stratified_split(data.labels, config.seed, 0.7)
    sub = datagen.Dataset(features=data.features[train], labels=data.labels[train])

    baseline = _fit_classifier(config, sub)
    base_scores = baseline.class_scores(data.features[test])
    metrics = {
        "accuracy": evaluate(
            baseline.classes_[np.argmax(base_scores, axis=1)],
            data.labels[test],
            "classification",
        ),
        "violation_rate_before": exclusion_violation_rate(base_scores, cs),
    }
    model = baseline
    if config.mode == "intrinsic":
        learner_params = (
            _forest_params(config)
            if config.model == "forest"
            else _mlp_params(config)
            if config.model == "mlp"
            else None
        )
        base_name = "logistic" if config.model == "linear" else config.model
        model = constraint_aware_fit(base_name, sub, cs, loss_cfg, params=learner_params)
        scores = model.class_scores(data.features[test])
        metrics["violation_rate_after"] = exclusion_violation_rate(scores, cs)
        metrics["accuracy"] = evaluate(
            model.classes_[np.argmax(scores, axis=1)], data.labels[test], "classification"
        )
    return _base_report(config, params, metrics), model


def _run_logic_arch(config):
    n = config.param("n", _DEFAULT_N[config.scenario])
    data = datagen.gen_hierarchy_dataset(config.seed, n)
    cs = _constraint_set(config, exclusions=[(0, 2)], implications=[(2, 1)])
    params = {"n": n, "tau": cs.tau, "rho": cs.rho}
    train, test = stratified_split(data.labels, config.seed, 0.7)
    sub = datagen.Dataset(features=data.features[train], labels=data.labels[train])

    baseline = _fit_classifier(config, sub)
    base_scores = baseline.class_scores(data.features[test])
    metrics = {
        "accuracy": evaluate(
            baseline.classes_[np.argmax(base_scores, axis=1)],
            data.labels[test],
            "classification",
        ),
        "violation_rate_before": implication_violation_rate(base_scores, cs),
        "exclusion_violation_rate_before": exclusion_violation_rate(base_scores, cs),
    }
    model = baseline
    if config.mode == "intrinsic":
        learner_params = (
            _forest_params(config) if config.model == "forest" else None
        )
        base_name = "logistic" if config.model == "linear" else config.model
        model = logic_guided_fit(base_name, sub, cs, params=learner_params)
        scores = model.class_scores(data.features[test])
        metrics["violation_rate_after"] = implication_violation_rate(scores, cs)
        metrics["exclusion_violation_rate_after"] = exclusion_violation_rate(scores, cs)
        metrics["accuracy"] = evaluate(
            model.classes_[np.argmax(scores, axis=1)], data.labels[test], "classification"
        )
    return _base_report(config, params, metrics), model


def _counterfactual_matrix(model, X, treatment):
    """Factual predictions plus per-row alternatives (ascending t')."""
    Xt = np.column_stack([X, treatment.astype(np.float64)])
    factual = model.predict(Xt)
    per_t = []
    for t in range(3):
        Xa = Xt.copy()
        Xa[:, -1] = float(t)
        per_t.append(model.predict(Xa))
    per_t = np.column_stack(per_t)
    n = X.shape[0]
    cf = np.empty((n, 2))
    for i in range(n):
        cols = [t for t in range(3) if t != treatment[i]]
        cf[i] = per_t[i, cols]
    return factual, cf


def _run_counterfactual(config):
    n = config.param("n", _DEFAULT_N[config.scenario])
    data = datagen.gen_treatment_dataset(config.seed, n)
    repair_cfg = RepairConfig(tau_cf=config.param("tau_cf", 1.2))
    params = {"n": n, "tau_cf": repair_cfg.tau_cf}
    train, test = plain_split(n, config.seed, 0.7)
    Xt_train = np.column_stack(
        [data.features[train], data.treatment[train].astype(np.float64)]
    )
    sub = datagen.Dataset(features=Xt_train, labels=data.labels[train])
    if config.model == "forest":
        model = fit_forest(sub, _forest_params(config), "regression")
    else:
        model = fit_linear(sub, "regression", seed=config.seed)

    factual, cf = _counterfactual_matrix(model, data.features[test], data.treatment[test])
    mse = evaluate(factual, data.labels[test], "regression")
    metrics = {
        "mse": mse,
        "violation_rate_before": counterfactual_violation_rate(factual, cf, repair_cfg),
        "factual_mse_before": mse,
    }
    if config.mode == "posthoc":
        from .enforcers import repair_counterfactuals

        repaired = repair_counterfactuals(factual, cf, repair_cfg)
        metrics["violation_rate_after"] = counterfactual_violation_rate(
            factual, repaired, repair_cfg
        )
        metrics["factual_mse_after"] = evaluate(factual, data.labels[test], "regression")
    return _base_report(config, params, metrics), model


def _run_env_ensemble(config):
    n_per_env = config.param("n_per_env", config.param("n", _DEFAULT_N[config.scenario]))
    data = datagen.gen_environment_dataset(config.seed, n_per_env)
    params = {"n_per_env": n_per_env, "train_envs": [0, 1], "test_envs": [2, 3]}
    train_mask = np.isin(data.environment, (0, 1))

    if config.mode == "intrinsic":
        model = env_ensemble_fit(
            data,
            (0, 1),
            family=config.model,
            params=_forest_params(config) if config.model == "forest" else None,
        )

        def predict_rows(mask):
            return model.predict(data.features[mask], data.environment[mask])

    else:
        sub = datagen.Dataset(
            features=data.features[train_mask], labels=data.labels[train_mask]
        )
        if config.model == "forest":
            model = fit_forest(sub, _forest_params(config), "regression")
        else:
            model = fit_linear(sub, "regression", seed=config.seed)

        def predict_rows(mask):
            return model.predict(data.features[mask])

    per_env = {}
    for e in (2, 3):
        mask = data.environment == e
        per_env[str(e)] = evaluate(predict_rows(mask), data.labels[mask], "regression")
    values = list(per_env.values())
    test_mask = np.isin(data.environment, (2, 3))
    metrics = {
        "mse": evaluate(predict_rows(test_mask), data.labels[test_mask], "regression"),
        "violation_rate_before": None,
        "env_mse": {
            "per_env": per_env,
            "variance": env_mse_variance(values),
            "mean": float(np.mean(values)),
        },
    }
    return _base_report(config, params, metrics), model


def _group_entries(report):
    return [
        {
            "feature": e.feature,
            "value": e.value,
            "size": e.size,
            "accuracy": e.accuracy,
            "positive_rate": e.positive_rate,
        }
        for e in report.entries
    ]


def _run_hiring(config):
    n = config.param("n", _DEFAULT_N[config.scenario])
    data = datagen.gen_hiring_dataset(config.seed, n)
    calib_cfg = CalibrationConfig(
        min_group_size=config.param("min_group_size", 20),
        validation_split=config.param("validation_split", 0.20),
        min_accuracy_retention=config.param("min_accuracy_retention", 0.90),
        worst_off_fraction=config.param("worst_off_fraction", 1.0 / 3.0),
        max_worst_off_groups=config.param("max_worst_off_groups", 5),
        threshold_step=config.param("threshold_step", 0.02),
        per_group_mode=config.param("per_group_mode", False),
        seed=config.seed,
    )
    params = {
        "n": n,
        "validation_split": calib_cfg.validation_split,
        "min_group_size": calib_cfg.min_group_size,
        "min_accuracy_retention": calib_cfg.min_accuracy_retention,
        "threshold_step": calib_cfg.threshold_step,
        "per_group_mode": calib_cfg.per_group_mode,
    }

    train_all, test = stratified_split(data.labels, config.seed, 0.7)
    calib_rel, body_rel = stratified_split(
        data.labels[train_all], config.seed + 1, calib_cfg.validation_split
    )
    calib = train_all[calib_rel]
    body = train_all[body_rel]
    sub = datagen.Dataset(features=data.features[body], labels=data.labels[body])

    baseline = _fit_classifier(config, sub)
    groups_calib = marginal_group_masks(data.sensitive, calib)
    groups_test = marginal_group_masks(data.sensitive, test)
    p_calib = baseline.class_scores(data.features[calib])[:, 1]
    p_test = baseline.class_scores(data.features[test])[:, 1]
    base_decisions = (p_test > 0.5).astype(np.int64)
    base_rep = group_report(
        base_decisions, data.labels[test], groups_test, calib_cfg.min_group_size
    )

    model = baseline
    report = None
    if config.mode == "baseline":
        treated_rep = base_rep
    elif config.mode == "posthoc":
        policy = calibrate_rawlsian_thresholds(
            p_calib, data.labels[calib], groups_calib, calib_cfg
        )
        decisions = apply_threshold_policy(p_test, groups_test, policy)
        treated_rep = group_report(
            decisions, data.labels[test], groups_test, calib_cfg.min_group_size
        )
        report = {"policy": policy.to_dict(), "worst_off": policy.worst_off_groups}
    else:  # intrinsic
        group_ids = intersection_group_ids(data.sensitive, body)
        if config.model == "forest":
            model = rawlsian_forest_fit(
                sub,
                group_ids,
                _forest_params(config),
                RawlsianForestConfig(
                    lam=config.param("lam", 0.3),
                    min_group_size=calib_cfg.min_group_size,
                ),
            )
        else:
            model = rawlsian_mlp_fit(
                sub,
                group_ids,
                _mlp_params(config),
                RawlsianLossConfig(
                    lam=config.param("lam", 0.7),
                    min_group_size=calib_cfg.min_group_size,
                ),
            )
        decisions = (model.class_scores(data.features[test])[:, 1] > 0.5).astype(np.int64)
        treated_rep = group_report(
            decisions, data.labels[test], groups_test, calib_cfg.min_group_size
        )
        worst = select_worst_off_groups(
            p_calib, data.labels[calib], groups_calib, calib_cfg
        )
        report = {"worst_off": worst}

    metrics = {
        "accuracy": treated_rep.overall_accuracy,
        "positive_rate": treated_rep.overall_positive_rate,
        "violation_rate_before": None,
    }
    doc = _base_report(config, params, metrics)
    doc["groups"] = _group_entries(treated_rep)
    if report is not None and report.get("worst_off"):
        equity = equity_deltas(base_rep, treated_rep, report["worst_off"])
        doc["equity"] = equity.to_dict()
    if report is not None and "policy" in report:
        doc["policy"] = report["policy"]
    return doc, model


_RUNNERS = {
    "exclusion": _run_logic_repair,
    "hierarchy": _run_logic_repair,
    "constraint-loss": _run_constraint_loss,
    "logic-arch": _run_logic_arch,
    "counterfactual": _run_counterfactual,
    "env-ensemble": _run_env_ensemble,
    "hiring": _run_hiring,
}


def run_scenario(config, return_model=False):
    """Run one configured experiment and return its report document."""
    config.validate()
    doc, model = _RUNNERS[config.scenario](config)
    if return_model:
        return doc, model
    return doc


def generate_dataset(scenario, seed, n, ambiguous_frac=0.15):
    """Dataset behind a scenario, for the CLI's gen verb."""
    if scenario not in VALID_COMBOS:
        raise UsageError(
            f"unknown scenario {scenario!r}; valid combinations:\n" + valid_combinations_text()
        )
    if scenario in ("exclusion", "constraint-loss"):
        return datagen.gen_exclusion_dataset(seed, n, ambiguous_frac)
    if scenario in ("hierarchy", "logic-arch"):
        return datagen.gen_hierarchy_dataset(seed, n)
    if scenario == "counterfactual":
        return datagen.gen_treatment_dataset(seed, n)
    if scenario == "env-ensemble":
        return datagen.gen_environment_dataset(seed, n)
    return datagen.gen_hiring_dataset(seed, n)
