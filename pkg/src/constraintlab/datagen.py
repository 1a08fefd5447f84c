"""Seeded synthetic generators for the seven experiment scenarios.

Every generator is a pure function of its arguments: equal arguments
produce byte-identical datasets. Feature matrices are standardized to
zero mean / unit variance after generation so thresholds and penalties
are scale-free; outcome columns keep their natural units.

The distribution parameters below were tuned so that the baseline
learners land in the intended violation regimes (ambiguous overlap for
the exclusion pair, adjacent severity bands for the hierarchy, swing
heterogeneity for the treatments, a linear-in-index environment drift,
and label-only bias injection for the hiring pool).
"""

import csv
import io
from dataclasses import dataclass, field
from typing import Dict, Optional

import numpy as np

from .errors import DataError, UsageError

# exclusion scenario geometry
_EXCL_CENTER = 1.25
_EXCL_AMBIGUOUS_STD = 0.45

# hierarchy scenario geometry
_HIER_SPACING = 1.8
_HIER_LABEL_NOISE = 0.2

# treatment scenario response surface
_TREAT_BASE_EFFECT = 0.8
_TREAT_HETERO_EFFECT = 0.5
_TREAT_NOISE = 0.8
_TREAT_PROBS = (0.3, 0.4, 0.3)

# environment scenario drift
_ENV_COEF = (2.0, -1.0, 0.5)
_ENV_SHIFT = 2.0
_ENV_SLOPE = 0.15
_ENV_NOISE = 1.0

# hiring pool
_HIRING_WEIGHTS = (0.30, 0.25, 0.20, 0.15, 0.10)
_HIRING_NOISE = 0.1
_GENDERS = ("male", "female", "nonbinary")
_GENDER_PROBS = (0.44, 0.48, 0.08)
_ETHNICITIES = ("A", "B", "C", "D")
_ETHNICITY_PROBS = (0.25, 0.25, 0.25, 0.25)
_SES = ("low", "mid", "high")
_SES_PROBS = (0.45, 0.35, 0.20)


@dataclass
class Dataset:
    """Tabular record set: features plus optional label, treatment,
    environment and sensitive columns."""

    features: np.ndarray
    labels: Optional[np.ndarray] = None
    treatment: Optional[np.ndarray] = None
    environment: Optional[np.ndarray] = None
    sensitive: Optional[Dict[str, np.ndarray]] = None

    @property
    def n(self):
        return self.features.shape[0]

    @property
    def d(self):
        return self.features.shape[1]

    def validate(self):
        if self.features.ndim != 2:
            raise DataError("features must be a 2-d matrix")
        if not np.all(np.isfinite(self.features)):
            raise DataError("features contain non-finite entries")
        for name, col in (
            ("labels", self.labels),
            ("treatment", self.treatment),
            ("environment", self.environment),
        ):
            if col is not None and col.shape != (self.n,):
                raise DataError(f"{name} length does not match feature rows")
        if self.sensitive is not None:
            for name, col in self.sensitive.items():
                if col.shape != (self.n,):
                    raise DataError(f"sensitive column {name!r} has wrong length")
        return self

    def to_csv_string(self):
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        header = [f"f{j}" for j in range(self.d)]
        cols = []
        if self.labels is not None:
            header.append("label")
            cols.append(self.labels)
        if self.treatment is not None:
            header.append("treatment")
            cols.append(self.treatment)
        if self.environment is not None:
            header.append("env")
            cols.append(self.environment)
        sensitive = self.sensitive or {}
        for name in ("gender", "ethnicity", "ses"):
            if name in sensitive:
                header.append(name)
                cols.append(sensitive[name])
        writer.writerow(header)
        for i in range(self.n):
            row = [repr(float(v)) for v in self.features[i]]
            for col in cols:
                v = col[i]
                if isinstance(v, (np.floating, float)):
                    row.append(repr(float(v)))
                else:
                    row.append(str(v))
            writer.writerow(row)
        return buf.getvalue()

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            fh.write(self.to_csv_string())


@dataclass
class BiasSpec:
    """Additive latent-score penalties per sensitive-attribute value,
    in standard deviations of the unpenalized latent score. Values
    absent from the map carry no penalty; penalties add up across a
    candidate's attributes."""

    penalties: Dict[str, float] = field(default_factory=dict)

    def validate(self):
        for key, value in self.penalties.items():
            if not np.isfinite(value):
                raise UsageError(f"penalty for {key!r} is not finite")
        return self


DEFAULT_BIAS = BiasSpec(
    penalties={"female": 0.5, "nonbinary": 0.8, "D": 0.8, "C": 0.3, "low": 0.5}
)


def _check_n(n):
    if n < 0:
        raise UsageError("n must be non-negative")


def _standardize(X):
    if X.shape[0] == 0:
        return X
    mean = X.mean(axis=0)
    std = X.std(axis=0)
    std = np.where(std > 0.0, std, 1.0)
    return (X - mean) / std


def gen_exclusion_dataset(seed, n, ambiguous_frac=0.15):
    """Two document classes (contract=0, patent=1) as 2-d gaussian
    clusters, plus an ``ambiguous_frac`` share drawn from the midpoint
    region with coin-flip labels so baseline classifiers score both
    classes above moderate thresholds there."""
    _check_n(n)
    if not 0.0 <= ambiguous_frac <= 1.0:
        raise UsageError("ambiguous_frac must lie in [0, 1]")
    rng = np.random.default_rng(seed)
    n_amb = int(round(n * ambiguous_frac))
    n_core = n - n_amb
    n0 = n_core - n_core // 2
    n1 = n_core // 2
    X0 = rng.normal(loc=(-_EXCL_CENTER, 0.0), scale=1.0, size=(n0, 2))
    X1 = rng.normal(loc=(_EXCL_CENTER, 0.0), scale=1.0, size=(n1, 2))
    Xa = rng.normal(
        loc=(0.0, 0.0), scale=(_EXCL_AMBIGUOUS_STD, 1.0), size=(n_amb, 2)
    )
    ya = rng.integers(0, 2, size=n_amb)
    X = np.vstack([X0, X1, Xa])
    y = np.concatenate([np.zeros(n0, np.int64), np.ones(n1, np.int64), ya])
    perm = rng.permutation(n)
    return Dataset(features=_standardize(X[perm]), labels=y[perm]).validate()


def gen_hierarchy_dataset(seed, n):
    """Three severity classes (0=mild, 1=flu, 2=pneumonia) as ordered,
    overlapping clusters along a severity axis. A fixed share of labels
    slips to an adjacent severity level (symptom overlap), which keeps
    neighbouring-class scores alive deep inside each cluster; confident
    severe scores still coexist with sub-threshold milder-class scores
    at baseline."""
    _check_n(n)
    rng = np.random.default_rng(seed)
    counts = [n // 3] * 3
    for c in range(n - sum(counts)):
        counts[c] += 1
    blocks = []
    labels = []
    for c, cnt in enumerate(counts):
        centre = (c * _HIER_SPACING, 0.0)
        blocks.append(rng.normal(loc=centre, scale=1.0, size=(cnt, 2)))
        labels.append(np.full(cnt, c, dtype=np.int64))
    X = np.vstack(blocks) if blocks else np.zeros((0, 2))
    y = np.concatenate(labels) if labels else np.zeros(0, np.int64)
    # severe cases are under-reported one level with fixed probability,
    # which keeps the milder class alive deep inside each cluster
    flip = rng.random(n) < _HIER_LABEL_NOISE
    y = np.where(flip, np.maximum(y - 1, 0), y)
    perm = rng.permutation(n)
    return Dataset(features=_standardize(X[perm]), labels=y[perm]).validate()


def gen_treatment_dataset(seed, n):
    """Treatment-response records (age, severity, comorbidity) with a
    smooth outcome whose treatment effect grows with severity, so
    unclamped counterfactual swings exceed moderate thresholds for a
    sizable share of rows."""
    _check_n(n)
    rng = np.random.default_rng(seed)
    X = rng.standard_normal((n, 3))
    t = rng.choice(3, size=n, p=_TREAT_PROBS).astype(np.int64)
    base = 1.2 * X[:, 0] + 0.8 * X[:, 1] - 0.6 * X[:, 2]
    effect = t * (_TREAT_BASE_EFFECT + _TREAT_HETERO_EFFECT * X[:, 1])
    y = base + effect + rng.normal(0.0, _TREAT_NOISE, size=n)
    return Dataset(features=_standardize(X), labels=y, treatment=t).validate()


def gen_environment_dataset(seed, n_per_env):
    """Four environments sharing one mechanism plus a shift/slope
    perturbation that grows linearly with the environment index, so
    models pooled over environments 0-1 degrade on 2-3."""
    _check_n(n_per_env)
    rng = np.random.default_rng(seed)
    blocks = []
    ys = []
    envs = []
    for e in range(4):
        X = rng.standard_normal((n_per_env, 3))
        y = (
            _ENV_COEF[0] * X[:, 0]
            + _ENV_COEF[1] * X[:, 1]
            + _ENV_COEF[2] * X[:, 2]
            + _ENV_SHIFT * e
            + _ENV_SLOPE * e * X[:, 0]
            + rng.normal(0.0, _ENV_NOISE, size=n_per_env)
        )
        blocks.append(X)
        ys.append(y)
        envs.append(np.full(n_per_env, e, dtype=np.int64))
    X = np.vstack(blocks) if blocks else np.zeros((0, 3))
    y = np.concatenate(ys) if ys else np.zeros(0)
    env = np.concatenate(envs) if envs else np.zeros(0, np.int64)
    return Dataset(features=_standardize(X), labels=y, environment=env).validate()


def gen_hiring_dataset(seed, n, bias=None):
    """Hiring pool with five merit features and three sensitive columns.

    The latent hiring score is a linear merit combination plus noise
    minus the summed group penalties (in latent standard deviations);
    the label marks the top 30 percent of latent scores. Features are
    drawn independently of the sensitive attributes, so bias enters
    through the labels alone: a learner trained on features cannot
    tell the groups apart, penalized groups become confident (and
    mostly correct) rejections, and the unpenalized straddle the hiring
    bar where the pooled scores are least decisive.
    """
    _check_n(n)
    bias = (bias if bias is not None else DEFAULT_BIAS).validate()
    rng = np.random.default_rng(seed)
    gender = rng.choice(_GENDERS, size=n, p=_GENDER_PROBS)
    ethnicity = rng.choice(_ETHNICITIES, size=n, p=_ETHNICITY_PROBS)
    ses = rng.choice(_SES, size=n, p=_SES_PROBS)
    X = rng.standard_normal((n, 5))
    noise = rng.normal(0.0, _HIRING_NOISE, size=n)

    penalty = np.zeros(n)
    for col in (gender, ethnicity, ses):
        for value, delta in bias.penalties.items():
            penalty += np.where(col == value, delta, 0.0)

    merit = X @ np.array(_HIRING_WEIGHTS)
    latent0 = merit + noise
    scale = float(latent0.std()) if n > 1 else 1.0
    latent = latent0 - penalty * scale
    if n > 0:
        labels = (latent > np.quantile(latent, 0.7)).astype(np.int64)
    else:
        labels = np.zeros(0, np.int64)
    return Dataset(
        features=_standardize(X),
        labels=labels,
        sensitive={"gender": gender, "ethnicity": ethnicity, "ses": ses},
    ).validate()
