import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from constraintlab.constraints import (
    ConstraintSet,
    RepairConfig,
    counterfactual_violation_rate,
    exclusion_violation_rate,
    implication_violation_rate,
)
from constraintlab.enforcers import (
    apply_implication_transfer,
    apply_mutual_exclusion,
    repair_counterfactuals,
)
from constraintlab.errors import UsageError

score_tables = arrays(
    np.float64,
    st.tuples(st.integers(1, 25), st.just(3)),
    elements=st.floats(0.0, 1.0),
)


def test_exclusion_repair_examples():
    cs = ConstraintSet(exclusions=[(0, 1)], tau=0.4, rho=0.3)
    out = apply_mutual_exclusion(np.array([[0.60, 0.50]]), cs)
    assert out[0, 0] == 0.60
    assert out[0, 1] == pytest.approx(0.35, abs=1e-12)

    out = apply_mutual_exclusion(np.array([[0.30, 0.20]]), cs)
    assert np.array_equal(out, [[0.30, 0.20]])

    # reduction alone is not enough: 0.8 * 0.7 = 0.56 > tau, so the
    # clamp to tau - 1e-6 kicks in
    out = apply_mutual_exclusion(np.array([[0.90, 0.80]]), cs)
    assert out[0, 0] == 0.90
    assert out[0, 1] == pytest.approx(0.4 - 1e-6, abs=1e-12)


@settings(max_examples=80, deadline=None)
@given(score_tables)
def test_exclusion_repair_properties(scores):
    cs = ConstraintSet(exclusions=[(0, 1), (1, 2)], tau=0.4, rho=0.3)
    out = apply_mutual_exclusion(scores, cs)
    assert exclusion_violation_rate(out, cs) == 0.0
    # idempotent
    assert np.array_equal(apply_mutual_exclusion(out, cs), out)
    # argmax preserved per row and pair order preserved
    assert np.array_equal(np.argmax(out, axis=1), np.argmax(scores, axis=1))
    for a, b in cs.exclusions:
        hi = np.maximum(scores[:, a], scores[:, b])
        assert np.all(np.maximum(out[:, a], out[:, b]) <= hi + 1e-15)
        lo_before = np.minimum(scores[:, a], scores[:, b])
        assert np.all(np.minimum(out[:, a], out[:, b]) <= lo_before + 1e-15)


def test_exclusion_never_touches_unconstrained_class():
    cs = ConstraintSet(exclusions=[(0, 1)], tau=0.4, rho=0.3)
    scores = np.array([[0.5, 0.45, 0.9], [0.1, 0.2, 0.3]])
    out = apply_mutual_exclusion(scores, cs)
    assert np.array_equal(out[:, 2], scores[:, 2])


def test_transfer_examples():
    cs = ConstraintSet(implications=[(0, 1)], tau=0.4, rho=0.3)
    out = apply_implication_transfer(np.array([[0.70, 0.20]]), cs)
    assert out[0, 1] == pytest.approx(0.40, abs=1e-12)

    out = apply_implication_transfer(np.array([[0.50, 0.45]]), cs)
    assert np.array_equal(out, [[0.50, 0.45]])

    # partial transfer leaves a residual violation
    out = apply_implication_transfer(np.array([[0.45, 0.10]]), cs)
    assert out[0, 1] == pytest.approx(0.235, abs=1e-12)
    assert implication_violation_rate(out, cs) == 1.0


def test_transfer_is_not_idempotent_on_residual_rows():
    # a second application of the literal transfer rule moves a residual
    # row again; repairs that fully reach tau are stable
    cs = ConstraintSet(implications=[(0, 1)], tau=0.4, rho=0.3)
    once = apply_implication_transfer(np.array([[0.45, 0.10]]), cs)
    twice = apply_implication_transfer(once, cs)
    assert once[0, 1] == pytest.approx(0.235, abs=1e-12)
    assert twice[0, 1] == pytest.approx(0.37, abs=1e-12)

    capped = apply_implication_transfer(np.array([[0.70, 0.20]]), cs)
    assert np.array_equal(apply_implication_transfer(capped, cs), capped)


@settings(max_examples=80, deadline=None)
@given(score_tables)
def test_transfer_properties(scores):
    cs = ConstraintSet(implications=[(2, 1), (1, 0)], tau=0.4, rho=0.3)
    out = apply_implication_transfer(scores, cs)
    # never decreases a score, never moves a consequent past tau, and
    # never touches antecedent-only columns
    assert np.all(out >= scores - 1e-15)
    assert np.array_equal(out[:, 2], scores[:, 2])
    for _, b in cs.implications:
        assert np.all(out[:, b] <= np.maximum(scores[:, b], cs.tau))


def test_clamp_examples():
    cfg = RepairConfig(tau_cf=2.0)
    factual = np.array([5.0])
    out = repair_counterfactuals(factual, np.array([[8.0, 6.5]]), cfg)
    assert out[0, 0] == pytest.approx(7.0, abs=1e-12)
    assert out[0, 1] == 6.5  # inside the band: bit-identical
    out = repair_counterfactuals(factual, np.array([[2.0, 5.0]]), cfg)
    assert out[0, 0] == pytest.approx(3.0, abs=1e-12)


def test_clamp_shape_mismatch():
    with pytest.raises(UsageError):
        repair_counterfactuals(np.zeros(3), np.zeros((4, 2)), RepairConfig(tau_cf=1.0))


@settings(max_examples=80, deadline=None)
@given(
    arrays(np.float64, st.tuples(st.integers(1, 20), st.just(2)),
           elements=st.floats(-1e6, 1e6)),
    st.floats(1e-3, 1e3),
)
def test_clamp_properties(cf, tau_cf):
    factual = cf[:, 0] * 0.5 + 1.0
    cfg = RepairConfig(tau_cf=tau_cf)
    out = repair_counterfactuals(factual, cf, cfg)
    # bound holds exactly, so the strict-violation rate is zero
    assert np.all(np.abs(out - factual[:, None]) <= tau_cf)
    assert counterfactual_violation_rate(factual, out, cfg) == 0.0
    # idempotent; in-band entries bit-identical
    assert np.array_equal(repair_counterfactuals(factual, out, cfg), out)
    inside = np.abs(cf - factual[:, None]) <= tau_cf
    assert np.array_equal(out[inside], cf[inside])
