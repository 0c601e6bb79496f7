import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gpmdl.bounds import (
    BoundSpec,
    RiskPair,
    evaluate_bounds,
    h_b,
    h_C,
    h_D,
    h_D_inverse,
    lossy_bound,
    residual_emp_diff,
    residual_emp_diff_mc,
    thm1_bound,
    thm2_gen_bound,
    thm2_rhs,
    thm3_mdl_dist,
    thm4_tail_rhs,
)
from oracles import brute_h_C, brute_h_D_inverse

unit = st.floats(0.0, 1.0, allow_nan=False)


def test_entropy_golden_values():
    assert h_b(0.5) == pytest.approx(1.0, abs=1e-15)
    assert h_b(0.0) == 0.0 and h_b(1.0) == 0.0
    assert h_b(0.25) == pytest.approx(0.8112781244591328, abs=1e-12)
    assert h_D(0.5, 0.0) == pytest.approx(0.6225562489182657, abs=1e-12)
    assert h_D(1.0, 0.0) == pytest.approx(2.0, abs=1e-12)


@given(unit, unit)
def test_h_D_symmetric_and_bounded(a, b):
    v = h_D(a, b)
    assert v == pytest.approx(h_D(b, a), abs=1e-12)
    assert 0.0 <= v <= 2.0 + 1e-12


@given(unit)
def test_h_D_zero_on_diagonal(a):
    assert h_D(a, a) == pytest.approx(0.0, abs=1e-12)


def test_domain_errors():
    with pytest.raises(ValueError):
        h_b(1.5)
    with pytest.raises(ValueError):
        h_D(-0.1, 0.2)
    with pytest.raises(ValueError):
        h_C(0.1, 0.2, -1.0)
    with pytest.raises(ValueError):
        h_D_inverse(2.5, 0.1)
    with pytest.raises(ValueError):
        RiskPair(0.1, 1.2)
    with pytest.raises(ValueError):
        BoundSpec(n=0, C=2)
    with pytest.raises(ValueError):
        BoundSpec(n=10, C=2, mdl=-1.0)
    with pytest.raises(ValueError):
        BoundSpec(n=10, C=2, tv=3.0)


def test_h_C_edge_cases():
    assert h_C(0.3, 0.3, 0.1) == 0.0
    assert h_C(0.1, 0.5, 0.0) == 0.0
    # shift capped at half the gap: both risks meet in the middle
    full = h_C(0.1, 0.5, 1.0)
    assert full == pytest.approx(2 * h_b(0.3) - h_b(0.1) - h_b(0.5), abs=1e-9)


@given(unit, unit, st.floats(0.0, 0.5))
@settings(max_examples=60, deadline=None)
def test_h_C_matches_grid_oracle(a, b, eps):
    assert h_C(a, b, eps) == pytest.approx(brute_h_C(a, b, eps), abs=1e-6)


@given(unit, st.floats(0.0, 0.3))
@settings(max_examples=60, deadline=None)
def test_h_C_monotone_in_eps(a, e):
    assert h_C(a, 0.9, e + 0.01) >= h_C(a, 0.9, e) - 1e-12


@given(st.floats(0.0, 2.0), unit)
@settings(max_examples=60, deadline=None)
def test_h_D_inverse_matches_oracle(y, x2):
    assert h_D_inverse(y, x2) == pytest.approx(brute_h_D_inverse(y, x2), abs=1e-6)


def test_h_D_inverse_saturates():
    assert h_D_inverse(2.0, 0.0) == 1.0
    # h_D is quadratic near the diagonal, so the bisection tolerance shows up as a square root
    assert h_D_inverse(0.0, 0.3) == pytest.approx(0.3, abs=1e-7)


def test_thm1_formula():
    assert thm1_bound(BoundSpec(n=50000, C=10)) == pytest.approx(math.sqrt(12 / 50000), abs=1e-15)
    assert thm1_bound(BoundSpec(n=100, C=2, mdl=48.0)) == pytest.approx(1.0)


def test_thm2_gen_bound_is_fixed_point():
    spec = BoundSpec(n=50000, C=10, mdl=500.0, tv=math.sqrt(10 / 50000))
    emp = 0.05
    gen = thm2_gen_bound(spec, emp)
    x = emp + gen
    rhs = thm2_rhs(spec, RiskPair(emp, x))
    assert h_D(x, emp) == pytest.approx(rhs, abs=1e-9)


def test_thm2_realizable_decays_linearly():
    # at zero empirical risk and no residual the gap is h_D^-1 of (MDL + log n)/n
    a = thm2_gen_bound(BoundSpec(n=10**6, C=2, mdl=1e3), 0.0)
    b = thm2_gen_bound(BoundSpec(n=10**6, C=2, mdl=4e3), 0.0)
    # h_D(x, 0) ~ x for small x, so the bound scales roughly linearly, not as a square root
    assert b / a > 3.0


def test_thm2_needs_n_ten():
    with pytest.raises(ValueError):
        thm2_rhs(BoundSpec(n=5, C=2), RiskPair(0.1, 0.2))


def test_log_bases_order():
    spec = BoundSpec(n=1000, C=4, mdl=20.0, tv=0.05)
    r = RiskPair(0.1, 0.3)
    mixed = thm2_rhs(spec, r, "mixed")
    bits = thm2_rhs(spec, r, "bits")
    nats = thm2_rhs(spec, r, "nats")
    core = (20.0 + math.log(1000)) / 1000
    res = residual_emp_diff(r, 0.05)
    assert mixed == pytest.approx(core + res)
    assert bits == pytest.approx(core / math.log(2) + res)
    assert nats == pytest.approx(core + res * math.log(2))
    with pytest.raises(ValueError):
        thm2_rhs(spec, r, "decibels")


def test_tail_rhs_reduces_to_average_case_at_delta_one():
    spec = BoundSpec(n=1000, C=4, mdl=20.0, tv=0.05, delta=1.0)
    r = RiskPair(0.1, 0.3)
    assert thm4_tail_rhs(spec, 20.0, r) == pytest.approx(thm2_rhs(spec, r))
    tighter = BoundSpec(n=1000, C=4, mdl=20.0, tv=0.05, delta=0.01)
    assert thm4_tail_rhs(tighter, 20.0, r) > thm2_rhs(spec, r)


def test_residual_mc_matches_deterministic_at_fixed_tv():
    r = RiskPair(0.05, 0.2)
    mc = residual_emp_diff_mc(r, n=50000, C=10, n_draws=200, seed=1)
    # expected tv under uniform labels is of order sqrt(C/n); the integrand is monotone in tv
    lo = residual_emp_diff(r, 0.0)
    hi = residual_emp_diff(r, 4 * math.sqrt(10 / 50000))
    assert lo <= mc <= hi


def test_distributed_mdl():
    assert thm3_mdl_dist([2.0, 3.0], 1.0) == pytest.approx(4.0)
    val, bound = thm3_mdl_dist([2.0, 3.0], 1.0, n=100, C=2)
    assert bound == pytest.approx(thm1_bound(BoundSpec(n=100, C=2, mdl=4.0)))
    with pytest.warns(RuntimeWarning):
        v, b = thm3_mdl_dist([1.0], 2.0, n=100, C=2)
    assert v == -1.0 and b == pytest.approx(thm1_bound(BoundSpec(n=100, C=2)))
    with pytest.raises(ValueError):
        thm3_mdl_dist([-1.0], 0.0)


def test_lossy_bound_adds_distortion():
    spec = BoundSpec(n=100, C=2, mdl=10.0)
    assert lossy_bound(spec, 0.1) == pytest.approx(thm1_bound(spec) + 0.1)
    with pytest.raises(ValueError):
        lossy_bound(spec, -0.1)


def test_evaluate_bounds_report():
    spec = BoundSpec(n=2000, C=4, mdl=100.0, tv=0.02, delta=0.05)
    rep = evaluate_bounds(spec, RiskPair(0.1, 0.2))
    d = rep.to_dict()
    assert set(d) == {"thm1_bound", "thm2_rhs", "thm2_gen_bound", "residual", "tail_bound"}
    assert all(np.isfinite(v) for v in d.values())
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        evaluate_bounds(spec, RiskPair(0.0, 0.0))
