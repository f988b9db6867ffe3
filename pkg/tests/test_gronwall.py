import math

import numpy as np
import pytest

from fracdyn.gronwall import (
    FAIL,
    HYPOTHESIS_NOT_SATISFIED,
    PASS,
    Q_MAX,
    GronwallInput,
    certification_sweep,
    certify_bound,
    compute_bound_constant,
    extremal_solution,
    hypothesis_rhs,
)
from fracdyn.mlf import mittag_leffler


def test_no_integral_terms():
    c = compute_bound_constant(GronwallInput(0.5, 0.5, 0.0, 0.0, 3.0, phi_norm=0.2, f_sup=1.5))
    assert c.M == 1.0
    assert c.bound == pytest.approx(1.7)


def test_classical_constant():
    c = compute_bound_constant(GronwallInput(1.0, 1.0, 1.0, 0.0, 1.0))
    # the true constant is e; the window recursion must not undercut it
    assert math.e <= c.M <= 4 * math.e
    assert c.M == pytest.approx(2.7183647884786435, rel=1e-12)
    assert c.q <= Q_MAX


def test_fractional_constant_against_mittag_leffler():
    # u = 1 + I^{1/2} u has solution E_{1/2}(t^{1/2}); its value at t = 1 is the sharp constant
    sharp = mittag_leffler(1.0, 0.5)
    c = compute_bound_constant(GronwallInput(0.5, 0.5, 1.0 / math.gamma(0.5), 0.0, 1.0))
    assert sharp <= c.M <= 1.1 * sharp
    assert c.M == pytest.approx(5.153967137573771, rel=1e-12)


def test_kernel_mass():
    assert GronwallInput(0.5, 0.5, 1.0, 0.0, 1.0).kernel_mass(1.0) == pytest.approx(2.0)


def test_monotone_in_horizon_and_norms():
    Ts = np.linspace(0.1, 2.0, 20)
    Ms = [compute_bound_constant(GronwallInput(0.5, 0.3, 0.7, 0.4, T, tau=0.25)).M for T in Ts]
    assert np.all(np.diff(Ms) >= 0)
    As = np.linspace(0.0, 1.0, 10)
    Ms = [compute_bound_constant(GronwallInput(0.5, 0.3, a, 0.4, 1.5, tau=0.25)).M for a in As]
    assert np.all(np.diff(Ms) >= 0)
    Bs = np.linspace(0.0, 1.0, 10)
    Ms = [compute_bound_constant(GronwallInput(0.5, 0.3, 0.3, b, 1.5, tau=0.25)).M for b in Bs]
    assert np.all(np.diff(Ms) >= 0)


def test_delay_only_helps():
    base = GronwallInput(0.5, 0.8, 0.7, 0.4, 2.0, 0.5, 1.0)
    undelayed = compute_bound_constant(base).M
    delayed = compute_bound_constant(GronwallInput(0.5, 0.8, 0.7, 0.4, 2.0, 0.5, 1.0, tau=0.3)).M
    assert delayed <= undelayed


def test_invalid_inputs():
    with pytest.raises(ValueError):
        GronwallInput(0.0, 0.5, 1.0, 0.0, 1.0)
    with pytest.raises(ValueError):
        GronwallInput(0.5, 0.5, -1.0, 0.0, 1.0)
    with pytest.raises(ValueError):
        GronwallInput(0.5, 0.5, 1.0, 0.0, math.inf)


def test_extremal_solution_classical():
    t, u = extremal_solution(1.0, 0.0, 1.0, 1.0, lambda s: np.array([1.0]), 0.0, 0.5, 1.0, 1e-3)
    assert np.max(np.abs(u[:, 0] - np.exp(t))) <= 1e-6


def test_extremal_solution_fractional():
    a = 0.5
    t, u = extremal_solution(a, 0.0, 0.5, 0.5, lambda s: np.array([1.0]), 0.0, 0.5, 1.0, 1e-3)
    ref = mittag_leffler(a * math.gamma(0.5) * t**0.5, 0.5)
    assert np.max(np.abs(u[:, 0] - ref)) <= 1e-3


def test_equality_solution_passes():
    inp = GronwallInput(0.5, 0.5, 0.5, 0.0, 1.0, 0.0, 1.0, tau=0.5)
    t, u = extremal_solution(0.5 * np.eye(2), np.zeros((2, 2)), 0.5, 0.5, lambda s: np.ones(2), 0.0, 0.5, 1.0, 0.01)
    v = certify_bound(inp, t, u, np.ones_like(u))
    assert v.status == PASS
    assert v.hypothesis_gap <= 0.0


def test_zero_function_passes_with_full_margin():
    inp = GronwallInput(0.7, 0.7, 0.3, 0.2, 1.0, 0.0, 1.0, tau=0.25)
    t = np.linspace(0.0, 1.0, 101)
    v = certify_bound(inp, t, np.zeros_like(t), np.ones_like(t))
    assert v.status == PASS
    assert v.margin == pytest.approx(v.certificate.bound)


def test_overshoot_fails_when_hypothesis_assumed():
    inp = GronwallInput(0.7, 0.7, 0.3, 0.2, 1.0, 0.0, 1.0, tau=0.25)
    t = np.linspace(0.0, 1.0, 101)
    u = np.full_like(t, 2 * compute_bound_constant(inp).bound)
    v = certify_bound(inp, t, u, np.ones_like(t), assume_hypothesis=True)
    assert v.status == FAIL and v.margin < 0


def test_hypothesis_violation_is_reported_separately():
    inp = GronwallInput(0.7, 0.7, 0.3, 0.2, 1.0, 0.0, 1.0, tau=0.25)
    t = np.linspace(0.0, 1.0, 101)
    u = np.full_like(t, 1e3)
    assert certify_bound(inp, t, u, np.ones_like(t)).status == HYPOTHESIS_NOT_SATISFIED


def test_hypothesis_rhs_uses_history_before_delay():
    inp = GronwallInput(1.0, 1.0, 0.0, 1.0, 1.0, phi_norm=2.0, tau=0.5)
    t = np.linspace(0.0, 1.0, 11)
    u = 2.0 - 2.0 * t
    rhs = hypothesis_rhs(inp, t, u, np.zeros_like(t))
    # int_0^t u(s - tau) ds with u = 2 on [-tau, 0]; piecewise linear, so the trapezoid is exact
    late = 1.0 + 2.0 * (t - 0.5) - (t - 0.5) ** 2
    expected = np.where(t <= 0.5, 2.0 * t, late)
    assert np.allclose(rhs, expected, atol=1e-12)


def test_small_sweep_has_no_violations():
    cases = certification_sweep(10, seed=7)
    assert all(c.status == PASS for c in cases)
    assert all(c.q <= Q_MAX for c in cases)
    assert all(c.max_u <= c.bound for c in cases)
