import math
from dataclasses import replace

import numpy as np
import pytest

from fracdyn.fraccore import HistoryFunction, MemoryOperatorSpec, ShapeError
from fracdyn.gronwall import FAIL, PASS
from fracdyn.mlf import mittag_leffler
from fracdyn.solver import ProblemSpec, SolverConfig, Trajectory, solve
from fracdyn.stability import ConfigurationError, measure_residual, residual_series, uh_constant, verify_uh


def relax(t, x, d, m):
    return -x


def _shifted_exact(alpha, delta, h=1e-3):
    pr = ProblemSpec(relax, [1.0], alpha, 1.0, lipschitz_L=1.0)
    y = solve(pr, SolverConfig(h))
    ex = mittag_leffler(-(y.times**alpha), alpha)[:, None] + delta
    return pr, Trajectory(y.grid, ex, y.derivs, HistoryFunction.constant(ex[0]), y.inner_iters)


def _linear_delay(L=0.8, Ld=0.2, alpha=0.5, tau=0.3):
    A = np.array([[-0.5, 0.3], [0.1, -0.5]]) * L / 0.8
    B = np.array([[0.4, -0.4], [0.2, 0.6]]) * L / 0.8
    D = np.array([[0.1, -0.1], [0.0, 0.2]]) * Ld / 0.2

    def F(t, x, d, m):
        return A @ x + B @ m + D @ d

    return ProblemSpec(F, [1.0, -0.5], alpha, 1.0, memory=MemoryOperatorSpec.delay(tau), lipschitz_L=L, lipschitz_d=Ld)


def _forced(pr, delta, e=(1.0, 0.5)):
    e = np.asarray(e)
    return replace(pr, F=lambda t, x, d, m: pr.F(t, x, d, m) + delta * math.sin(t) * e)


def test_own_output_has_tiny_residual():
    pr = _linear_delay()
    cfg = SolverConfig(0.005)
    y = solve(pr, cfg)
    assert measure_residual(y, pr) <= 10 * cfg.implicit_tol


@pytest.mark.parametrize("alpha,delta,rel", [(1.0, 1e-3, 1e-3), (0.8, 1e-2, 0.05)])
def test_shifted_exact_solution_has_residual_delta(alpha, delta, rel):
    pr, y = _shifted_exact(alpha, delta)
    assert measure_residual(y, pr) == pytest.approx(delta, rel=rel)


def test_residual_of_constant_under_zero_dynamics():
    pr = ProblemSpec(lambda t, x, d, m: np.zeros(1), [2.0], 0.4, 1.0, lipschitz_L=1.0)
    y = solve(pr, SolverConfig(0.01))
    assert measure_residual(y, pr) == 0.0
    assert measure_residual(y, pr, estimator="l1") == 0.0


def test_l1_estimator_is_available():
    pr, y = _shifted_exact(1.0, 1e-3)
    eta = residual_series(y, pr, estimator="l1")
    assert eta.shape == y.states.shape
    with pytest.raises(ValueError):
        residual_series(y, pr, estimator="spline")


def test_constant_vanishing_lipschitz_limit():
    pr = ProblemSpec(relax, [1.0], 0.5, 1.0, lipschitz_L=1.0)
    assert uh_constant(pr, L=0.0) == pytest.approx(1.0 / math.gamma(1.5), rel=1e-12)
    assert uh_constant(pr, L=1e-9) == pytest.approx(1.0 / math.gamma(1.5), rel=1e-6)
    pr2 = ProblemSpec(relax, [1.0], 0.7, 2.5, lipschitz_L=1.0)
    assert uh_constant(pr2, L=0.0) == pytest.approx(2.5**0.7 / math.gamma(1.7), rel=1e-12)


def test_classical_constant_close_to_exponential():
    pr = ProblemSpec(relax, [1.0], 1.0, 1.0, lipschitz_L=1.0)
    C = uh_constant(pr)
    assert math.e <= C <= 8 * math.e


def test_constant_needs_lipschitz():
    pr = ProblemSpec(relax, [1.0], 0.5, 1.0)
    with pytest.raises(ConfigurationError):
        uh_constant(pr)


def test_bound_non_decreasing_in_horizon():
    pr = _linear_delay()
    Cs = [uh_constant(replace(pr, T=T)) for T in np.linspace(0.1, 2.0, 12)]
    assert np.all(np.diff(Cs) >= 0)


def test_unperturbed_trajectory_passes():
    pr = _linear_delay()
    cfg = SolverConfig(0.005)
    rep = verify_uh(solve(pr, cfg), pr, cfg)
    assert rep.verdict == PASS
    assert rep.max_deviation == 0.0
    assert rep.margin == pytest.approx(rep.bound)


def test_forced_trajectory_passes():
    pr = _linear_delay()
    cfg = SolverConfig(0.005)
    rep = verify_uh(solve(_forced(pr, 1e-3), cfg), pr, cfg)
    assert rep.verdict == PASS
    assert rep.max_deviation / rep.epsilon <= rep.C
    assert rep.epsilon == pytest.approx(1e-3 * math.sin(1.0) * 1.0, rel=0.05)


def test_scale_linearity():
    pr = _linear_delay()
    cfg = SolverConfig(0.002)
    r1 = verify_uh(solve(_forced(pr, 1e-3), cfg), pr, cfg)
    r2 = verify_uh(solve(_forced(pr, 2e-3), cfg), pr, cfg)
    assert r2.epsilon / r1.epsilon == pytest.approx(2.0, rel=0.05)
    assert r2.max_deviation / r1.max_deviation <= 2.0 * 1.05


def test_overshoot_fails():
    pr = _linear_delay()
    cfg = SolverConfig(0.005)
    x = solve(pr, cfg)
    C = uh_constant(pr)
    eps = 1e-3
    adv = Trajectory(x.grid, x.states + 2 * C * eps * x.times[:, None], x.derivs, x.history, x.inner_iters)
    rep = verify_uh(adv, pr, cfg, epsilon=eps)
    assert rep.verdict == FAIL and rep.margin < 0


def test_grid_mismatch_rejected():
    pr = _linear_delay(tau=0.3)
    y = solve(_linear_delay(tau=0.25), SolverConfig(0.005))
    with pytest.raises(ShapeError):
        measure_residual(y, pr)
