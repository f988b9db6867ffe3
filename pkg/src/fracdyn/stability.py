"""Ulam-Hyers stability checks for implicit fractional delay problems.

A candidate trajectory ``y`` is an ``epsilon``-solution when its defect
``eta = D^alpha y - F(t, y, D^alpha y, I[y])`` stays below ``epsilon`` in the
sup norm.  Stability asks for a constant ``C`` with
``|y - x| <= C epsilon`` where ``x`` is the exact solution started from
``y(0)``.  ``C`` comes from the Gronwall certificate applied to
``|y - x|``::

    |y - x|(t) <= kappa eps t^a / Gamma(a+1)
                  + kappa L / Gamma(a) int (t-s)^(a-1) (|y - x|(s) + |m_y - m_x|(s)) ds

with ``kappa = 1 / (1 - L_d)`` absorbing the Lipschitz dependence on the
derivative argument.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Optional

import numpy as np

from .fraccore import MemoryKind, ShapeError, caputo_derivative_grid, memory_series, rl_integral_weights
from .gronwall import FAIL, PASS, GronwallCertificate, GronwallInput, compute_bound_constant
from .solver import ProblemSpec, SolverConfig, Trajectory, solve_on_grid


class ConfigurationError(ValueError):
    """A required problem constant was not supplied."""


@dataclass(frozen=True)
class StabilityReport:
    epsilon: float
    C: float
    max_deviation: float
    bound: float
    verdict: str
    margin: float
    epsilon_measured: float
    certificate: GronwallCertificate

    @property
    def passed(self) -> bool:
        return self.verdict == PASS


def _check_grid(y: Trajectory, problem: ProblemSpec) -> None:
    if y.states.ndim != 2 or y.states.shape[1] != problem.dimension:
        raise ShapeError(f"trajectory has dimension {y.states.shape[1:]}, problem has {problem.dimension}")
    if y.states.shape[0] != y.grid.n_steps + 1:
        raise ShapeError("trajectory samples do not match its grid")
    if y.grid.n_steps < 2:
        raise ShapeError("need at least three samples to measure a residual")
    tau = problem.tau
    if tau is not None and not math.isclose(y.grid.tau, tau, rel_tol=1e-9):
        raise ShapeError(f"grid delay {y.grid.tau} does not match problem delay {tau}")
    if y.history.dimension != problem.dimension:
        raise ShapeError("history dimension does not match the problem")


def _scheme_derivative(y: Trajectory, problem: ProblemSpec, mem: np.ndarray, max_iter: int = 200) -> np.ndarray:
    """Derivative samples that reproduce ``y`` exactly under the product-trapezoid corrector.

    Inverting ``y_k = y_0 + I^alpha d (t_k)`` node by node leaves ``d_0`` free;
    it is fixed by asking the defect at nodes 0 and 1 to agree, which removes
    the alternating mode the inversion would otherwise carry.
    """
    F = problem.F
    t = y.times
    x = y.states
    N = y.grid.n_steps
    alpha = problem.alpha
    w = rl_integral_weights(alpha, N, y.grid.h)
    scale = w.trap_scale
    A = (x - x[0]) / scale
    a1 = w.first[1]

    def f(k, d):
        return np.asarray(F(t[k], x[k], d, mem[k]), dtype=float)

    d0 = f(0, np.zeros_like(x[0]))
    for _ in range(max_iter):
        d1 = A[1] - a1 * d0
        new = (A[1] - f(1, d1) + f(0, d0)) / (1.0 + a1)
        if np.max(np.abs(new - d0)) <= 1e-15 * (1.0 + np.max(np.abs(new))):
            d0 = new
            break
        d0 = new

    d = np.empty_like(x)
    d[0] = d0
    for k in range(1, N + 1):
        acc = w.first[k] * d[0]
        if k > 1:
            acc = acc + w.mid[k - 1 : 0 : -1] @ d[1:k]
        d[k] = A[k] - acc
    return d


def residual_series(y: Trajectory, problem: ProblemSpec, estimator: str = "scheme") -> np.ndarray:
    """Defect ``eta_k = d_k - F(t_k, y_k, d_k, m_k)`` at every node.

    ``estimator="scheme"`` recovers ``d`` by inverting the product-trapezoid
    corrector used by the solver; ``"l1"`` uses the L1 Caputo estimate.
    """
    _check_grid(y, problem)
    mem = memory_series(problem.memory, y.grid, y.history, y.states)
    if estimator == "scheme":
        d = _scheme_derivative(y, problem, mem)
    elif estimator == "l1":
        d = caputo_derivative_grid(y.states, problem.alpha, y.grid.h)
    else:
        raise ValueError(f"unknown derivative estimator {estimator!r}")
    t = y.times
    eta = np.empty_like(d)
    for k in range(t.shape[0]):
        eta[k] = d[k] - np.asarray(problem.F(t[k], y.states[k], d[k], mem[k]), dtype=float)
    return eta


def measure_residual(y: Trajectory, problem: ProblemSpec, estimator: str = "scheme") -> float:
    """Sup-norm defect of ``y`` over nodes ``1..N``."""
    eta = residual_series(y, problem, estimator)
    return float(np.max(np.abs(eta[1:])))


def _lipschitz(problem: ProblemSpec, L: Optional[float]) -> float:
    L = problem.lipschitz_L if L is None else L
    if L is None:
        raise ConfigurationError("a Lipschitz constant L is required (argument or problem.lipschitz_L)")
    if not (math.isfinite(L) and L >= 0.0):
        raise ConfigurationError(f"Lipschitz constant must be finite and non-negative, got {L}")
    return float(L)


def uh_certificate(problem: ProblemSpec, L: Optional[float] = None):
    """Return ``(C, certificate)`` for ``problem`` on ``[0, problem.T]``."""
    L = _lipschitz(problem, L)
    alpha = problem.alpha
    T = problem.T
    kappa = 1.0 / (1.0 - problem.lipschitz_d)
    ga = math.gamma(alpha)
    normA = kappa * L / ga
    normB = 0.0
    beta = alpha
    mem = problem.memory
    tau = None
    if mem.kind is MemoryKind.DISCRETE_DELAY:
        normB = kappa * L / ga
        tau = mem.tau
    elif mem.kind in (MemoryKind.DISTRIBUTED_KERNEL, MemoryKind.FRACTIONAL_INTEGRAL):
        if mem.g_sup is None:
            raise ConfigurationError("a distributed kernel needs a declared bound g_sup")
        # |m_y - m_x|(s) <= g_sup * lip * s^beta/beta * sup_{r<=s} |y - x|, doubled
        # when the inner function also sees the delayed state
        reach = 2.0 if mem.tau is not None else 1.0
        gain = mem.g_sup * mem.phi_lipschitz * reach * T**mem.beta / mem.beta
        normA += kappa * L * gain / ga
    inp = GronwallInput(alpha, beta, normA, normB, T, phi_norm=0.0, f_sup=1.0, tau=tau)
    cert = compute_bound_constant(inp)
    C = kappa * T**alpha / math.gamma(alpha + 1.0) * cert.M
    return C, cert


def uh_constant(problem: ProblemSpec, L: Optional[float] = None) -> float:
    """Ulam-Hyers constant ``C = kappa T^alpha / Gamma(alpha+1) * M``."""
    return uh_certificate(problem, L)[0]


def verify_uh(
    y: Trajectory,
    problem: ProblemSpec,
    cfg: Optional[SolverConfig] = None,
    epsilon: Optional[float] = None,
    exact: Optional[Trajectory] = None,
    L: Optional[float] = None,
    estimator: str = "scheme",
) -> StabilityReport:
    """Compare ``y`` with the exact solution from ``y(0)`` against ``C * epsilon``.

    ``epsilon`` defaults to the measured defect; passing a value checks a
    claimed accuracy instead.  ``exact`` skips the reference solve.
    """
    eps_measured = measure_residual(y, problem, estimator)
    eps = eps_measured if epsilon is None else float(epsilon)
    if eps < 0.0:
        raise ValueError("epsilon must be non-negative")
    local = replace(problem, x0=y.states[0].copy(), history=y.history, T=y.grid.T)
    if exact is None:
        cfg = cfg or SolverConfig(h=y.grid.h)
        exact = solve_on_grid(local, replace(cfg, h=y.grid.h), y.grid)
    elif not exact.grid.same_as(y.grid):
        raise ShapeError("reference trajectory lives on a different grid")
    C, cert = uh_certificate(local, L)
    dev = float(np.max(np.abs(y.states - exact.states)))
    bound = C * eps
    verdict = PASS if dev <= bound else FAIL
    return StabilityReport(eps, C, dev, bound, verdict, bound - dev, eps_measured, cert)
