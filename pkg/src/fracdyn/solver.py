"""Fractional Adams predictor-corrector for implicit delay systems.

The problem is ``D^alpha x = F(t, x, D^alpha x, I[x])`` with a Caputo
derivative of order ``alpha`` in (0, 1].  Written as a Volterra equation,
``x(t) = x0 + I^alpha d(t)`` with ``d = D^alpha x``, so the corrector gives
``x_k`` as an affine function of the unknown derivative value ``d_k``.
Each step solves ``d_k = F(t_k, x_k(d_k), d_k, m_k)`` by damped Picard
iteration, seeded from a product-rectangle predictor.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable, Optional

import numpy as np

from .fraccore import (
    HistoryFunction,
    MemoryEvaluator,
    MemoryOperatorSpec,
    ShapeError,
    UniformGrid,
    rl_integral_weights,
)

RHS = Callable[[float, np.ndarray, np.ndarray, np.ndarray], np.ndarray]

DIVERGENCE_RUN = 5


class SolverError(RuntimeError):
    """Base class for failures while stepping."""

    def __init__(self, message: str, step: int):
        super().__init__(message)
        self.step = step


class NonConvergenceError(SolverError):
    """The inner fixed-point iteration did not reach the tolerance."""

    def __init__(self, step: int, residual: float, iterations: int, reason: str = "max iterations"):
        super().__init__(
            f"inner iteration failed at step {step} ({reason}): residual {residual:.3e} "
            f"after {iterations} iterations",
            step,
        )
        self.residual = residual
        self.iterations = iterations


class BlowUpError(SolverError):
    """The right-hand side or the state became non-finite."""

    def __init__(self, step: int):
        super().__init__(f"non-finite value encountered at step {step}", step)


@dataclass(frozen=True)
class ProblemSpec:
    """Implicit fractional delay problem on ``[0, T]``.

    ``F(t, x, d, m)`` receives the state, the current Caputo derivative
    value and the memory output (all length-``n`` arrays) and returns a
    length-``n`` array.  ``lipschitz_L`` bounds ``F`` in ``x`` and ``m``;
    ``lipschitz_d`` bounds it in ``d`` (zero for explicit problems).
    """

    F: RHS
    x0: np.ndarray
    alpha: float
    T: float
    memory: MemoryOperatorSpec = field(default_factory=MemoryOperatorSpec.none)
    history: Optional[HistoryFunction] = None
    lipschitz_L: Optional[float] = None
    lipschitz_d: float = 0.0
    name: str = ""

    def __post_init__(self):
        x0 = np.atleast_1d(np.asarray(self.x0, dtype=float))
        object.__setattr__(self, "x0", x0)
        if not (0.0 < self.alpha <= 1.0):
            raise ValueError(f"alpha must lie in (0,1], got {self.alpha}")
        if not self.T > 0.0:
            raise ValueError(f"horizon T must be positive, got {self.T}")
        if self.history is None:
            object.__setattr__(self, "history", HistoryFunction.constant(x0))
        if self.lipschitz_L is not None and not self.lipschitz_L > 0.0:
            raise ValueError("lipschitz_L must be positive when given")
        if not (0.0 <= self.lipschitz_d < 1.0):
            raise ValueError("lipschitz_d must lie in [0, 1)")
        h0 = self.history(0.0)
        if h0.shape != x0.shape or np.max(np.abs(h0 - x0)) > 1e-12:
            raise ValueError("history(0) must equal x0")

    @property
    def dimension(self) -> int:
        return self.x0.shape[0]

    @property
    def tau(self) -> Optional[float]:
        return self.memory.tau

    def with_initial(self, x0, history: Optional[HistoryFunction] = None) -> "ProblemSpec":
        return replace(self, x0=np.asarray(x0, dtype=float), history=history or HistoryFunction.constant(x0))


@dataclass(frozen=True)
class SolverConfig:
    h: float
    implicit_tol: float = 1e-10
    implicit_max_iter: int = 100
    damping: float = 1.0

    def __post_init__(self):
        if not self.h > 0.0:
            raise ValueError("h must be positive")
        if not self.implicit_tol > 0.0:
            raise ValueError("implicit_tol must be positive")
        if self.implicit_max_iter < 1:
            raise ValueError("implicit_max_iter must be at least 1")
        if not (0.0 < self.damping <= 1.0):
            raise ValueError("damping must lie in (0, 1]")


@dataclass
class Trajectory:
    """Solution samples on a uniform grid plus the stored derivative values."""

    grid: UniformGrid
    states: np.ndarray
    derivs: np.ndarray
    history: HistoryFunction
    inner_iters: np.ndarray

    @property
    def times(self) -> np.ndarray:
        return self.grid.times

    @property
    def dimension(self) -> int:
        return self.states.shape[1]

    def history_segment(self) -> np.ndarray:
        """History values on the grid nodes of ``[-tau, 0]``."""
        return self.history.on_grid(self.grid)

    def full(self):
        """Times and states on ``[-tau, T]`` (history nodes followed by the solution)."""
        ht = self.grid.history_times()[:-1]
        hs = self.history_segment()[:-1]
        return np.concatenate([ht, self.times]), np.vstack([hs, self.states])


def inner_solve(
    F: RHS,
    t: float,
    x_of_d: Callable[[np.ndarray], np.ndarray],
    m_of_x: Callable[[np.ndarray], np.ndarray],
    d_guess: np.ndarray,
    cfg: SolverConfig,
    step: int = 0,
):
    """Damped Picard iteration for ``d = F(t, x(d), d, m(x(d)))``.

    Returns ``(x, d, iterations)`` where the iteration count is the number
    of right-hand side evaluations.  The returned pair satisfies
    ``|d - F(t, x, d, m)|_inf <= cfg.implicit_tol``.
    """
    omega = cfg.damping
    tol = cfg.implicit_tol
    d = np.asarray(d_guess, dtype=float)
    prev = math.inf
    growing = 0
    res = math.inf
    for it in range(1, cfg.implicit_max_iter + 1):
        x = x_of_d(d)
        fv = np.asarray(F(t, x, d, m_of_x(x)), dtype=float)
        if not math.isfinite(fv.sum() + x.sum()):
            raise BlowUpError(step)
        res = float(np.abs(fv - d).max())
        if res <= tol:
            return x, d, it
        growing = growing + 1 if res > prev else 0
        if growing >= DIVERGENCE_RUN:
            raise NonConvergenceError(step, res, it, reason="diverging")
        prev = res
        d = fv if omega == 1.0 else (1.0 - omega) * d + omega * fv
    raise NonConvergenceError(step, res, cfg.implicit_max_iter)


def solve(problem: ProblemSpec, cfg: SolverConfig) -> Trajectory:
    """Integrate ``problem`` on ``[0, T]``.

    The step is shrunk so that a discrete delay spans a whole number of
    steps; the grid actually used is stored on the returned trajectory.
    """
    grid = UniformGrid.aligned(problem.T, cfg.h, problem.tau)
    return solve_on_grid(problem, cfg, grid)


def solve_on_grid(problem: ProblemSpec, cfg: SolverConfig, grid: UniformGrid) -> Trajectory:
    """Like :func:`solve` but on a caller-supplied grid (delay must be aligned)."""
    # overflow is reported as BlowUpError, not as a floating-point warning
    with np.errstate(over="ignore", invalid="ignore"):
        return _march(problem, cfg, grid)


def _march(problem: ProblemSpec, cfg: SolverConfig, grid: UniformGrid) -> Trajectory:
    F = problem.F
    n = problem.dimension
    N = grid.n_steps
    alpha = problem.alpha
    h = grid.h
    x0 = problem.x0
    times = grid.times

    states = np.zeros((N + 1, n))
    derivs = np.zeros((N + 1, n))
    iters = np.zeros(N + 1, dtype=int)
    states[0] = x0

    mem = MemoryEvaluator(problem.memory, grid, problem.history, n)
    w = rl_integral_weights(alpha, N, h)
    classical = alpha == 1.0

    def memory_at(k):
        past, weight = mem.split(k, states)
        if weight == 0.0:
            return lambda x: past
        return lambda x: past + weight * mem.current(k, x, states)

    # t = 0: the state is given, only d_0 is unknown
    m0 = memory_at(0)
    guess = np.asarray(F(0.0, x0, np.zeros(n), m0(x0)), dtype=float)
    if not np.all(np.isfinite(guess)):
        raise BlowUpError(0)
    _, derivs[0], iters[0] = inner_solve(F, 0.0, lambda d: x0, m0, guess, cfg, step=0)
    mem.record(0, states)

    diag = h / 2.0 if classical else w.trap_scale
    for k in range(1, N + 1):
        if classical:
            base = states[k - 1] + 0.5 * h * derivs[k - 1]
            pred = states[k - 1] + h * derivs[k - 1]
        else:
            acc = w.first[k] * derivs[0]
            if k > 1:
                acc = acc + w.mid[k - 1 : 0 : -1] @ derivs[1:k]
            base = x0 + w.trap_scale * acc
            pred = x0 + w.rect[k - 1 :: -1] @ derivs[:k]
        mk = memory_at(k)
        tk = times[k]
        guess = np.asarray(F(tk, pred, derivs[k - 1], mk(pred)), dtype=float)
        if not math.isfinite(guess.sum()):
            raise BlowUpError(k)
        x, d, it = inner_solve(F, tk, lambda d: base + diag * d, mk, guess, cfg, step=k)
        states[k] = x
        derivs[k] = d
        iters[k] = it
        mem.record(k, states)

    return Trajectory(grid, states, derivs, problem.history, iters)


def weighted_norm_distance(a: Trajectory, b: Trajectory, rho: float) -> float:
    """``sup_k exp(-rho t_k) |a_k - b_k|_inf`` over the common grid."""
    if not a.grid.same_as(b.grid) or a.states.shape != b.states.shape:
        raise ShapeError("trajectories live on different grids")
    diff = np.max(np.abs(a.states - b.states), axis=1)
    return float(np.max(np.exp(-rho * a.times) * diff))
