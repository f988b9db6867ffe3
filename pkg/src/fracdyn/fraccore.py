"""Grid discretizations of fractional operators.

Product-integration weights for the Riemann-Liouville integral (rectangle
and trapezoid variants), the L1 scheme for the Caputo derivative, history
functions on ``[-tau, 0]`` and the memory operators that can appear on the
right-hand side of an implicit fractional delay system.

All weights are written in terms of stable "shifted power" differences so
that they keep full relative accuracy for ``10**5`` steps and beyond.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np


class ShapeError(ValueError):
    """Inputs live on incompatible grids or have too few samples."""


class HistoryUnderflowError(ValueError):
    """A delayed argument reached further back than the stored history."""


# {{{ stable power differences


def _binom_tail(p: float, x: np.ndarray, start: int, step: int, sign: float) -> np.ndarray:
    """Sum of ``C(p, j) * (sign*x)**j`` for ``j = start, start+step, ...`` (|x| <= 0.1)."""
    total = np.zeros_like(x)
    coef = 1.0
    j = 0
    # C(p, j) recurrence; 40 terms is far past 1e-17 for |x| <= 0.1
    for j in range(1, 41):
        coef *= (p - j + 1) / j
        if j >= start and (j - start) % step == 0:
            total += coef * (sign * x) ** j
    return total


def _forward_diff(m: np.ndarray, p: float) -> np.ndarray:
    """``(m+1)**p - m**p`` for integer ``m >= 0``."""
    m = np.asarray(m, dtype=float)
    out = np.ones_like(m)
    pos = m > 0
    mp = m[pos]
    out[pos] = mp**p * np.expm1(p * np.log1p(1.0 / mp))
    return out


def _second_diff(m: np.ndarray, p: float) -> np.ndarray:
    """``(m+1)**p - 2 m**p + (m-1)**p`` for integer ``m >= 1``."""
    m = np.asarray(m, dtype=float)
    out = np.empty_like(m)
    small = m < 10
    ms = m[small]
    out[small] = (ms + 1.0) ** p - 2.0 * ms**p + (ms - 1.0) ** p
    mb = m[~small]
    out[~small] = 2.0 * mb**p * _binom_tail(p, 1.0 / mb, 2, 2, 1.0)
    return out


def _first_trap(k: np.ndarray, p: float) -> np.ndarray:
    """Endpoint weight ``(k-1)**p - (k-p) k**(p-1)`` for integer ``k >= 1``, ``p = alpha+1``."""
    k = np.asarray(k, dtype=float)
    out = np.empty_like(k)
    small = k < 10
    ks = k[small]
    out[small] = (ks - 1.0) ** p - (ks - p) * ks ** (p - 1.0)
    kb = k[~small]
    # (k-1)^p - k^p + p k^(p-1) = k^p [(1-x)^p - 1 + p x],  x = 1/k
    out[~small] = kb**p * _binom_tail(p, 1.0 / kb, 2, 1, -1.0)
    return out


# }}}


# {{{ grids and histories


@dataclass(frozen=True)
class UniformGrid:
    """Uniform grid ``t_k = t0 + k h`` on ``[0, T]``; a delay spans ``delay_steps`` cells."""

    h: float
    n_steps: int
    delay_steps: int = 0
    t0: float = 0.0

    def __post_init__(self):
        if not self.h > 0.0:
            raise ValueError(f"step h must be positive, got {self.h}")
        if self.n_steps < 0 or self.delay_steps < 0:
            raise ValueError("n_steps and delay_steps must be non-negative")

    @classmethod
    def aligned(cls, T: float, h: float, tau: Optional[float] = None) -> "UniformGrid":
        """Grid covering ``[0, T]`` with ``h`` shrunk so that ``tau`` is a whole number of steps."""
        if not T > 0.0:
            raise ValueError(f"horizon T must be positive, got {T}")
        m = 0
        if tau is not None:
            if not tau > 0.0:
                raise ValueError(f"delay tau must be positive, got {tau}")
            m = max(1, math.ceil(tau / h - 1e-9))
            h = tau / m
        n = max(1, math.ceil(T / h - 1e-9))
        return cls(h=h, n_steps=n, delay_steps=m)

    @property
    def times(self) -> np.ndarray:
        return self.t0 + self.h * np.arange(self.n_steps + 1)

    @property
    def T(self) -> float:
        return self.t0 + self.h * self.n_steps

    @property
    def tau(self) -> float:
        return self.h * self.delay_steps

    def history_times(self) -> np.ndarray:
        """Nodes on ``[-tau, 0]``, oldest first (``delay_steps + 1`` of them)."""
        return self.h * np.arange(-self.delay_steps, 1)

    def same_as(self, other: "UniformGrid") -> bool:
        return self.n_steps == other.n_steps and math.isclose(self.h, other.h, rel_tol=1e-12)


class HistoryKind(enum.Enum):
    CONSTANT = "constant"
    POLYNOMIAL = "polynomial"
    SAMPLED = "sampled"


@dataclass(frozen=True)
class HistoryFunction:
    """Initial function on ``[-tau, 0]``.

    ``data`` holds the constant vector, polynomial coefficients (increasing
    powers, shape ``(degree+1, n)``) or samples (shape ``(m+1, n)``) on a
    uniform grid of ``[-tau, 0]``.  Sampled histories are linearly
    interpolated, so grid-aligned lookups return the samples exactly.
    """

    kind: HistoryKind
    data: np.ndarray
    tau: float = 0.0

    @classmethod
    def constant(cls, value) -> "HistoryFunction":
        return cls(HistoryKind.CONSTANT, np.atleast_1d(np.asarray(value, dtype=float)))

    @classmethod
    def polynomial(cls, coeffs) -> "HistoryFunction":
        c = np.asarray(coeffs, dtype=float)
        if c.ndim == 1:
            c = c[:, None]
        return cls(HistoryKind.POLYNOMIAL, c)

    @classmethod
    def sampled(cls, samples, tau: float) -> "HistoryFunction":
        s = np.asarray(samples, dtype=float)
        if s.ndim == 1:
            s = s[:, None]
        if s.shape[0] < 2:
            raise ShapeError("a sampled history needs at least two nodes")
        if not np.all(np.isfinite(s)):
            raise ValueError("history samples must be finite")
        return cls(HistoryKind.SAMPLED, s, float(tau))

    @property
    def dimension(self) -> int:
        return self.data.shape[-1]

    def __call__(self, t: float) -> np.ndarray:
        if self.kind is HistoryKind.CONSTANT:
            return self.data.copy()
        if self.kind is HistoryKind.POLYNOMIAL:
            powers = float(t) ** np.arange(self.data.shape[0])
            return powers @ self.data
        m = self.data.shape[0] - 1
        pos = (float(t) + self.tau) / self.tau * m
        if pos < -1e-9 or pos > m + 1e-9:
            raise HistoryUnderflowError(f"t={t} outside the sampled history [-{self.tau}, 0]")
        i = int(round(pos))
        if abs(pos - i) < 1e-9:
            return self.data[i].copy()
        i = min(int(math.floor(pos)), m - 1)
        frac = pos - i
        return (1.0 - frac) * self.data[i] + frac * self.data[i + 1]

    def on_grid(self, grid: UniformGrid) -> np.ndarray:
        """History values at ``grid.history_times()``, shape ``(m+1, n)``."""
        return np.array([self(t) for t in grid.history_times()])


# }}}


# {{{ weights


@dataclass(frozen=True)
class RLWeights:
    """Product-integration weights for ``I^alpha`` on a uniform grid.

    The predictor (product rectangle) at node ``k`` is
    ``sum_{j<k} rect[k-1-j] f_j``.  The corrector (product trapezoid) is
    ``trap_scale * (first[k] f_0 + sum_{0<j<k} mid[k-j] f_j + f_k)``.
    """

    alpha: float
    h: float
    n_steps: int
    rect: np.ndarray
    first: np.ndarray
    mid: np.ndarray
    trap_scale: float

    def trapezoid_row(self, k: int) -> np.ndarray:
        """Full trapezoid weight row ``(w_{k,0}, ..., w_{k,k})``."""
        if k == 0:
            return np.zeros(1)
        row = np.empty(k + 1)
        row[0] = self.first[k]
        row[1:k] = self.mid[k - 1 : 0 : -1]
        row[k] = 1.0
        return self.trap_scale * row

    def rectangle_row(self, k: int) -> np.ndarray:
        """Rectangle weight row ``(w_{k,0}, ..., w_{k,k-1})``."""
        return self.rect[k - 1 :: -1].copy() if k > 0 else np.zeros(0)

    def integrate(self, f) -> np.ndarray:
        """Product-trapezoid ``I^alpha f`` at every node; ``f`` has shape ``(N+1,)`` or ``(N+1, n)``."""
        f = np.asarray(f, dtype=float)
        squeeze = f.ndim == 1
        if squeeze:
            f = f[:, None]
        N = f.shape[0] - 1
        if N > self.n_steps:
            raise ShapeError(f"weights cover {self.n_steps} steps, samples need {N}")
        out = np.zeros_like(f)
        if N >= 1:
            out[1:] = self.first[1 : N + 1, None] * f[0] + f[1:]
            if N >= 2:
                for c in range(f.shape[1]):
                    # sum_{j=1}^{k-1} mid[k-j] f_j
                    conv = np.convolve(self.mid[1:N], f[1:N, c])
                    out[2:, c] += conv[: N - 1]
            out[1:] *= self.trap_scale
        return out[:, 0] if squeeze else out


def rl_integral_weights(alpha: float, n_steps: int, h: float) -> RLWeights:
    """Rectangle and trapezoid product weights for the RL integral of order ``alpha``.

    At ``alpha = 1`` these are the classical left-rectangle and trapezoid
    rules.  Both rules integrate constants exactly, so summing ``f == 1``
    gives ``t**alpha / Gamma(alpha+1)``.
    """
    if not (0.0 < alpha <= 1.0):
        raise ValueError(f"alpha must lie in (0, 1], got {alpha}")
    if n_steps < 0:
        raise ValueError("n_steps must be non-negative")
    ks = np.arange(n_steps + 1)
    rect = h**alpha / math.gamma(alpha + 1.0) * _forward_diff(ks[:n_steps], alpha)
    first = np.zeros(n_steps + 1)
    mid = np.zeros(n_steps + 1)
    if n_steps >= 1:
        first[1:] = _first_trap(ks[1:], alpha + 1.0)
        mid[1:] = _second_diff(ks[1:], alpha + 1.0)
    mid[0] = 1.0
    scale = h**alpha / math.gamma(alpha + 2.0)
    return RLWeights(alpha, h, n_steps, rect, first, mid, scale)


# }}}


# {{{ Caputo derivative


def l1_weights(alpha: float, n: int) -> np.ndarray:
    """``b_m = (m+1)**(1-alpha) - m**(1-alpha)`` for ``m = 0..n-1``."""
    return _forward_diff(np.arange(n), 1.0 - alpha)


def caputo_derivative_grid(x, alpha: float, h: float) -> np.ndarray:
    """L1-scheme Caputo derivative of uniformly sampled ``x`` at every node.

    Node 0 has no backward difference; it is given the node-1 value so that
    constants map to zero everywhere.
    """
    if not (0.0 < alpha <= 1.0):
        raise ValueError(f"alpha must lie in (0, 1], got {alpha}")
    x = np.asarray(x, dtype=float)
    squeeze = x.ndim == 1
    if squeeze:
        x = x[:, None]
    if x.shape[0] < 2:
        raise ShapeError("the L1 scheme needs at least two samples")
    N = x.shape[0] - 1
    b = l1_weights(alpha, N)
    dx = np.diff(x, axis=0)
    coef = h ** (-alpha) / math.gamma(2.0 - alpha)
    out = np.empty_like(x)
    for c in range(x.shape[1]):
        out[1:, c] = coef * np.convolve(b, dx[:, c])[:N]
    out[0] = out[1]
    return out[:, 0] if squeeze else out


# }}}


# {{{ memory operators


class MemoryKind(enum.Enum):
    NONE = "none"
    DISCRETE_DELAY = "delay"
    DISTRIBUTED_KERNEL = "kernel"
    FRACTIONAL_INTEGRAL = "fractional_integral"


def _identity_phi(s, u, u_delayed):
    return u


@dataclass(frozen=True)
class MemoryOperatorSpec:
    """One memory term ``I[x](t)`` of the right-hand side.

    ``g(t, s)`` must accept an array of ``s`` and return matching values;
    ``phi_inner(s, u, u_delayed)`` must accept row-stacked states.
    ``g_sup`` and ``phi_lipschitz`` are user-declared bounds used only by
    the stability constant.
    """

    kind: MemoryKind = MemoryKind.NONE
    tau: Optional[float] = None
    beta: float = 1.0
    g: Optional[Callable] = None
    phi_inner: Callable = field(default=_identity_phi)
    g_sup: Optional[float] = None
    phi_lipschitz: float = 1.0

    def __post_init__(self):
        if self.kind is MemoryKind.DISCRETE_DELAY and not (self.tau is not None and self.tau > 0):
            raise ValueError("a discrete delay needs tau > 0")
        if self.kind in (MemoryKind.DISTRIBUTED_KERNEL, MemoryKind.FRACTIONAL_INTEGRAL):
            if not (0.0 < self.beta <= 1.0):
                raise ValueError(f"kernel exponent beta must lie in (0, 1], got {self.beta}")
            if self.tau is not None and not self.tau > 0:
                raise ValueError("kernel delay tau must be positive when given")
        if self.kind is MemoryKind.DISTRIBUTED_KERNEL and self.g is None:
            raise ValueError("a distributed kernel needs a coefficient function g(t, s)")

    @classmethod
    def none(cls) -> "MemoryOperatorSpec":
        return cls()

    @classmethod
    def delay(cls, tau: float) -> "MemoryOperatorSpec":
        return cls(MemoryKind.DISCRETE_DELAY, tau=float(tau))

    @classmethod
    def fractional_integral(cls, beta: float, tau: Optional[float] = None, phi_inner=None):
        return cls(
            MemoryKind.FRACTIONAL_INTEGRAL,
            tau=tau,
            beta=float(beta),
            phi_inner=phi_inner or _identity_phi,
            g_sup=1.0 / math.gamma(beta),
        )

    @classmethod
    def kernel(cls, beta: float, g, phi_inner=None, tau=None, g_sup=None, phi_lipschitz=1.0):
        return cls(
            MemoryKind.DISTRIBUTED_KERNEL,
            tau=tau,
            beta=float(beta),
            g=g,
            phi_inner=phi_inner or _identity_phi,
            g_sup=g_sup,
            phi_lipschitz=phi_lipschitz,
        )

    @property
    def delay_time(self) -> Optional[float]:
        return self.tau


class MemoryEvaluator:
    """Incremental evaluator of a memory operator along a trajectory being built.

    The kernel integral at node ``k`` is split into a part over already
    accepted nodes and the weight on node ``k`` itself, which the implicit
    solve needs to revisit on every inner iteration.
    """

    def __init__(self, spec: MemoryOperatorSpec, grid: UniformGrid, history: HistoryFunction, n: int):
        self.spec = spec
        self.grid = grid
        self.n = n
        self.kind = spec.kind
        self.hist_vals = history.on_grid(grid) if grid.delay_steps > 0 else history(0.0)[None, :]
        self.m = grid.delay_steps if spec.tau is not None else 0
        if spec.tau is not None and not math.isclose(self.m * grid.h, spec.tau, rel_tol=1e-9):
            raise ShapeError(f"delay {spec.tau} is not aligned with grid step {grid.h}")
        if self.kind in (MemoryKind.DISTRIBUTED_KERNEL, MemoryKind.FRACTIONAL_INTEGRAL):
            b = spec.beta
            w = rl_integral_weights(b, grid.n_steps, grid.h)
            # strip 1/Gamma(beta) back off: raw kernel (t-s)^(beta-1)
            self.weights = w
            self.raw_scale = w.trap_scale * math.gamma(b)
            self.phi_cache = np.zeros((grid.n_steps + 1, n))
            self.t = grid.times

    def delayed(self, k: int, states: np.ndarray) -> np.ndarray:
        """``x(t_k - tau)`` with the grid-aligned delay."""
        if self.m == 0:
            return states[k]
        j = k - self.m
        if j >= 0:
            return states[j]
        if j < -self.m:
            raise HistoryUnderflowError(f"node {k} reaches below -tau")
        return self.hist_vals[k]

    def _coef(self, tk: float, s: np.ndarray) -> np.ndarray:
        if self.kind is MemoryKind.FRACTIONAL_INTEGRAL:
            return np.full(s.shape, 1.0 / math.gamma(self.spec.beta))
        return np.broadcast_to(np.asarray(self.spec.g(tk, s), dtype=float), s.shape)

    def record(self, k: int, states: np.ndarray) -> None:
        """Cache ``phi`` at an accepted node."""
        if self.kind in (MemoryKind.DISTRIBUTED_KERNEL, MemoryKind.FRACTIONAL_INTEGRAL):
            val = self.spec.phi_inner(self.t[k : k + 1], states[k : k + 1], self.delayed(k, states)[None, :])
            self.phi_cache[k] = np.asarray(val, dtype=float).reshape(self.n)

    def split(self, k: int, states: np.ndarray):
        """Return ``(past, weight)`` so that ``I[x](t_k) = past + weight * phi_k``.

        For the discrete delay (and no memory) the weight is zero and
        ``past`` is the full value.
        """
        if self.kind is MemoryKind.NONE:
            return np.zeros(self.n), 0.0
        if self.kind is MemoryKind.DISCRETE_DELAY:
            return self.delayed(k, states).copy(), 0.0
        if k == 0:
            return np.zeros(self.n), 0.0
        tk = self.t[k]
        coef = self._coef(tk, self.t[: k + 1])
        w = self.weights
        past = w.first[k] * coef[0] * self.phi_cache[0]
        if k > 1:
            past = past + (w.mid[k - 1 : 0 : -1] * coef[1:k]) @ self.phi_cache[1:k]
        return self.raw_scale * past, self.raw_scale * coef[k]

    def current(self, k: int, x: np.ndarray, states: np.ndarray) -> np.ndarray:
        """``phi`` at node ``k`` for a candidate state ``x``."""
        val = self.spec.phi_inner(self.t[k : k + 1], x[None, :], self.delayed(k, states)[None, :])
        return np.asarray(val, dtype=float).reshape(self.n)


def apply_memory_operator(spec: MemoryOperatorSpec, traj, t_index: int) -> np.ndarray:
    """Evaluate the memory operator on a populated trajectory at node ``t_index``."""
    grid = traj.grid
    if t_index < 0 or t_index > grid.n_steps:
        raise HistoryUnderflowError(f"node {t_index} is outside the trajectory")
    n = traj.states.shape[1]
    ev = MemoryEvaluator(spec, grid, traj.history, n)
    if spec.kind in (MemoryKind.NONE, MemoryKind.DISCRETE_DELAY):
        return ev.split(t_index, traj.states)[0]
    for j in range(t_index):
        ev.record(j, traj.states)
    past, w = ev.split(t_index, traj.states)
    return past + w * ev.current(t_index, traj.states[t_index], traj.states)


# }}}


def memory_series(spec: MemoryOperatorSpec, grid: UniformGrid, history: HistoryFunction, states) -> np.ndarray:
    """Memory operator output at every node of a complete trajectory, shape ``(N+1, n)``."""
    states = np.asarray(states, dtype=float)
    if states.shape[0] != grid.n_steps + 1:
        raise ShapeError(f"expected {grid.n_steps + 1} samples, got {states.shape[0]}")
    n = states.shape[1]
    ev = MemoryEvaluator(spec, grid, history, n)
    out = np.zeros_like(states)
    if spec.kind is MemoryKind.NONE:
        return out
    for k in range(grid.n_steps + 1):
        ev.record(k, states)
        past, w = ev.split(k, states)
        out[k] = past + w * ev.phi_cache[k] if w != 0.0 else past
    return out
