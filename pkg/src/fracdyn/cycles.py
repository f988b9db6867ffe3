"""Periodic orbits and excitability thresholds of the delayed fractional FHN model.

The time-``T`` map sends a history segment on ``[-tau, 0]`` to the solution
segment on ``[T - tau, T]``; a periodic orbit is a fixed point when ``T`` is
a multiple of its period.  Segments are compared on the grid nodes (sup
norm over ``m + 1`` nodes).

Caputo dynamics carry memory of the whole past, so a fractional orbit is at
best asymptotically periodic.  The search therefore discards a transient
of ``T_skip`` time units before iterating the map, and each application of
the map starts a fresh Caputo problem from the segment.
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np
from scipy import stats

from .fhn import FhnParams, annulus, equilibrium, fhn_field, fhn_rhs
from .fraccore import HistoryFunction, MemoryOperatorSpec, ShapeError, UniformGrid, memory_series
from .solver import ProblemSpec, SolverConfig, Trajectory, solve_on_grid


@dataclass(frozen=True)
class HistorySegment:
    """Samples of the state on ``m + 1`` uniform nodes covering ``[-tau, 0]``."""

    samples: np.ndarray
    h: float

    def __post_init__(self):
        s = np.asarray(self.samples, dtype=float)
        if s.ndim == 1:
            s = s[:, None]
        if s.shape[0] < 2:
            raise ShapeError("a history segment needs at least two nodes")
        if not np.all(np.isfinite(s)):
            raise ValueError("history segment samples must be finite")
        object.__setattr__(self, "samples", s)

    @property
    def m(self) -> int:
        return self.samples.shape[0] - 1

    @property
    def tau(self) -> float:
        return self.m * self.h

    def as_history(self) -> HistoryFunction:
        return HistoryFunction.sampled(self.samples, self.tau)

    def distance(self, other: "HistorySegment") -> float:
        if other.samples.shape != self.samples.shape:
            raise ShapeError("segments have different shapes")
        return float(np.max(np.abs(self.samples - other.samples)))

    @classmethod
    def constant(cls, value, tau: float, h: float) -> "HistorySegment":
        m = int(round(tau / h))
        if not math.isclose(m * h, tau, rel_tol=1e-9):
            raise ShapeError(f"tau={tau} is not a multiple of h={h}")
        return cls(np.tile(np.asarray(value, dtype=float), (m + 1, 1)), h)


def _segment_problem(phi: HistorySegment, params: FhnParams, T_map: float, F=None) -> ProblemSpec:
    if not math.isclose(phi.tau, params.tau, rel_tol=1e-9):
        raise ShapeError(f"segment covers {phi.tau}, delay is {params.tau}")
    hist = phi.as_history()
    return ProblemSpec(
        F=F or fhn_field(params),
        x0=hist(0.0),
        alpha=params.alpha,
        T=T_map,
        memory=MemoryOperatorSpec.delay(params.tau),
        history=hist,
        name="fhn-segment",
    )


def _check_multiple(T_map: float, h: float) -> int:
    N = int(round(T_map / h))
    if N < 1 or not math.isclose(N * h, T_map, rel_tol=1e-9, abs_tol=1e-12):
        raise ValueError(f"T_map={T_map} must be a multiple of the segment step {h}")
    return N


def run_from_segment(phi: HistorySegment, params: FhnParams, T: float, cfg: Optional[SolverConfig] = None, F=None) -> Trajectory:
    """Solve the model from history ``phi`` on ``[0, T]`` using the segment's step."""
    N = _check_multiple(T, phi.h)
    prob = _segment_problem(phi, params, T, F)
    cfg = replace(cfg, h=phi.h) if cfg is not None else SolverConfig(h=phi.h)
    grid = UniformGrid(h=phi.h, n_steps=N, delay_steps=phi.m)
    return solve_on_grid(prob, cfg, grid)


def poincare_map(
    phi: HistorySegment,
    params: FhnParams,
    T_map: float,
    cfg: Optional[SolverConfig] = None,
    F: Optional[Callable] = None,
) -> HistorySegment:
    """Time-``T_map`` map: the solution segment on ``[T_map - tau, T_map]``.

    ``T_map`` must exceed ``tau`` and be a multiple of the segment step.
    ``F`` replaces the model field (used to test frozen dynamics).
    """
    if not T_map > phi.tau:
        raise ValueError(f"T_map={T_map} must exceed tau={phi.tau}")
    traj = run_from_segment(phi, params, T_map, cfg, F)
    N = traj.grid.n_steps
    return HistorySegment(traj.states[N - phi.m :].copy(), phi.h)


def upward_crossings(t, v, level: Optional[float] = None) -> np.ndarray:
    """Linearly interpolated times where ``v`` crosses ``level`` (default: its mean) upward."""
    t = np.asarray(t, dtype=float)
    v = np.asarray(v, dtype=float)
    if level is None:
        level = float(np.mean(v))
    s = v - level
    idx = np.nonzero((s[:-1] < 0.0) & (s[1:] >= 0.0))[0]
    frac = s[idx] / (s[idx] - s[idx + 1])
    return t[idx] + frac * (t[idx + 1] - t[idx])


def crossing_period(t, v, level: Optional[float] = None) -> Optional[float]:
    """Mean spacing of upward crossings; ``None`` with fewer than three crossings."""
    c = upward_crossings(t, v, level)
    if c.shape[0] < 3:
        return None
    return float(np.mean(np.diff(c)))


@dataclass(frozen=True)
class CycleConfig:
    h: float = 0.01
    T_skip: float = 200.0
    cycle_tol: float = 1e-4
    amplitude_floor: float = 0.1
    max_iter: int = 50
    refine: float = 3.0
    history: Optional[HistorySegment] = None
    x0: Optional[Tuple[float, float]] = None
    solver: SolverConfig = field(default_factory=lambda: SolverConfig(h=0.01))


@dataclass(frozen=True)
class LimitCycleReport:
    found: bool
    period: Optional[float]
    poincare_residual: float
    amplitude: float
    in_annulus: bool
    transient_discarded: float
    T_map: Optional[float] = None
    h: Optional[float] = None
    iterations: int = 0
    segment: Optional[HistorySegment] = None
    diagnostic: str = ""


def _best_step(period: float, tau: float, m_lo: int, m_hi: int) -> Tuple[int, int, float]:
    """Pick ``m`` in ``[m_lo, m_hi]`` and ``N`` so that ``N tau/m`` is closest to ``period``."""
    m = np.arange(m_lo, m_hi + 1)
    N = np.maximum(np.rint(period * m / tau), 1.0)
    err = np.abs(N * tau / m - period)
    i = int(np.argmin(err))
    return int(m[i]), int(N[i]), float(err[i])


def _initial_segment(params: FhnParams, cfg: CycleConfig, h: float, m: int) -> HistorySegment:
    if cfg.history is not None:
        hs = cfg.history.as_history()
        nodes = h * np.arange(-m, 1)
        return HistorySegment(np.array([hs(t) for t in nodes]), h)
    if cfg.x0 is not None:
        x0 = cfg.x0
    else:
        v0, w0 = equilibrium(params).roots[0]
        x0 = (v0 + 0.1, w0)
    return HistorySegment(np.tile(np.asarray(x0, dtype=float), (m + 1, 1)), h)


def _transient(params: FhnParams, cfg: CycleConfig, m: int):
    h = params.tau / m
    phi = _initial_segment(params, cfg, h, m)
    n_skip = max(phi.m + 1, int(math.ceil(cfg.T_skip / h - 1e-9)))
    traj = run_from_segment(phi, params, n_skip * h, cfg.solver)
    tail = HistorySegment(traj.states[n_skip - m :].copy(), h)
    return traj, tail


def find_cycle(params: FhnParams, cfg: CycleConfig = CycleConfig()) -> LimitCycleReport:
    """Search for a periodic orbit as a fixed point of the time-``T`` map.

    The transient run fixes the period estimate from zero crossings.  The
    step is then re-chosen as ``tau/m`` so that a whole number of steps
    matches the period as closely as possible, the transient is re-run on
    that grid, and the map is iterated from the final segment.
    """
    tau = params.tau
    m0 = max(1, int(math.ceil(tau / cfg.h - 1e-9)))
    traj, seg = _transient(params, cfg, m0)
    t, v = traj.times, traj.states[:, 0]
    window = t >= t[-1] / 2.0
    period = crossing_period(t[window], v[window])
    amp = float(np.ptp(v[window]))
    if period is None or amp <= cfg.amplitude_floor:
        return LimitCycleReport(
            False, period, math.inf, amp, False, cfg.T_skip, h=traj.grid.h,
            diagnostic="no sustained oscillation after the transient (amplitude below floor or too few crossings)",
        )

    m_hi = max(m0, int(math.ceil(cfg.refine * m0)))
    m, N, _ = _best_step(period, tau, m0, m_hi)
    # the discrete period depends slightly on the step; re-measure on the new grid
    for _ in range(3):
        traj, seg = _transient(params, cfg, m)
        t, v = traj.times, traj.states[:, 0]
        window = t >= t[-1] / 2.0
        p_new = crossing_period(t[window], v[window])
        if p_new is None:
            break
        period = p_new
        m_new, _, _ = _best_step(period, tau, m0, m_hi)
        if m_new == m:
            break
        m = m_new
    if seg.m != m:
        traj, seg = _transient(params, cfg, m)
    N = max(1, int(round(period * m / tau)))
    h = tau / m
    T_map = N * h
    while T_map <= tau:
        T_map += N * h
    phi = seg
    residual = math.inf
    it = 0
    for it in range(1, cfg.max_iter + 1):
        nxt = poincare_map(phi, params, T_map, cfg.solver)
        residual = nxt.distance(phi)
        phi = nxt
        if residual <= cfg.cycle_tol:
            break
    orbit = run_from_segment(phi, params, T_map, cfg.solver)
    amp = float(np.ptp(orbit.states[:, 0]))
    ann = annulus(params)
    inside = bool(np.all(ann.contains(orbit.states[:, 0], orbit.states[:, 1], params.epsilon)))
    found = residual <= cfg.cycle_tol and amp > cfg.amplitude_floor
    diag = "" if found else f"map residual {residual:.3e} above tolerance after {it} iterations"
    return LimitCycleReport(found, period, residual, amp, inside, cfg.T_skip, T_map, h, it, phi, diag)


def periodicity_defect(report: LimitCycleReport, params: FhnParams, cfg: Optional[SolverConfig] = None) -> float:
    """``sup |x(t + T) - x(t)|`` over one map period after re-simulating from the fixed point."""
    if report.segment is None or report.T_map is None:
        raise ValueError("report carries no fixed-point segment")
    seg = report.segment
    traj = run_from_segment(seg, params, 2.0 * report.T_map, cfg)
    N = _check_multiple(report.T_map, seg.h)
    return float(np.max(np.abs(traj.states[N:] - traj.states[: N + 1])))


def holder_constant(t, x, alpha: float, window: Optional[int] = None) -> float:
    """Largest ``|x(t1) - x(t2)| / |t1 - t2|^alpha`` over node pairs at most ``window`` steps apart."""
    t = np.asarray(t, dtype=float)
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    n = t.shape[0]
    if n < 2:
        raise ShapeError("need at least two samples")
    W = n - 1 if window is None else min(window, n - 1)
    best = 0.0
    for lag in range(1, W + 1):
        dx = np.max(np.abs(x[lag:] - x[:-lag]), axis=1)
        dt = np.abs(t[lag:] - t[:-lag]) ** alpha
        best = max(best, float(np.max(dx / dt)))
    return best


def holder_bound(traj: Trajectory, problem: ProblemSpec) -> float:
    """Sample-based ``L / Gamma(alpha+1)`` with ``L = 2 sup |F|`` along the trajectory."""
    mem = memory_series(problem.memory, traj.grid, traj.history, traj.states)
    sup = 0.0
    for k, tk in enumerate(traj.times):
        sup = max(sup, float(np.max(np.abs(problem.F(tk, traj.states[k], traj.derivs[k], mem[k])))))
    return 2.0 * sup / math.gamma(problem.alpha + 1.0)


# {{{ threshold scan


@dataclass(frozen=True)
class ScanConfig:
    spike_margin: float = 1.0
    T_obs: float = 20.0
    h: float = 0.01
    I_max: float = 10.0
    I_start: float = 0.01
    bisection_steps: int = 40
    implicit_tol: float = 1e-10
    # relative slack in the monotonicity flag (thresholds move slightly with the delay-aligned step)
    monotone_rtol: float = 1e-6


@dataclass(frozen=True)
class ThresholdPoint:
    tau: float
    I_th: Optional[float]
    bracket_width: Optional[float]


@dataclass(frozen=True)
class ScanResult:
    points: List[ThresholdPoint]
    exponent: Optional[float]
    stderr: Optional[float]
    r_squared: Optional[float]
    monotone: bool
    alpha: float

    @property
    def expected_exponent(self) -> float:
        return 1.0 - self.alpha

    @property
    def deviation(self) -> Optional[float]:
        return None if self.exponent is None else self.exponent - self.expected_exponent


def spikes(params: FhnParams, I: float, cfg: ScanConfig) -> bool:
    """Does a current step ``I`` from rest push ``v`` above ``v_rest + spike_margin`` within ``T_obs``?"""
    v0, w0 = equilibrium(params).roots[0]
    stepped = replace(params, I_ext=I)
    prob = fhn_rhs(stepped, T=cfg.T_obs, x0=(v0, w0))
    grid = UniformGrid.aligned(cfg.T_obs, cfg.h, params.tau)
    traj = solve_on_grid(prob, SolverConfig(h=grid.h, implicit_tol=cfg.implicit_tol), grid)
    return bool(np.max(traj.states[:, 0]) > v0 + cfg.spike_margin)


def bisect_threshold(test: Callable[[float], bool], cfg: ScanConfig) -> Tuple[Optional[float], Optional[float]]:
    """Smallest current that triggers ``test``, as ``(upper end, bracket width)``.

    The bracket ``[0, hi]`` is grown geometrically from ``I_start`` until the
    test fires; ``(None, None)`` if it never fires up to ``I_max``.
    """
    lo, hi = 0.0, cfg.I_start
    while not test(hi):
        lo = hi
        if hi >= cfg.I_max:
            return None, None
        hi = min(2.0 * hi, cfg.I_max)
    for _ in range(cfg.bisection_steps):
        mid = 0.5 * (lo + hi)
        if test(mid):
            hi = mid
        else:
            lo = mid
    return hi, hi - lo


def _scan_one(args):
    base, tau, cfg = args
    p = replace(base, tau=tau)
    I_th, width = bisect_threshold(lambda I: spikes(p, base.I_ext + I, cfg), cfg)
    return ThresholdPoint(tau, I_th, width)


def fit_power_law(tau, I_th):
    """Least-squares slope of ``log I_th`` against ``log tau``: ``(p, stderr, R^2)``."""
    res = stats.linregress(np.log(np.asarray(tau, dtype=float)), np.log(np.asarray(I_th, dtype=float)))
    return float(res.slope), float(res.stderr), float(res.rvalue**2)


def _workers(n_tasks: int) -> int:
    env = os.environ.get("FRACDYN_THREADS")
    cap = int(env) if env else (os.cpu_count() or 1)
    return max(1, min(cap, n_tasks))


def threshold_scan(
    base: FhnParams,
    tau_list: Sequence[float],
    cfg: ScanConfig = ScanConfig(),
    spike_test: Optional[Callable[[float, float], bool]] = None,
) -> ScanResult:
    """Excitation threshold for each delay, and a power-law fit ``I_th ~ tau^p``.

    ``I_th`` is the current added to ``base.I_ext``.  ``spike_test(tau, I)``
    replaces the model simulation (for checking the fitting pipeline).
    ``monotone`` is true when ``I_th`` never increases along ``tau_list``
    (which is ordered toward small delays) beyond ``cfg.monotone_rtol``.
    Probes run in up to ``FRACDYN_THREADS`` processes; results keep the
    input order.
    """
    taus = [float(t) for t in tau_list]
    if spike_test is not None:
        pts = []
        for tau in taus:
            I_th, width = bisect_threshold(lambda I, tau=tau: spike_test(tau, I), cfg)
            pts.append(ThresholdPoint(tau, I_th, width))
    else:
        jobs = [(base, tau, cfg) for tau in taus]
        n = _workers(len(jobs))
        if n == 1:
            pts = [_scan_one(j) for j in jobs]
        else:
            with ProcessPoolExecutor(max_workers=n) as ex:
                pts = list(ex.map(_scan_one, jobs))
    good = [p for p in pts if p.I_th is not None and p.I_th > 0.0]
    exponent = stderr = r2 = None
    if len(good) >= 3:
        exponent, stderr, r2 = fit_power_law([p.tau for p in good], [p.I_th for p in good])
    vals = [p.I_th for p in pts]
    tol = cfg.monotone_rtol
    monotone = all(v is not None for v in vals) and all(b <= a * (1.0 + tol) for a, b in zip(vals, vals[1:]))
    return ScanResult(pts, exponent, stderr, r2, monotone, base.alpha)


# }}}
