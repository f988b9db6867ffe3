"""Delayed fractional FitzHugh-Nagumo model and its analysis helpers.

State ``x = (v, w)``::

    D^alpha v = v - v^3/3 - w + I_ext + lambda v(t - tau)
    D^alpha w = epsilon (v + a - b w)
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import List, Optional, Tuple

import numpy as np

from .fraccore import HistoryFunction, MemoryOperatorSpec
from .gronwall import GronwallInput, compute_bound_constant
from .mlf import mittag_leffler
from .solver import ProblemSpec, Trajectory


@dataclass(frozen=True)
class FhnParams:
    alpha: float = 0.8
    epsilon: float = 0.08
    a: float = 0.7
    b: float = 0.8
    lam: float = 0.0
    tau: float = 1.0
    I_ext: float = 0.5

    def __post_init__(self):
        if not (0.0 < self.alpha <= 1.0):
            raise ValueError(f"alpha must lie in (0,1], got {self.alpha}")
        if not self.epsilon > 0.0:
            raise ValueError(f"epsilon must be positive, got {self.epsilon}")
        if not self.b > 0.0:
            raise ValueError(f"b must be positive, got {self.b}")
        if not self.tau > 0.0:
            raise ValueError(f"tau must be positive, got {self.tau}")
        for name in ("a", "lam", "I_ext"):
            if not math.isfinite(getattr(self, name)):
                raise ValueError(f"{name} must be finite")


def fhn_field(params: FhnParams):
    """Right-hand side ``F(t, x, d, m)``; ``m`` is the delayed state, only ``m[0]`` is used."""
    eps, a, b, lam, I = params.epsilon, params.a, params.b, params.lam, params.I_ext

    def F(t, x, d, m):
        v = x[0]
        w = x[1]
        return np.array([v - v * v * v / 3.0 - w + I + lam * m[0], eps * (v + a - b * w)])

    return F


def fhn_rhs(params: FhnParams, T: float = 100.0, history: Optional[HistoryFunction] = None, x0=None) -> ProblemSpec:
    """Problem for the model on ``[0, T]``.

    Without an explicit history the constant history ``x0`` is used, and
    ``x0`` itself defaults to the (first) equilibrium shifted by 0.1 in ``v``.
    """
    if history is None:
        if x0 is None:
            v0, w0 = equilibrium(params).roots[0]
            x0 = (v0 + 0.1, w0)
        history = HistoryFunction.constant(x0)
    x0 = history(0.0)
    return ProblemSpec(
        F=fhn_field(params),
        x0=x0,
        alpha=params.alpha,
        T=T,
        memory=MemoryOperatorSpec.delay(params.tau),
        history=history,
        name="fhn",
    )


@dataclass(frozen=True)
class Equilibria:
    roots: List[Tuple[float, float]]
    residuals: List[float]

    @property
    def unique(self) -> bool:
        return len(self.roots) == 1


def _eq_residual(v: float, p: FhnParams) -> float:
    return v - v**3 / 3.0 - (v + p.a) / p.b + p.I_ext + p.lam * v


def equilibrium(params: FhnParams) -> Equilibria:
    """All real equilibria, ordered by ``v``.

    The cubic ``v^3 - 3 c v - 3 k = 0`` with ``c = 1 + lambda - 1/b`` and
    ``k = I_ext - a/b`` is solved through its companion matrix and each real
    root is polished by Newton's method.
    """
    p = params
    c = 1.0 + p.lam - 1.0 / p.b
    k = p.I_ext - p.a / p.b
    raw = np.roots([1.0, 0.0, -3.0 * c, -3.0 * k])
    scale = max(1.0, float(np.max(np.abs(raw))))
    cand = sorted(float(r.real) for r in raw if abs(r.imag) <= 1e-6 * scale)
    if not cand:
        cand = [float(raw[np.argmin(np.abs(raw.imag))].real)]
    roots: List[float] = []
    for v in cand:
        for _ in range(50):
            g = _eq_residual(v, p)
            dg = 1.0 - v * v - 1.0 / p.b + p.lam
            if dg == 0.0:
                break
            step = g / dg
            v -= step
            if abs(step) <= 1e-16 * max(1.0, abs(v)):
                break
        if not any(abs(v - r) <= 1e-7 * max(1.0, abs(v)) for r in roots):
            roots.append(v)
    roots.sort()
    pairs = [(v, (v + p.a) / p.b) for v in roots]
    return Equilibria(pairs, [abs(_eq_residual(v, p)) for v in roots])


@dataclass(frozen=True)
class TheoremConditions:
    lambda0: float
    epsilon0: float
    lambda_ok: bool
    epsilon_ok: bool
    subthreshold_ok: bool
    warnings: Tuple[str, ...] = ()

    @property
    def all_satisfied(self) -> bool:
        return self.lambda_ok and self.epsilon_ok and self.subthreshold_ok


def lambda_threshold(alpha: float, tau: float) -> float:
    """``Gamma(alpha+1) / tau^alpha * min(1/2, (1-alpha)/alpha)``."""
    return math.gamma(alpha + 1.0) / tau**alpha * min(0.5, (1.0 - alpha) / alpha)


def epsilon_threshold(alpha: float, b: float, lam: float, tau: float) -> float:
    """``b Gamma(alpha+1)/2 * (1 - |lambda| tau^alpha / Gamma(alpha+1))``."""
    g = math.gamma(alpha + 1.0)
    return b * g / 2.0 * (1.0 - abs(lam) * tau**alpha / g)


def theorem_conditions(params: FhnParams) -> TheoremConditions:
    """Delay-coupling, slow-recovery and subthreshold conditions for oscillation."""
    p = params
    lam0 = lambda_threshold(p.alpha, p.tau)
    eps0 = epsilon_threshold(p.alpha, p.b, p.lam, p.tau)
    notes = []
    if lam0 == 0.0:
        notes.append("alpha = 1 gives a zero delay-coupling threshold; no lambda is admissible")
    return TheoremConditions(
        lambda0=lam0,
        epsilon0=eps0,
        lambda_ok=abs(p.lam) < lam0,
        epsilon_ok=0.0 < p.epsilon < eps0,
        subthreshold_ok=p.a < 1.0 + p.b**2 / (4.0 * p.epsilon),
        warnings=tuple(notes),
    )


@dataclass(frozen=True)
class AnnulusSpec:
    R1: float
    R2: float
    delta: float
    C1: float
    C2: float
    M: float
    degenerate: bool

    def contains(self, v, w, epsilon: float, slack: float = 0.1) -> np.ndarray:
        """Membership of ``sqrt(v^2 + w^2/epsilon)`` in ``[R1 (1-slack), R2 (1+slack)]``."""
        r = np.sqrt(np.asarray(v) ** 2 + np.asarray(w) ** 2 / epsilon)
        return (r >= self.R1 * (1.0 - slack)) & (r <= self.R2 * (1.0 + slack))


def lyapunov_constants(params: FhnParams) -> Tuple[float, float, float]:
    """``(delta, C1, C2)`` of the Lyapunov inequality for ``V = v^2/2 + w^2/(2 epsilon)``."""
    p = params
    delta = min(2.0 / 3.0, p.b / 2.0)
    C1 = abs(p.lam) / 2.0
    C2 = p.I_ext**2 / 2.0 + p.epsilon * p.a**2 / 2.0
    return delta, C1, C2


def lyapunov_amplification(params: FhnParams, horizon: Optional[float] = None) -> float:
    """Gronwall constant for ``D^alpha V <= C1 V(t - tau) + C2`` on ``[0, horizon]``.

    The ``-delta V`` term is dropped (it only helps), leaving a purely
    delayed hypothesis with ``|B| = C1 / Gamma(alpha)``.  The horizon
    defaults to one delay.
    """
    p = params
    _, C1, _ = lyapunov_constants(p)
    T = p.tau if horizon is None else horizon
    inp = GronwallInput(p.alpha, p.alpha, 0.0, C1 / math.gamma(p.alpha), T, tau=p.tau)
    return compute_bound_constant(inp).M


def annulus(params: FhnParams, horizon: Optional[float] = None) -> AnnulusSpec:
    """Radii ``R1 = sqrt(C2/delta)`` and ``R2 = sqrt(2 C2/delta + M C2/delta)``."""
    delta, C1, C2 = lyapunov_constants(params)
    M = lyapunov_amplification(params, horizon)
    R1 = math.sqrt(C2 / delta)
    R2 = math.sqrt(2.0 * C2 / delta + M * C2 / delta)
    return AnnulusSpec(R1, R2, delta, C1, C2, M, degenerate=C2 == 0.0)


@dataclass(frozen=True)
class LyapunovReport:
    V: np.ndarray
    envelope: np.ndarray
    first_violation: Optional[int]
    level: float
    entry_index: Optional[int]

    @property
    def ultimately_bounded(self) -> bool:
        return self.entry_index is not None


def lyapunov_values(states, epsilon: float) -> np.ndarray:
    states = np.asarray(states, dtype=float)
    return 0.5 * states[:, 0] ** 2 + 0.5 * states[:, 1] ** 2 / epsilon


def _envelope(t, alpha, scale, rate, floor, coarse: int = 257):
    """``scale * E_alpha(-rate t^alpha) + floor`` at the requested nodes.

    The Mittag-Leffler factor is decreasing in ``t``, so it is evaluated on a
    coarse grid and only refined where a caller needs a sharp value.
    """
    t = np.asarray(t, dtype=float)
    knots = np.linspace(t[0], t[-1], min(coarse, t.shape[0]))
    ek = mittag_leffler(-rate * knots**alpha, alpha)
    idx = np.clip(np.searchsorted(knots, t, side="right") - 1, 0, knots.shape[0] - 1)
    upper = scale * ek[idx] + floor
    nxt = np.minimum(idx + 1, knots.shape[0] - 1)
    lower = scale * ek[nxt] + floor
    return lower, upper


def lyapunov_series(traj: Trajectory, params: FhnParams, M: Optional[float] = None, level_slack: float = 0.1):
    """``V`` along a trajectory and a check against the decay envelope.

    Envelope: ``M (V(0) + C2/delta) E_alpha(-(delta/2) t^alpha) + 2 C2/delta``.
    ``entry_index`` is the first node after which ``V`` stays at or below
    ``(1 + level_slack) 2 C2/delta`` (``None`` if it never settles).
    """
    p = params
    delta, _, C2 = lyapunov_constants(p)
    if M is None:
        M = lyapunov_amplification(p)
    V = lyapunov_values(traj.states, p.epsilon)
    t = traj.times
    scale = M * (V[0] + C2 / delta)
    floor = 2.0 * C2 / delta
    rate = delta / 2.0
    lower, upper = _envelope(t, p.alpha, scale, rate, floor)
    env = upper.copy()
    # nodes whose V falls between the bracketing knots get an exact value
    unsure = np.nonzero((V > lower) & (V <= upper))[0]
    if unsure.size:
        env[unsure] = scale * mittag_leffler(-rate * t[unsure] ** p.alpha, p.alpha) + floor
    viol = np.nonzero(V > env)[0]
    first = int(viol[0]) if viol.size else None
    level = (1.0 + level_slack) * floor
    above = np.nonzero(V > level)[0]
    if above.size == 0:
        entry = 0
    elif above[-1] == V.shape[0] - 1:
        entry = None
    else:
        entry = int(above[-1] + 1)
    return LyapunovReport(V, env, first, level, entry)


@dataclass(frozen=True)
class CharacteristicRoot:
    s: complex
    residual: float
    branch: str = "principal"


@dataclass(frozen=True)
class RootSearch:
    roots: List[CharacteristicRoot]
    c: float
    v0: float
    diagnostic: str = ""

    @property
    def rightmost(self) -> Optional[CharacteristicRoot]:
        return max(self.roots, key=lambda r: r.s.real) if self.roots else None

    @property
    def unstable(self) -> bool:
        return bool(self.roots) and self.rightmost.s.real > 0.0


def characteristic_residual(s, alpha: float, c: float, lam: float, tau: float):
    s = np.asarray(s, dtype=complex)
    return np.abs(s**alpha - c - lam * np.exp(-s * tau))


def _newton_s(s, alpha, c, lam, tau, max_iter):
    """Newton's method on ``s^alpha - c - lambda exp(-s tau)``."""
    active = np.ones(s.shape, dtype=bool)
    for _ in range(max_iter):
        sa = s[active]
        f = sa**alpha - c - lam * np.exp(-sa * tau)
        df = alpha * sa ** (alpha - 1.0) + lam * tau * np.exp(-sa * tau)
        step = f / df
        step[~np.isfinite(step)] = 0.0
        s[active] = sa - step
        done = np.abs(step) <= 1e-14 * np.maximum(1.0, np.abs(sa))
        idx = np.nonzero(active)[0]
        active[idx[done]] = False
        if not active.any():
            break
    return s


def _newton_u(s, alpha, c, lam, tau, max_iter):
    """Newton's method in ``u = s^alpha`` on ``u - c - lambda exp(-u^(1/alpha) tau)``.

    For small ``alpha`` the map ``s -> s^alpha`` is nearly flat and Newton in
    ``s`` stalls; in ``u`` the undelayed equation is linear.
    """
    u = s**alpha
    active = np.ones(u.shape, dtype=bool)
    for _ in range(max_iter):
        ua = u[active]
        sa = ua ** (1.0 / alpha)
        e = lam * np.exp(-sa * tau)
        g = ua - c - e
        dg = 1.0 + e * tau * sa / (alpha * ua)
        step = g / dg
        step[~np.isfinite(step)] = 0.0
        u[active] = ua - step
        done = np.abs(step) <= 1e-14 * np.maximum(1.0, np.abs(ua))
        idx = np.nonzero(active)[0]
        active[idx[done]] = False
        if not active.any():
            break
    return u ** (1.0 / alpha)


def characteristic_roots(
    params: FhnParams,
    box: Tuple[float, float, float, float] = (-5.0, 5.0, -50.0, 50.0),
    seeds: Tuple[int, int] = (20, 40),
    v0: Optional[float] = None,
    tol: float = 1e-8,
    max_iter: int = 100,
) -> RootSearch:
    """Roots of ``s^alpha = 1 - v0^2 - 1/b + lambda exp(-s tau)`` in a box.

    Newton's method runs from a uniform seed grid, once in ``s`` and once in
    ``u = s^alpha`` (principal branch in both); converged roots inside the
    box are merged when closer than 1e-6 and kept only if the residual is at
    most ``tol``.
    """
    p = params
    if v0 is None:
        eq = equilibrium(p)
        if not eq.unique:
            raise ValueError("several equilibria exist; pass v0 explicitly")
        v0 = eq.roots[0][0]
    c = 1.0 - v0 * v0 - 1.0 / p.b
    alpha, lam, tau = p.alpha, p.lam, p.tau
    re0, re1, im0, im1 = box
    nx, ny = seeds
    xs = np.linspace(re0, re1, nx)
    ys = np.linspace(im0, im1, ny)
    s0 = (xs[None, :] + 1j * ys[:, None]).ravel()
    # keep seeds off the branch point
    s0 = np.where(np.abs(s0) < 1e-3, s0 + 1e-3 * (1 + 1j), s0)
    with np.errstate(all="ignore"):
        s = np.concatenate([
            _newton_s(s0.copy(), alpha, c, lam, tau, max_iter),
            _newton_u(s0.copy(), alpha, c, lam, tau, max_iter),
        ])
        res = characteristic_residual(s, alpha, c, lam, tau)
    keep = np.isfinite(res) & (res <= tol)
    keep &= (s.real >= re0) & (s.real <= re1) & (s.imag >= im0) & (s.imag <= im1)
    keep &= np.abs(s) > 1e-12
    found: List[CharacteristicRoot] = []
    for z, r in sorted(zip(s[keep], res[keep]), key=lambda zr: (-zr[0].real, zr[0].imag)):
        if all(abs(z - q.s) >= 1e-6 for q in found):
            found.append(CharacteristicRoot(complex(z), float(r)))
    diag = "" if found else "no seed converged to a root inside the box"
    return RootSearch(found, c, v0, diag)
