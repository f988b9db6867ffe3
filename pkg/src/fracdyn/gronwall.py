"""Explicit constants for the delayed fractional Gronwall-Wendroff inequality.

Hypothesis (scalar form, ``u >= 0``)::

    u(t) <= f(t) + |A| int_0^t (t-s)^(alpha-1) u(s) ds
                 + |B| int_0^t (t-s)^(beta-1)  u(s - tau) ds,   u = phi on [-tau, 0]

Conclusion: ``u(t) <= M (|phi| + sup_{s<=t} f(s))``.

``M`` is built by cutting ``[0, T]`` into windows of length ``h`` short
enough that the local kernel mass ``q = |A| h^alpha/alpha + |B| h^beta/beta``
is at most 1/2.  With ``R_j`` the running maximum of ``u`` (and ``|phi|``)
through window ``j``, normalized by ``|phi| + sup f``, window ``j`` gives::

    R_j <= max(R_{j-1}, (1 + sum_{i<j} K_ij R_i + delayed terms) / (1 - q_j)),   R_0 = 1

where ``K_ij`` is the kernel mass of window ``i`` seen from the start of
window ``j`` (the kernel only decreases as ``t`` moves right).  The delayed
term on window ``i`` is bounded by ``R`` a whole number of windows earlier,
so when ``tau >= h`` the current window's delayed mass is known data rather
than part of the contraction.  ``M = R_n``.  This is conservative; no
sharpness is claimed.

For uniform windows the recursion without the outer ``max`` already yields a
non-decreasing sequence, so it is a lower-triangular Toeplitz system and is
solved blockwise (only the shorter last window needs the ``max``).

The window length is taken from the fixed family ``2**k`` and the smallest
resulting ``M`` is reported, which keeps ``M`` non-decreasing in ``|A|``,
``|B|`` and ``T``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional, Union

import numpy as np
from scipy import linalg, signal

from .fraccore import ShapeError, rl_integral_weights

Q_MAX = 0.5
MAX_WINDOWS = 16384
_DYADIC_EXPONENTS = range(-12, 41)

PASS = "PASS"
FAIL = "FAIL"
HYPOTHESIS_NOT_SATISFIED = "HYPOTHESIS_NOT_SATISFIED"


@dataclass(frozen=True)
class GronwallInput:
    alpha: float
    beta: float
    normA: float
    normB: float
    T: float
    phi_norm: float = 0.0
    f_sup: float = 1.0
    tau: Optional[float] = None

    def __post_init__(self):
        for name in ("alpha", "beta"):
            v = getattr(self, name)
            if not (0.0 < v <= 1.0):
                raise ValueError(f"{name} must lie in (0, 1], got {v}")
        for name in ("normA", "normB", "phi_norm", "f_sup"):
            v = getattr(self, name)
            if not (math.isfinite(v) and v >= 0.0):
                raise ValueError(f"{name} must be finite and non-negative, got {v}")
        if not (math.isfinite(self.T) and self.T > 0.0):
            raise ValueError(f"T must be finite and positive, got {self.T}")

    def kernel_mass(self, length) -> np.ndarray:
        """``|A| l^alpha/alpha + |B| l^beta/beta``."""
        length = np.asarray(length, dtype=float)
        return self.normA * length**self.alpha / self.alpha + self.normB * length**self.beta / self.beta


@dataclass(frozen=True)
class GronwallCertificate:
    M: float
    h_star: float
    n_intervals: int
    q: float
    phi_norm: float
    f_sup: float

    @property
    def bound(self) -> float:
        return self.M * (self.phi_norm + self.f_sup)

    def bound_at(self, f_running_sup) -> np.ndarray:
        return self.M * (self.phi_norm + np.asarray(f_running_sup, dtype=float))


_BLOCK = 512


def _toeplitz_recursion(base: np.ndarray, c: np.ndarray) -> np.ndarray:
    """Solve ``V_j = base_j + sum_{p=1}^{j-1} c[p] V_{j-p}`` for ``j = 1..N``.

    ``base[j-1]`` holds ``base_j``; ``c[0]`` is ignored.  Blocks of rows are
    solved with a unit lower-triangular system; the pull from earlier blocks
    is one FFT convolution per block.
    """
    N = base.shape[0]
    c = c.copy()
    c[0] = 0.0
    V = np.empty(N)
    nb = min(_BLOCK, N)
    L = np.eye(nb) - linalg.toeplitz(c[:nb], np.zeros(nb))
    for s in range(0, N, nb):
        e = min(s + nb, N)
        rhs = base[s:e].copy()
        if s > 0:
            conv = signal.fftconvolve(V[:s], c[: e])
            rhs += conv[s:e]
        m = e - s
        V[s:e] = linalg.solve_triangular(L[:m, :m], rhs, lower=True, unit_diagonal=True, check_finite=False)
        if not np.all(np.isfinite(V[s:e])):
            V[s:] = np.inf
            break
    return V


def _amplification(inp: GronwallInput, h: float) -> Optional[tuple]:
    n = max(1, math.ceil(inp.T / h - 1e-12))
    if n > MAX_WINDOWS:
        return None
    last = inp.T - (n - 1) * h
    q_full = float(inp.kernel_mass(h))
    q_last = float(inp.kernel_mass(last))
    if max(q_full if n > 1 else 0.0, q_last) > Q_MAX:
        return None

    def mass_a(x):
        return inp.normA * np.asarray(x, dtype=float) ** inp.alpha / inp.alpha

    def mass_b(x):
        return inp.normB * np.asarray(x, dtype=float) ** inp.beta / inp.beta

    # whole windows spanned by the delay: the delayed argument on window j
    # lies at or before the end of window j - shift (index <= 0 is history)
    shift = 0 if inp.tau is None else min(n, int(math.floor(inp.tau / h + 1e-12)))
    # the window p steps back spans lags [(p-1)h, p h] from the current window start
    grid = h * np.arange(n + 1)
    ka = np.diff(mass_a(grid), prepend=0.0)
    kb = np.diff(mass_b(grid), prepend=0.0)
    ka[0] = 0.0
    kb[0] = 0.0

    def row_parts(qa, qb):
        d = 1.0 - qa - (qb if shift == 0 else 0.0)
        c = ka.copy()
        if shift == 0:
            c += kb
        else:
            # current-window delayed mass sits at lag ``shift``
            c[shift] += qb
            c[shift + 1 :] += kb[1 : n + 1 - shift]
        return d, c

    cum_b = np.cumsum(kb)

    def history_pull(j, qb):
        # delayed contributions whose argument is still in [-tau, 0], where R = 1;
        # these are the lags p in [max(j - shift, 0), j - 1]
        j = np.asarray(j)
        if shift == 0:
            return np.zeros(j.shape)
        p_lo = np.maximum(j - shift, 1)
        return np.where(j <= shift, qb, 0.0) + cum_b[j - 1] - cum_b[p_lo - 1]

    qa_full = float(mass_a(h))
    qb_full = float(mass_b(h))
    R = np.ones(n + 1)
    if n > 1:
        d, c = row_parts(qa_full, qb_full)
        hist = history_pull(np.arange(1, n), qb_full)
        R[1:n] = _toeplitz_recursion((1.0 + hist) / d, c[:n] / d)
        if not math.isfinite(R[n - 1]):
            return None
    qa_last = float(mass_a(last))
    qb_last = float(mass_b(last))
    d, c = row_parts(qa_last, qb_last)
    carried = float(np.dot(c[1:n], R[n - 1 : 0 : -1])) if n > 1 else 0.0
    R[n] = max(R[n - 1], (1.0 + float(history_pull(n, qb_last)) + carried) / d)
    w = float(R[n])
    if not math.isfinite(w):
        return None
    return w, n, max(q_full if n > 1 else q_last, q_last)


def compute_bound_constant(inp: GronwallInput) -> GronwallCertificate:
    """Partition-based constant ``M`` with per-window kernel mass ``q <= 1/2``."""
    if inp.normA == 0.0 and inp.normB == 0.0:
        return GronwallCertificate(1.0, inp.T, 1, 0.0, inp.phi_norm, inp.f_sup)
    best = None
    for k in _DYADIC_EXPONENTS:
        h = 2.0 ** (-k)
        with np.errstate(over="ignore", invalid="ignore"):
            res = _amplification(inp, h)
        if res is None:
            continue
        w, n, q = res
        if best is None or w < best[0]:
            best = (w, min(h, inp.T), n, q)
    if best is None:
        raise ValueError(
            "no admissible partition: kernel norms too large for the window budget "
            "or the bound exceeds double precision"
        )
    w, h, n, q = best
    return GronwallCertificate(w, h, n, q, inp.phi_norm, inp.f_sup)


@dataclass(frozen=True)
class BoundVerdict:
    status: str
    margin: float
    certificate: GronwallCertificate
    bound: np.ndarray
    hypothesis_gap: float

    @property
    def passed(self) -> bool:
        return self.status == PASS


def _node_norm(a) -> np.ndarray:
    a = np.asarray(a, dtype=float)
    return np.abs(a) if a.ndim == 1 else np.max(np.abs(a), axis=1)


def kernel_integral(values, order: float, h: float) -> np.ndarray:
    """``int_0^{t_k} (t_k - s)^(order-1) v(s) ds`` by product trapezoid, at every node."""
    v = np.asarray(values, dtype=float)
    w = rl_integral_weights(order, v.shape[0] - 1, h)
    return math.gamma(order) * w.integrate(v)


def hypothesis_rhs(inp: GronwallInput, t, u, f, u_history: Union[None, float, Callable] = None) -> np.ndarray:
    """Right-hand side of the hypothesis evaluated on samples (scalarized by the max norm)."""
    t = np.asarray(t, dtype=float)
    un = _node_norm(u)
    fn = _node_norm(f)
    if un.shape != t.shape or fn.shape != t.shape:
        raise ShapeError("t, u and f must share the sample grid")
    h = t[1] - t[0]
    rhs = fn + inp.normA * kernel_integral(un, inp.alpha, h)
    if inp.normB > 0.0:
        if inp.tau is None:
            ud = un
        else:
            m = int(round(inp.tau / h))
            if not math.isclose(m * h, inp.tau, rel_tol=1e-9, abs_tol=1e-12):
                raise ShapeError(f"tau={inp.tau} is not a multiple of the sample step {h}")
            ud = un.copy()
            if 0 < m < len(un):
                ud[m:] = un[: len(un) - m]
            for k in range(min(m, len(un))):
                s = t[k] - inp.tau
                if callable(u_history):
                    ud[k] = float(np.max(np.abs(u_history(s))))
                elif u_history is not None:
                    ud[k] = float(u_history)
                else:
                    ud[k] = inp.phi_norm
        rhs = rhs + inp.normB * kernel_integral(ud, inp.beta, h)
    return rhs


def certify_bound(
    inp: GronwallInput,
    t,
    u,
    f,
    u_history: Union[None, float, Callable] = None,
    assume_hypothesis: bool = False,
    slack: float = 1e-6,
) -> BoundVerdict:
    """Check ``u(t) <= M (|phi| + sup_{s<=t} f)`` at every sample.

    The hypothesis inequality is verified first with ``slack`` (relative to
    ``1 + rhs``); if it fails the status is ``HYPOTHESIS_NOT_SATISFIED``.
    ``assume_hypothesis`` skips that check.
    """
    un = _node_norm(u)
    fn = _node_norm(f)
    cert = compute_bound_constant(inp)
    gap = 0.0
    if not assume_hypothesis:
        rhs = hypothesis_rhs(inp, t, u, f, u_history)
        gap = float(np.max(un - rhs - slack * (1.0 + np.abs(rhs))))
    bound = cert.bound_at(np.maximum.accumulate(fn))
    margin = float(np.min(bound - un))
    if gap > 0.0:
        status = HYPOTHESIS_NOT_SATISFIED
    else:
        status = PASS if margin >= 0.0 else FAIL
    return BoundVerdict(status, margin, cert, bound, gap)


def extremal_solution(A, B, alpha: float, beta: float, f, phi, tau: float, T: float, h: float):
    """Solve the equality case ``u = f + int (t-s)^(a-1) A u + int (t-s)^(b-1) B u(s-tau)``.

    Product-trapezoid march (the corrector of the fractional Adams scheme),
    implicit in the undelayed term.  ``f`` is a callable of ``t`` returning a
    length-``n`` vector; ``phi`` is the constant history.  The step is shrunk
    so that ``tau`` is a whole number of steps.  Returns ``(t, u)``.
    """
    A = np.atleast_2d(np.asarray(A, dtype=float))
    B = np.atleast_2d(np.asarray(B, dtype=float))
    n = A.shape[0]
    phi = np.broadcast_to(np.asarray(phi, dtype=float), (n,))
    m = max(1, math.ceil(tau / h - 1e-9))
    h = tau / m
    N = max(1, math.ceil(T / h - 1e-9))
    t = h * np.arange(N + 1)
    wa = rl_integral_weights(alpha, N, h)
    wb = rl_integral_weights(beta, N, h)
    ca = math.gamma(alpha) * wa.trap_scale
    cb = math.gamma(beta) * wb.trap_scale
    u = np.zeros((N + 1, n))
    au = np.zeros((N + 1, n))
    bud = np.zeros((N + 1, n))
    u[0] = f(0.0)
    au[0] = A @ u[0]
    bud[0] = B @ phi
    lhs = np.eye(n) - ca * A
    for k in range(1, N + 1):
        ud = u[k - m] if k >= m else phi
        bud[k] = B @ ud
        acc_a = wa.first[k] * au[0]
        acc_b = wb.first[k] * bud[0] + bud[k]
        if k > 1:
            acc_a = acc_a + wa.mid[k - 1 : 0 : -1] @ au[1:k]
            acc_b = acc_b + wb.mid[k - 1 : 0 : -1] @ bud[1:k]
        rhs = f(t[k]) + ca * acc_a + cb * acc_b
        u[k] = np.linalg.solve(lhs, rhs)
        au[k] = A @ u[k]
    return t, u


@dataclass(frozen=True)
class SweepCase:
    index: int
    dimension: int
    alpha: float
    beta: float
    normA: float
    normB: float
    T: float
    tau: float
    M: float
    q: float
    max_u: float
    bound: float
    status: str


def certification_sweep(count: int, seed: int = 0, h: float = 0.01) -> list:
    """Certify ``count`` random delayed linear systems against their equality solutions.

    Each case draws ``n <= 3``, matrices with ``|.|_inf <= 1``, orders from
    ``{0.3, 0.5, 0.8}``, ``T <= 2`` and ``tau <= 1``; the componentwise
    equality with ``|A|, |B|`` is the extremal function for the hypothesis.
    """
    rng = np.random.default_rng(seed)
    orders = (0.3, 0.5, 0.8)
    out = []
    for i in range(count):
        n = int(rng.integers(1, 4))

        def draw():
            M = rng.uniform(-1.0, 1.0, (n, n))
            return M / np.max(np.sum(np.abs(M), axis=1)) * rng.uniform(0.0, 1.0)

        A, B = draw(), draw()
        alpha = float(rng.choice(orders))
        beta = float(rng.choice(orders))
        T = float(rng.uniform(0.2, 2.0))
        tau = float(rng.uniform(0.05, 1.0))
        phi = rng.uniform(0.0, 1.0, n)
        f0 = rng.uniform(0.0, 1.0, n)
        nA = float(np.max(np.sum(np.abs(A), axis=1)))
        nB = float(np.max(np.sum(np.abs(B), axis=1)))
        t, u = extremal_solution(np.abs(A), np.abs(B), alpha, beta, lambda s: f0, phi, tau, T, h)
        inp = GronwallInput(alpha, beta, nA, nB, T, float(np.max(phi)), float(np.max(f0)), tau)
        v = certify_bound(inp, t, u, np.tile(f0, (t.shape[0], 1)), u_history=float(np.max(phi)))
        c = v.certificate
        out.append(SweepCase(i, n, alpha, beta, nA, nB, T, tau, c.M, c.q, float(np.max(u)), c.bound, v.status))
    return out
