"""Run configuration: INI-style ``[section]`` blocks of ``key = value`` lines.

Every block is a frozen dataclass whose defaults are the documented
defaults.  Parsing rejects unknown sections and keys, converts values by
the field's annotated type and validates the module invariants.  The text
produced by :func:`format_config` parses back to an identical
:class:`RunConfig`.
"""

from __future__ import annotations

import configparser
import dataclasses
import hashlib
import logging
import math
from dataclasses import dataclass, field, fields, replace
from typing import Dict, List, Optional, Tuple, get_type_hints

log = logging.getLogger("fracdyn")

Vector = Tuple[float, ...]
Matrix = Tuple[Tuple[float, ...], ...]

SUBCOMMANDS = ("simulate", "fhn-simulate", "fhn-analyze", "gronwall", "verify-uh", "find-cycle", "scan-threshold")
MODELS = ("relaxation", "linear", "linear_delay", "fhn")


class ConfigError(ValueError):
    """Bad configuration; the message names the section and key."""


@dataclass(frozen=True)
class RunBlock:
    subcommand: str = "simulate"
    output_dir: str = "out"
    seed: int = 0


@dataclass(frozen=True)
class SolverBlock:
    h: float = 0.01
    implicit_tol: float = 1e-10
    implicit_max_iter: int = 100
    damping: float = 1.0


@dataclass(frozen=True)
class ProblemBlock:
    """Generic problem from the built-in catalog.

    ``relaxation``: ``D^a x = -rate x``.  ``linear``: ``D^a x = A x + k D^a x + f``.
    ``linear_delay`` adds ``B x(t - tau)``.  ``fhn`` takes its parameters from ``[fhn]``.
    """

    model: str = "relaxation"
    alpha: float = 0.5
    T: float = 1.0
    x0: Vector = (1.0,)
    rate: float = 1.0
    matrix: Matrix = ((-1.0,),)
    delay_matrix: Matrix = ((0.0,),)
    forcing: Vector = (0.0,)
    implicit: float = 0.0
    tau: float = 1.0
    history: str = "constant"
    history_coeffs: Matrix = ()


@dataclass(frozen=True)
class FhnBlock:
    alpha: float = 0.8
    epsilon: float = 0.08
    a: float = 0.7
    b: float = 0.8
    lam: float = field(default=0.0, metadata={"key": "lambda"})
    tau: float = 1.0
    i_ext: float = 0.5
    history: str = "constant"
    history_coeffs: Matrix = ()
    T: float = 100.0
    h: float = 0.01


@dataclass(frozen=True)
class GronwallBlock:
    alpha: float = 0.5
    beta: float = 0.5
    normA: float = 1.0
    normB: float = 0.0
    T: float = 1.0
    tau: Optional[float] = None
    phi_norm: float = 0.0
    f_sup: float = 1.0
    curve: bool = False
    curve_h: float = 0.01
    sweep: int = 0


@dataclass(frozen=True)
class UhBlock:
    candidate: str = ""
    exact: str = ""
    epsilon: Optional[float] = None
    L: Optional[float] = None
    estimator: str = "scheme"


@dataclass(frozen=True)
class CycleBlock:
    T_skip: float = 200.0
    cycle_tol: float = 1e-4
    amplitude_floor: float = 0.1
    max_iter: int = 50
    refine: float = 3.0


@dataclass(frozen=True)
class ScanBlock:
    tau_min: float = 0.05
    tau_max: float = 1.0
    tau_count: int = 5
    i_base: float = 0.0
    spike_margin: float = 1.0
    t_obs: float = 20.0
    i_max: float = 10.0
    i_start: float = 0.01
    bisection_steps: int = 40
    h: float = 0.01


_SECTIONS = (
    ("run", "run", RunBlock),
    ("solver", "solver", SolverBlock),
    ("problem", "problem", ProblemBlock),
    ("fhn", "fhn", FhnBlock),
    ("gronwall", "gronwall", GronwallBlock),
    ("uh", "uh", UhBlock),
    ("cycle", "cycle", CycleBlock),
    ("scan", "scan", ScanBlock),
)


@dataclass(frozen=True)
class RunConfig:
    run: RunBlock = RunBlock()
    solver: SolverBlock = SolverBlock()
    problem: ProblemBlock = ProblemBlock()
    fhn: FhnBlock = FhnBlock()
    gronwall: GronwallBlock = GronwallBlock()
    uh: UhBlock = UhBlock()
    cycle: CycleBlock = CycleBlock()
    scan: ScanBlock = ScanBlock()
    # (key, requested, used) for every step shrunk to fit a delay; not serialized
    adjustments: Tuple[Tuple[str, float, float], ...] = field(default=(), compare=False)


# {{{ value conversion


def _key(f: dataclasses.Field) -> str:
    return f.metadata.get("key", f.name)


def _parse_vector(text: str) -> Vector:
    text = text.strip()
    if not text:
        return ()
    return tuple(float(v) for v in text.split(","))


def _parse_matrix(text: str) -> Matrix:
    text = text.strip()
    if not text:
        return ()
    rows = tuple(_parse_vector(r) for r in text.split(";"))
    if len({len(r) for r in rows}) != 1:
        raise ValueError("matrix rows must have equal length")
    return rows


def _parse_bool(text: str) -> bool:
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"expected a boolean, got {text!r}")


def _parse_optional_float(text: str) -> Optional[float]:
    t = text.strip().lower()
    return None if t in ("", "none") else float(t)


_PARSERS = {
    float: float,
    int: int,
    str: lambda s: s.strip(),
    bool: _parse_bool,
    Optional[float]: _parse_optional_float,
    Vector: _parse_vector,
    Matrix: _parse_matrix,
}


def _format_value(value) -> str:
    if value is None:
        return "none"
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, tuple):
        if value and isinstance(value[0], tuple):
            return "; ".join(_format_value(r) for r in value)
        return ", ".join(repr(float(v)) for v in value)
    return str(value)


# }}}

# {{{ validation


def _require(cond: bool, section: str, key: str, msg: str) -> None:
    if not cond:
        raise ConfigError(f"[{section}] {key}: {msg}")


def _finite(values, section: str) -> None:
    for key, v in values.items():
        if isinstance(v, float):
            _require(math.isfinite(v), section, key, "must be finite")


def _aligned_step(h: float, tau: float) -> float:
    m = max(1, math.ceil(tau / h - 1e-9))
    return tau / m


def validate_config(cfg: RunConfig) -> RunConfig:
    for _, attr, _ in _SECTIONS:
        _finite(dataclasses.asdict(getattr(cfg, attr)), attr)
    r = cfg.run
    _require(r.subcommand in SUBCOMMANDS, "run", "subcommand", f"must be one of {', '.join(SUBCOMMANDS)}")
    _require(bool(r.output_dir), "run", "output_dir", "must not be empty")

    s = cfg.solver
    _require(s.h > 0, "solver", "h", "must be positive")
    _require(s.implicit_tol > 0, "solver", "implicit_tol", "must be positive")
    _require(s.implicit_max_iter >= 1, "solver", "implicit_max_iter", "must be at least 1")
    _require(0 < s.damping <= 1, "solver", "damping", "must lie in (0,1]")

    p = cfg.problem
    _require(p.model in MODELS, "problem", "model", f"must be one of {', '.join(MODELS)}")
    _require(0 < p.alpha <= 1, "problem", "alpha", "alpha must lie in (0,1]")
    _require(p.T > 0, "problem", "T", "must be positive")
    _require(p.tau > 0, "problem", "tau", "must be positive")
    _require(abs(p.implicit) < 1, "problem", "implicit", "must satisfy |implicit| < 1 (contraction in the derivative)")
    _require(p.history in ("constant", "polynomial"), "problem", "history", "must be constant or polynomial")
    if p.model in ("linear", "linear_delay"):
        n = len(p.x0)
        _require(n >= 1, "problem", "x0", "must have at least one component")
        _require(len(p.matrix) == n and len(p.matrix[0]) == n, "problem", "matrix", f"must be {n}x{n} to match x0")
        _require(len(p.forcing) in (1, n), "problem", "forcing", f"must have 1 or {n} components")
        if p.model == "linear_delay":
            _require(
                len(p.delay_matrix) == n and len(p.delay_matrix[0]) == n,
                "problem", "delay_matrix", f"must be {n}x{n} to match x0",
            )
    if p.history == "polynomial":
        _require(len(p.history_coeffs) >= 1, "problem", "history_coeffs", "a polynomial history needs coefficients")

    fh = cfg.fhn
    _require(0 < fh.alpha <= 1, "fhn", "alpha", "alpha must lie in (0,1]")
    _require(fh.epsilon > 0, "fhn", "epsilon", "must be positive")
    _require(fh.b > 0, "fhn", "b", "must be positive")
    _require(fh.tau > 0, "fhn", "tau", "must be positive")
    _require(fh.T > 0, "fhn", "T", "must be positive")
    _require(fh.h > 0, "fhn", "h", "must be positive")
    _require(fh.history in ("constant", "polynomial"), "fhn", "history", "must be constant or polynomial")
    if fh.history_coeffs:
        _require(len(fh.history_coeffs[0]) == 2, "fhn", "history_coeffs", "rows need two entries (v, w)")
    if fh.history == "polynomial":
        _require(len(fh.history_coeffs) >= 1, "fhn", "history_coeffs", "a polynomial history needs coefficients")

    g = cfg.gronwall
    _require(0 < g.alpha <= 1, "gronwall", "alpha", "alpha must lie in (0,1]")
    _require(0 < g.beta <= 1, "gronwall", "beta", "beta must lie in (0,1]")
    for key in ("normA", "normB", "phi_norm", "f_sup"):
        _require(getattr(g, key) >= 0, "gronwall", key, "must be non-negative")
    _require(g.T > 0, "gronwall", "T", "must be positive")
    _require(g.tau is None or g.tau > 0, "gronwall", "tau", "must be positive")
    _require(g.curve_h > 0, "gronwall", "curve_h", "must be positive")
    _require(g.sweep >= 0, "gronwall", "sweep", "must be non-negative")

    u = cfg.uh
    _require(u.epsilon is None or u.epsilon >= 0, "uh", "epsilon", "must be non-negative")
    _require(u.L is None or u.L >= 0, "uh", "L", "must be non-negative")
    _require(u.estimator in ("scheme", "l1"), "uh", "estimator", "must be scheme or l1")

    c = cfg.cycle
    _require(c.T_skip >= 0, "cycle", "T_skip", "must be non-negative")
    _require(c.cycle_tol > 0, "cycle", "cycle_tol", "must be positive")
    _require(c.amplitude_floor >= 0, "cycle", "amplitude_floor", "must be non-negative")
    _require(c.max_iter >= 1, "cycle", "max_iter", "must be at least 1")
    _require(c.refine >= 1, "cycle", "refine", "must be at least 1")

    sc = cfg.scan
    _require(0 < sc.tau_min <= sc.tau_max, "scan", "tau_min", "must satisfy 0 < tau_min <= tau_max")
    _require(sc.tau_count >= 1, "scan", "tau_count", "must be at least 1")
    _require(sc.spike_margin > 0, "scan", "spike_margin", "must be positive")
    _require(sc.t_obs > 0, "scan", "t_obs", "must be positive")
    _require(0 < sc.i_start <= sc.i_max, "scan", "i_start", "must satisfy 0 < i_start <= i_max")
    _require(sc.bisection_steps >= 1, "scan", "bisection_steps", "must be at least 1")
    _require(sc.h > 0, "scan", "h", "must be positive")

    # shrink steps so that every delay spans a whole number of them
    adj: List[Tuple[str, float, float]] = []
    if p.model in ("linear_delay", "fhn"):
        tau = p.tau if p.model == "linear_delay" else fh.tau
        new = _aligned_step(s.h, tau)
        if new != s.h:
            adj.append(("solver.h", s.h, new))
            cfg = replace(cfg, solver=replace(s, h=new))
    new = _aligned_step(fh.h, fh.tau)
    if new != fh.h:
        adj.append(("fhn.h", fh.h, new))
        cfg = replace(cfg, fhn=replace(fh, h=new))
    for key, old, used in adj:
        log.warning("%s adjusted from %r to %r so the delay spans a whole number of steps", key, old, used)
    return replace(cfg, adjustments=tuple(adj))


# }}}


def default_config() -> RunConfig:
    return validate_config(RunConfig())


def parse_config(text: str, source: str = "<config>") -> RunConfig:
    """Parse and validate a configuration document."""
    cp = configparser.ConfigParser(interpolation=None, default_section="__defaults__")
    cp.optionxform = str
    try:
        cp.read_string(text, source=source)
    except configparser.Error as exc:
        raise ConfigError(f"{source}: {exc}") from None
    known = {name: (attr, cls) for name, attr, cls in _SECTIONS}
    blocks: Dict[str, object] = {}
    for name in cp.sections():
        if name not in known:
            raise ConfigError(f"{source}: unknown section [{name}] (expected one of {', '.join(known)})")
        attr, cls = known[name]
        hints = get_type_hints(cls)
        by_key = {_key(f): f for f in fields(cls)}
        values = {}
        for key, raw in cp.items(name):
            f = by_key.get(key)
            if f is None:
                raise ConfigError(f"{source}: [{name}] unknown key {key!r} (valid: {', '.join(by_key)})")
            try:
                values[f.name] = _PARSERS[hints[f.name]](raw)
            except (ValueError, TypeError) as exc:
                raise ConfigError(f"{source}: [{name}] {key}: cannot parse {raw!r} ({exc})") from None
        blocks[attr] = cls(**values)
    return validate_config(RunConfig(**blocks))


def load_config(path: str) -> RunConfig:
    with open(path, encoding="utf-8") as fh:
        return parse_config(fh.read(), source=str(path))


def format_config(cfg: RunConfig) -> str:
    """Every key of every section, defaults included."""
    out = []
    for name, attr, _ in _SECTIONS:
        block = getattr(cfg, attr)
        out.append(f"[{name}]")
        for f in fields(block):
            out.append(f"{_key(f)} = {_format_value(getattr(block, f.name))}")
        out.append("")
    return "\n".join(out)


def config_hash(cfg: RunConfig) -> str:
    """SHA-256 of the canonical text; the output directory does not take part."""
    canon = replace(cfg, run=replace(cfg.run, output_dir="-"))
    return hashlib.sha256(format_config(canon).encode("utf-8")).hexdigest()
