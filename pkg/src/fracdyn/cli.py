"""Command-line front end.

Every subcommand reads an optional configuration file (see
:mod:`fracdyn.config`), writes its CSV/report files plus ``manifest.txt``
into the output directory and returns an exit code: 0 success, 1 usage or
configuration error, 2 solver failure, 3 verdict FAIL.
"""

from __future__ import annotations

import argparse
import logging
import platform
import sys
from dataclasses import replace
from pathlib import Path
from typing import List, Optional

import mpmath
import numpy as np
import scipy

from . import __version__
from .config import ConfigError, RunConfig, config_hash, default_config, format_config, load_config, validate_config
from .cycles import CycleConfig, HistorySegment, ScanConfig, find_cycle, threshold_scan
from .fhn import (
    FhnParams,
    annulus,
    characteristic_roots,
    equilibrium,
    fhn_rhs,
    lyapunov_series,
    theorem_conditions,
)
from .fraccore import HistoryFunction, MemoryOperatorSpec, UniformGrid
from .gronwall import FAIL, GronwallInput, certification_sweep, certify_bound, compute_bound_constant, extremal_solution
from .io import read_trajectory, write_report, write_rows, write_trajectory
from .solver import ProblemSpec, SolverConfig, SolverError, solve
from .stability import ConfigurationError, verify_uh

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_SOLVER = 2
EXIT_FAIL = 3

log = logging.getLogger("fracdyn")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


# {{{ building problems from the configuration


def _history(kind: str, coeffs, x0):
    if kind == "polynomial":
        return HistoryFunction.polynomial(np.array(coeffs, dtype=float))
    if coeffs:
        return HistoryFunction.constant(np.array(coeffs[0], dtype=float))
    return None if x0 is None else HistoryFunction.constant(np.array(x0, dtype=float))


def fhn_params(cfg: RunConfig) -> FhnParams:
    f = cfg.fhn
    return FhnParams(alpha=f.alpha, epsilon=f.epsilon, a=f.a, b=f.b, lam=f.lam, tau=f.tau, I_ext=f.i_ext)


def fhn_problem(cfg: RunConfig, T: Optional[float] = None) -> ProblemSpec:
    f = cfg.fhn
    hist = _history(f.history, f.history_coeffs, None)
    return fhn_rhs(fhn_params(cfg), T=f.T if T is None else T, history=hist)


def build_problem(cfg: RunConfig) -> ProblemSpec:
    """Catalog problem described by the ``[problem]`` block."""
    p = cfg.problem
    if p.model == "fhn":
        return fhn_problem(cfg, T=p.T)
    hist = _history(p.history, p.history_coeffs, p.x0)
    x0 = hist(0.0)
    n = x0.shape[0]
    if p.model == "relaxation":
        rate = p.rate

        def F(t, x, d, m):
            return -rate * x

        return ProblemSpec(F, x0, p.alpha, p.T, history=hist, lipschitz_L=abs(rate) or None, name="relaxation")

    A = np.array(p.matrix, dtype=float)
    f0 = np.broadcast_to(np.array(p.forcing, dtype=float), (n,)).copy()
    k = p.implicit
    normA = float(np.max(np.sum(np.abs(A), axis=1)))
    if p.model == "linear":

        def F(t, x, d, m):
            return A @ x + k * d + f0

        return ProblemSpec(F, x0, p.alpha, p.T, history=hist, lipschitz_L=normA or None, lipschitz_d=abs(k), name="linear")

    B = np.array(p.delay_matrix, dtype=float)
    normB = float(np.max(np.sum(np.abs(B), axis=1)))

    def F(t, x, d, m):
        return A @ x + B @ m + k * d + f0

    return ProblemSpec(
        F,
        x0,
        p.alpha,
        p.T,
        memory=MemoryOperatorSpec.delay(p.tau),
        history=hist,
        lipschitz_L=max(normA, normB) or None,
        lipschitz_d=abs(k),
        name="linear_delay",
    )


def solver_config(cfg: RunConfig, h: Optional[float] = None) -> SolverConfig:
    s = cfg.solver
    return SolverConfig(
        h=s.h if h is None else h, implicit_tol=s.implicit_tol, implicit_max_iter=s.implicit_max_iter, damping=s.damping
    )


# }}}

# {{{ subcommands


def _outdir(cfg: RunConfig) -> Path:
    out = Path(cfg.run.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def write_manifest(cfg: RunConfig, out: Path, h_used: Optional[float] = None, extra: Optional[dict] = None) -> None:
    items = {
        "subcommand": cfg.run.subcommand,
        "config_sha256": config_hash(cfg),
        "seed": cfg.run.seed,
    }
    for key, requested, used in cfg.adjustments:
        items[f"{key}_requested"] = requested
        items[f"{key}_adjusted"] = used
    if h_used is not None:
        items["h_used"] = h_used
    items.update(extra or {})
    items["fracdyn_version"] = __version__
    items["python_version"] = platform.python_version()
    items["numpy_version"] = np.__version__
    items["scipy_version"] = scipy.__version__
    items["mpmath_version"] = mpmath.__version__
    write_report(out / "manifest.txt", items)
    (out / "config.ini").write_text(format_config(cfg), encoding="utf-8")


def _print_report(items: dict) -> None:
    write_report(sys.stdout, items)


def cmd_simulate(cfg: RunConfig, args) -> int:
    problem = build_problem(cfg)
    h = cfg.fhn.h if cfg.problem.model == "fhn" else cfg.solver.h
    traj = solve(problem, solver_config(cfg, h))
    out = _outdir(cfg)
    write_trajectory(traj, out / "trajectory.csv")
    write_manifest(cfg, out, traj.grid.h)
    _print_report(
        {
            "model": cfg.problem.model,
            "h": traj.grid.h,
            "n_steps": traj.grid.n_steps,
            "x_final": " ".join(f"{v:.10g}" for v in traj.states[-1]),
            "max_inner_iters": int(traj.inner_iters.max()),
        }
    )
    return EXIT_OK


def cmd_fhn_simulate(cfg: RunConfig, args) -> int:
    params = fhn_params(cfg)
    problem = fhn_problem(cfg)
    traj = solve(problem, solver_config(cfg, cfg.fhn.h))
    out = _outdir(cfg)
    write_trajectory(traj, out / "trajectory.csv")
    rep = lyapunov_series(traj, params)
    write_rows(out / "lyapunov.csv", ["t", "V", "envelope"], zip(traj.times, rep.V, rep.envelope))
    write_manifest(cfg, out, traj.grid.h)
    _print_report(
        {
            "h": traj.grid.h,
            "n_steps": traj.grid.n_steps,
            "v_final": traj.states[-1, 0],
            "w_final": traj.states[-1, 1],
            "absorbing_level": rep.level,
            "ultimately_bounded": rep.ultimately_bounded,
            "envelope_first_violation": rep.first_violation,
        }
    )
    return EXIT_OK


def cmd_fhn_analyze(cfg: RunConfig, args) -> int:
    params = fhn_params(cfg)
    out = _outdir(cfg)
    eq = equilibrium(params)
    write_rows(out / "equilibria.csv", ["v0", "w0", "residual"], [(v, w, r) for (v, w), r in zip(eq.roots, eq.residuals)])
    cond = theorem_conditions(params)
    ann = annulus(params)
    v0 = eq.roots[0][0]
    roots = characteristic_roots(params, v0=v0)
    write_rows(out / "roots.csv", ["re", "im", "residual"], [(r.s.real, r.s.imag, r.residual) for r in roots.roots])
    items = {
        "equilibria": len(eq.roots),
        "unique_equilibrium": eq.unique,
        "v0": v0,
        "w0": eq.roots[0][1],
        "lambda0": cond.lambda0,
        "epsilon0": cond.epsilon0,
        "lambda_ok": cond.lambda_ok,
        "epsilon_ok": cond.epsilon_ok,
        "subthreshold_ok": cond.subthreshold_ok,
        "all_satisfied": cond.all_satisfied,
        "warnings": "; ".join(cond.warnings) if cond.warnings else "none",
        "delta": ann.delta,
        "C1": ann.C1,
        "C2": ann.C2,
        "M": ann.M,
        "R1": ann.R1,
        "R2": ann.R2,
        "annulus_degenerate": ann.degenerate,
        "linear_coefficient_c": roots.c,
        "roots_found": len(roots.roots),
        "rightmost_re": roots.rightmost.s.real if roots.rightmost else None,
        "rightmost_im": roots.rightmost.s.imag if roots.rightmost else None,
        "unstable": roots.unstable,
        "root_diagnostic": roots.diagnostic or "none",
    }
    write_report(out / "conditions.txt", items)
    write_manifest(cfg, out)
    _print_report(items)
    return EXIT_OK


def cmd_gronwall(cfg: RunConfig, args) -> int:
    g = cfg.gronwall
    out = _outdir(cfg)
    inp = GronwallInput(g.alpha, g.beta, g.normA, g.normB, g.T, g.phi_norm, g.f_sup, g.tau)
    cert = compute_bound_constant(inp)
    items = {
        "M": cert.M,
        "h_star": cert.h_star,
        "n_intervals": cert.n_intervals,
        "q": cert.q,
        "phi_norm": cert.phi_norm,
        "f_sup": cert.f_sup,
        "bound": cert.bound,
    }
    status = "PASS"
    if g.curve:
        tau = g.tau
        if tau is None:
            if g.normB > 0.0:
                raise UsageError("[gronwall] curve with normB > 0 needs a delay tau")
            tau = g.curve_h
        t, u = extremal_solution(g.normA, g.normB, g.alpha, g.beta, lambda s: np.array([g.f_sup]), g.phi_norm, tau, g.T, g.curve_h)
        v = certify_bound(replace(inp, tau=tau), t, u, np.full_like(t, g.f_sup), u_history=g.phi_norm)
        write_rows(out / "curve.csv", ["t", "u", "bound"], zip(t, u[:, 0], v.bound))
        items.update({"curve_verdict": v.status, "curve_margin": v.margin, "curve_max_u": float(np.max(u))})
        if v.status == FAIL:
            status = FAIL
    if g.sweep > 0:
        cases = certification_sweep(g.sweep, seed=cfg.run.seed)
        rows = [
            (c.index, c.dimension, c.alpha, c.beta, c.normA, c.normB, c.T, c.tau, c.M, c.q, c.max_u, c.bound, c.status)
            for c in cases
        ]
        header = ["case", "n", "alpha", "beta", "normA", "normB", "T", "tau", "M", "q", "max_u", "bound", "status"]
        write_rows(out / "sweep.csv", header, rows)
        fails = sum(c.status == FAIL for c in cases)
        items.update({"sweep_cases": len(cases), "sweep_failures": fails, "sweep_max_q": max(c.q for c in cases)})
        if fails:
            status = FAIL
    items["verdict"] = status
    write_report(out / "certificate.txt", items)
    write_manifest(cfg, out, g.curve_h if g.curve else None)
    _print_report(items)
    return EXIT_FAIL if status == FAIL else EXIT_OK


def cmd_verify_uh(cfg: RunConfig, args) -> int:
    u = cfg.uh
    cand = args.candidate or u.candidate
    if not cand:
        raise UsageError("verify-uh needs a candidate trajectory CSV (--candidate or [uh] candidate)")
    exact_path = args.exact or u.exact
    y = read_trajectory(cand)
    problem = build_problem(cfg)
    exact = read_trajectory(exact_path) if exact_path else None
    rep = verify_uh(y, problem, cfg=solver_config(cfg, y.grid.h), epsilon=u.epsilon, exact=exact, L=u.L, estimator=u.estimator)
    out = _outdir(cfg)
    items = {
        "epsilon": rep.epsilon,
        "epsilon_measured": rep.epsilon_measured,
        "C": rep.C,
        "max_deviation": rep.max_deviation,
        "bound": rep.bound,
        "margin": rep.margin,
        "verdict": rep.verdict,
        "M": rep.certificate.M,
        "q": rep.certificate.q,
    }
    write_report(out / "stability.txt", items)
    write_rows(out / "stability.csv", list(items), [list(items.values())])
    write_manifest(cfg, out, y.grid.h)
    _print_report(items)
    return EXIT_OK if rep.passed else EXIT_FAIL


def _cycle_config(cfg: RunConfig) -> CycleConfig:
    f, c = cfg.fhn, cfg.cycle
    hist = seg = None
    x0 = None
    if f.history == "polynomial":
        hist = HistoryFunction.polynomial(np.array(f.history_coeffs, dtype=float))
        grid = UniformGrid.aligned(f.tau, f.h, f.tau)
        seg = HistorySegment(hist.on_grid(grid), grid.h)
    elif f.history_coeffs:
        x0 = tuple(f.history_coeffs[0])
    return CycleConfig(
        h=f.h,
        T_skip=c.T_skip,
        cycle_tol=c.cycle_tol,
        amplitude_floor=c.amplitude_floor,
        max_iter=c.max_iter,
        refine=c.refine,
        history=seg,
        x0=x0,
        solver=solver_config(cfg, f.h),
    )


def cmd_find_cycle(cfg: RunConfig, args) -> int:
    params = fhn_params(cfg)
    rep = find_cycle(params, _cycle_config(cfg))
    out = _outdir(cfg)
    items = {
        "found": rep.found,
        "period": rep.period,
        "poincare_residual": rep.poincare_residual,
        "amplitude": rep.amplitude,
        "in_annulus": rep.in_annulus,
        "transient_discarded": rep.transient_discarded,
        "T_map": rep.T_map,
        "h": rep.h,
        "iterations": rep.iterations,
        "diagnostic": rep.diagnostic or "none",
    }
    write_report(out / "cycle.txt", items)
    if rep.segment is not None:
        seg = rep.segment
        t = seg.h * np.arange(-seg.m, 1)
        write_rows(out / "segment.csv", ["t", "v", "w"], zip(t, seg.samples[:, 0], seg.samples[:, 1]))
    write_manifest(cfg, out, rep.h)
    _print_report(items)
    return EXIT_OK


def cmd_scan_threshold(cfg: RunConfig, args) -> int:
    sc = cfg.scan
    base = replace(fhn_params(cfg), I_ext=sc.i_base)
    taus = np.geomspace(sc.tau_max, sc.tau_min, sc.tau_count) if sc.tau_count > 1 else np.array([sc.tau_max])
    scfg = ScanConfig(
        spike_margin=sc.spike_margin,
        T_obs=sc.t_obs,
        h=sc.h,
        I_max=sc.i_max,
        I_start=sc.i_start,
        bisection_steps=sc.bisection_steps,
        implicit_tol=cfg.solver.implicit_tol,
    )
    res = threshold_scan(base, taus, scfg)
    out = _outdir(cfg)
    write_rows(out / "thresholds.csv", ["tau", "i_th", "bracket_width"], [(p.tau, p.I_th, p.bracket_width) for p in res.points])
    items = {
        "alpha": res.alpha,
        "p": res.exponent,
        "stderr": res.stderr,
        "r_squared": res.r_squared,
        "expected_p": res.expected_exponent,
        "deviation": res.deviation,
        "monotone": res.monotone,
        "undefined_points": sum(p.I_th is None for p in res.points),
    }
    write_report(out / "fit.txt", items)
    write_manifest(cfg, out, sc.h)
    _print_report(items)
    return EXIT_OK


_COMMANDS = {
    "simulate": cmd_simulate,
    "fhn-simulate": cmd_fhn_simulate,
    "fhn-analyze": cmd_fhn_analyze,
    "gronwall": cmd_gronwall,
    "verify-uh": cmd_verify_uh,
    "find-cycle": cmd_find_cycle,
    "scan-threshold": cmd_scan_threshold,
}


# }}}


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("config", nargs="?", help="configuration file (defaults are used when omitted)")
    p.add_argument("-o", "--output-dir", help="directory for CSV, report and manifest files")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="fracdyn", description="Fractional delay systems: solver, bounds, stability and FHN analysis.")
    parser.add_argument("--print-config", nargs="?", const="", metavar="CONFIG", help="print the full configuration and exit")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    _add_common(sub.add_parser("simulate", help="solve a catalog problem and write its trajectory"))

    fhn = sub.add_parser("fhn", help="FitzHugh-Nagumo model with delayed feedback")
    fsub = fhn.add_subparsers(dest="fhn_command", parser_class=_Parser)
    _add_common(fsub.add_parser("simulate", help="solve the model and monitor the Lyapunov functional"))
    _add_common(fsub.add_parser("analyze", help="equilibria, parameter conditions, annulus and characteristic roots"))

    _add_common(sub.add_parser("gronwall", help="explicit bound constant and optional certification runs"))

    uh = sub.add_parser("verify-uh", help="check a candidate trajectory against the stability bound")
    _add_common(uh)
    uh.add_argument("--candidate", help="candidate trajectory CSV")
    uh.add_argument("--exact", help="reference trajectory CSV (solved when omitted)")

    _add_common(sub.add_parser("find-cycle", help="limit-cycle search by iterating the time-T map"))

    sc = sub.add_parser("scan-threshold", help="excitation threshold versus delay and power-law fit")
    _add_common(sc)
    sc.add_argument("--alpha", type=float)
    sc.add_argument("--tau-min", type=float)
    sc.add_argument("--tau-max", type=float)
    sc.add_argument("--tau-count", type=int)
    sc.add_argument("--spike-margin", type=float)
    sc.add_argument("--t-obs", type=float)
    sc.add_argument("--i-max", type=float)
    return parser


def _apply_overrides(cfg: RunConfig, args, command: str) -> RunConfig:
    run = replace(cfg.run, subcommand=command)
    if getattr(args, "output_dir", None):
        run = replace(run, output_dir=args.output_dir)
    cfg = replace(cfg, run=run)
    if command == "scan-threshold":
        sc = cfg.scan
        for flag, key in (
            ("tau_min", "tau_min"),
            ("tau_max", "tau_max"),
            ("tau_count", "tau_count"),
            ("spike_margin", "spike_margin"),
            ("t_obs", "t_obs"),
            ("i_max", "i_max"),
        ):
            val = getattr(args, flag, None)
            if val is not None:
                sc = replace(sc, **{key: val})
        cfg = replace(cfg, scan=sc)
        if args.alpha is not None:
            cfg = replace(cfg, fhn=replace(cfg.fhn, alpha=args.alpha))
    return validate_config(cfg)


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(name)s: %(message)s")
        if args.print_config is not None:
            cfg = load_config(args.print_config) if args.print_config else default_config()
            sys.stdout.write(format_config(cfg))
            return EXIT_OK
        command = args.command
        if command == "fhn":
            if not args.fhn_command:
                raise UsageError("fracdyn fhn: choose simulate or analyze")
            command = f"fhn-{args.fhn_command}"
        if not command:
            raise UsageError("fracdyn: a subcommand is required (see --help)")
        cfg = load_config(args.config) if args.config else default_config()
        cfg = _apply_overrides(cfg, args, command)
        return _COMMANDS[command](cfg, args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ConfigError, ConfigurationError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except SolverError as exc:
        print(f"solver failure at step {exc.step}: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
