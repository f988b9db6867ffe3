"""Implicit Caputo-fractional delay systems: solver, a priori bounds, Ulam-Hyers checks and a delayed FitzHugh-Nagumo toolkit."""

__version__ = "0.1.0"

from .mlf import gamma_fn, mittag_leffler
from .fraccore import (
    HistoryFunction,
    MemoryOperatorSpec,
    UniformGrid,
    apply_memory_operator,
    caputo_derivative_grid,
    rl_integral_weights,
)
from .solver import ProblemSpec, SolverConfig, Trajectory, solve, solve_on_grid
from .gronwall import GronwallCertificate, GronwallInput, certify_bound, compute_bound_constant
from .stability import StabilityReport, measure_residual, uh_constant, verify_uh
from .fhn import FhnParams, annulus, characteristic_roots, equilibrium, fhn_rhs, lyapunov_series, theorem_conditions
from .cycles import HistorySegment, find_cycle, holder_constant, poincare_map, threshold_scan
