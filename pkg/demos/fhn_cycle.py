"""Limit cycles of the delayed FHN model.

The classical oscillator (alpha = 1, no delay feedback) and a delayed
negative-feedback set whose equilibrium is an unstable spiral.
"""

import numpy as np

from fracdyn.cycles import CycleConfig, find_cycle, periodicity_defect
from fracdyn.fhn import FhnParams, characteristic_roots, equilibrium, theorem_conditions


def report(name, p, cfg=CycleConfig()):
    rep = find_cycle(p, cfg)
    print(f"{name}: found={rep.found} period={rep.period:.4f} residual={rep.poincare_residual:.2e} amplitude={rep.amplitude:.3f}")
    if rep.found:
        print(f"  periodicity defect {periodicity_defect(rep, p):.2e}, inside annulus: {rep.in_annulus}")


def main():
    report("classical", FhnParams(alpha=1.0, lam=0.0, I_ext=0.5))

    p = FhnParams(alpha=1.0, lam=-1.5, b=2.0, a=0.1, I_ext=0.0)
    rs = characteristic_roots(p)
    print(f"spiral set: c={rs.c:.4f}, rightmost root {rs.rightmost.s:.4f}, unstable={rs.unstable}")
    print(f"  parameter conditions satisfied: {theorem_conditions(p).all_satisfied}")
    # the exact equilibrium never leaves; start from a rounded copy
    x0 = tuple(np.round(equilibrium(p).roots[0], 6))
    report("spiral", p, CycleConfig(T_skip=150.0, x0=x0))


if __name__ == "__main__":
    main()
