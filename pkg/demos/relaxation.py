"""Fractional relaxation against its Mittag-Leffler solution.

Solves D^alpha x = -x, x(0) = 1 for several orders and prints the sup
error and the observed convergence ratio when the step is halved.
"""

import numpy as np

from fracdyn import ProblemSpec, SolverConfig, mittag_leffler, solve


def main():
    for alpha in (0.3, 0.5, 0.8, 1.0):
        pr = ProblemSpec(lambda t, x, d, m: -x, [1.0], alpha, 1.0)
        errs = []
        for h in (2e-3, 1e-3):
            y = solve(pr, SolverConfig(h))
            exact = mittag_leffler(-(y.times**alpha), alpha)
            errs.append(float(np.max(np.abs(y.states[:, 0] - exact))))
        print(f"alpha={alpha:.1f}  sup error {errs[1]:.3e}  halving ratio {errs[0] / errs[1]:.2f}")


if __name__ == "__main__":
    main()
