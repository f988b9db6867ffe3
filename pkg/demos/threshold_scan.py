"""Excitation threshold versus delay, with the power-law fit.

Takes a minute or so per order on one core; set FRACDYN_THREADS to use
more processes.
"""

import numpy as np

from fracdyn.cycles import ScanConfig, threshold_scan
from fracdyn.fhn import FhnParams


def main():
    taus = np.geomspace(1.0, 0.05, 5)
    for alpha in (0.7, 0.9):
        base = FhnParams(alpha=alpha, epsilon=0.08, a=0.7, b=0.8, lam=0.1, I_ext=0.0)
        res = threshold_scan(base, taus, ScanConfig(bisection_steps=30))
        for pt in res.points:
            print(f"alpha={alpha} tau={pt.tau:.4f} I_th={pt.I_th:.6f}")
        print(f"  p={res.exponent:.4f} (expected {res.expected_exponent:.2f}), R^2={res.r_squared:.3f}, monotone={res.monotone}")


if __name__ == "__main__":
    main()
