"""Jacobian of vecl(R) with respect to gamma for the AR(1) examples.

    python scripts/jacobian_example.py --rho 0.5 -0.5 --m 3

Also compares each Jacobian with central finite differences of the inverse
transform.
"""
import argparse

import numpy as np

from gztreg import gzt
from gztreg.matcalc import vecl
from gztreg.simulate import family_correlation


def finite_difference(R, h=1e-6):
    g = gzt.gzt_forward(R)
    cols = []
    for i in range(g.size):
        e = np.zeros_like(g)
        e[i] = h
        cols.append((vecl(gzt.gzt_inverse(g + e)) - vecl(gzt.gzt_inverse(g - e))) / (2 * h))
    return np.column_stack(cols)


def main():
    ap = argparse.ArgumentParser(description=__doc__.split("\n\n")[0])
    ap.add_argument("--rho", type=float, nargs="+", default=[0.5, -0.5])
    ap.add_argument("--m", type=int, default=3)
    args = ap.parse_args()
    np.set_printoptions(precision=4, suppress=True)
    for rho in args.rho:
        R = family_correlation("ar1", rho, args.m)
        J = gzt.gzt_jacobian(R)
        print(f"AR({rho}), m = {args.m}: gamma = {gzt.gzt_forward(R)}")
        print(J)
        print(f"max |J - finite difference| = {np.max(np.abs(J - finite_difference(R))):.1e}\n")


if __name__ == "__main__":
    main()
