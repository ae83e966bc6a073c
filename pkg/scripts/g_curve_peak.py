"""Locate the maximum of g(w) on a fine grid and print it.

    python3 scripts/g_curve_peak.py [--lo 0.3 --hi 3 --step 1e-4]
"""

import argparse

import numpy as np

from twobit.estimation import g_function


def main(argv=None) -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--lo", type=float, default=0.3)
    ap.add_argument("--hi", type=float, default=3.0)
    ap.add_argument("--step", type=float, default=1e-4)
    args = ap.parse_args(argv)
    w = np.arange(args.lo, args.hi + 0.5 * args.step, args.step)
    g = g_function(w)
    i = int(np.argmax(g))
    print(f"argmax w={w[i]:.4f}  g={g[i]:.5f}  g^2={g[i] ** 2:.5f}  g(0.75)={g_function(0.75):.5f}")


if __name__ == "__main__":
    main()
