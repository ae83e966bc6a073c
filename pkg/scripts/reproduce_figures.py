"""Regenerate the CSV data behind every figure at desk scale.

    python3 scripts/reproduce_figures.py --out results/ [--quick]

Each step shells into the same entry point as the ``twobit`` command, so the
files match what the CLI writes.  ``--quick`` shrinks trial counts and the
re-ranking dataset for a smoke run (well under a minute).
"""

import argparse
import sys
import time
from pathlib import Path

from twobit.cli import main as twobit


def steps(out: Path, quick: bool):
    trials = "1000" if quick else "10000"
    yield "variance-ratio curve g(w)", [
        "g-curve", "--out", str(out / "g_curve.csv")]
    yield "variance-ratio sweep over rho", [
        "variance-ratio", str(out / "variance_ratio.csv")]
    yield "empirical MSE vs Fisher prediction", [
        "simulate-mse", "--trials", trials, "--out", str(out / "mse.csv")]
    yield "LSH gap curves", [
        "gap-curves", "--out", str(out / "gap_curves.csv")]
    rerank = ["rerank-eval", "--out", str(out / "rerank.csv")]
    if quick:
        rerank += ["--n", "2000", "--n-queries", "50", "--L", "20", "--k", "100"]
    yield "re-ranking precision-recall", rerank


def variance_ratio_csv(path: Path) -> int:
    """R(rho, w) for the six- and five-cell likelihoods on a (rho, w) grid."""
    import csv

    import numpy as np

    from twobit.estimation import variance_ratio

    rhos = np.round(np.arange(0.0, 0.951, 0.05), 10)
    with open(path, "w", newline="") as fh:
        out = csv.writer(fh)
        out.writerow(["rho", "w", "mode", "ratio"])
        for w in (0.5, 0.75, 1.0, 1.5):
            for mode in ("six_cell", "five_cell"):
                for rho, r in zip(rhos, np.atleast_1d(variance_ratio(rhos, w, mode))):
                    out.writerow([f"{rho:.2f}", w, mode, f"{r:.8g}"])
    return 0


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", default="results")
    ap.add_argument("--quick", action="store_true")
    args = ap.parse_args(argv)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for label, cmd in steps(out, args.quick):
        t0 = time.time()
        if cmd[0] == "variance-ratio":
            code = variance_ratio_csv(Path(cmd[1]))
        else:
            code = twobit(cmd)
        print(f"{label}: exit {code}, {time.time() - t0:.1f}s")
        if code:
            return code
    return 0


if __name__ == "__main__":
    sys.exit(main())
