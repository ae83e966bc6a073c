"""Command-line entry point.

Exit codes: 0 success, 1 invalid input or flags, 2 runtime failure.  Every
failure prints exactly one line to stderr.  Outputs are written only after
all computation has succeeded.
"""

from __future__ import annotations

import argparse
import csv
import sys
from pathlib import Path

import numpy as np

from .coding import Sketches, pair_cell_counts
from .collision_gap import SCHEMES, GapQuery, gap, max_c, write_gap_csv
from .estimation import ESTIMATORS, estimate_from_raw, g_function, predicted_variance
from .harness import (
    MSE_ESTIMATORS,
    DatasetSpec,
    ExperimentConfig,
    load_dataset,
    planted_dataset,
    rerank_eval,
    simulate_mse,
    write_mse_csv,
    write_raw_f32,
    write_rerank_csv,
)
from .lsh_engine import IndexConfig, LshIndex, SketchStore, build_two_stage, query, query_sketch, rerank
from .region_model import RHO_MAX, build_table, cached_table

EXIT_OK, EXIT_INVALID, EXIT_RUNTIME = 0, 1, 2


class UsageError(ValueError):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


# ---------------------------------------------------------------- parsing


def parse_list(text: str, kind=float) -> list:
    try:
        out = [kind(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise UsageError(f"cannot parse list {text!r}") from None
    if not out:
        raise UsageError(f"empty list {text!r}")
    return out


def parse_grid(text: str) -> np.ndarray:
    """``a,b,c`` lists values; ``start:stop:step`` is an inclusive linear grid;
    ``geom:start:stop:count`` is a geometric grid."""
    parts = text.split(":")
    try:
        if parts[0] == "geom" and len(parts) == 4:
            lo, hi, n = float(parts[1]), float(parts[2]), int(parts[3])
            if not (0 < lo < hi and n >= 2):
                raise UsageError(f"bad geometric grid {text!r}")
            return np.geomspace(lo, hi, n)
        if len(parts) == 3:
            lo, hi, step = map(float, parts)
            if not (step > 0 and hi >= lo):
                raise UsageError(f"bad linear grid {text!r}")
            n = int(round((hi - lo) / step)) + 1
            return lo + step * np.arange(n)
    except ValueError:
        raise UsageError(f"cannot parse grid {text!r}") from None
    return np.asarray(parse_list(text), dtype=float)


def _positive(name, value):
    if not value > 0:
        raise UsageError(f"{name} must be positive, got {value}")


def _estimators(text, allowed):
    names = parse_list(text, str)
    bad = [e for e in names if e not in allowed]
    if bad:
        raise UsageError(f"unknown estimator {bad[0]!r}; choose from {', '.join(allowed)}")
    return names


def _dataset(path, fmt, n, D):
    if fmt is None:
        fmt = "raw_f32" if str(path).endswith((".f32", ".bin")) else "csv"
    return load_dataset(DatasetSpec(str(path), fmt, n, D))


# ---------------------------------------------------------------- commands


def cmd_tabulate(args):
    _positive("--w", args.w)
    if not 0 < args.step <= 0.01:
        raise UsageError(f"--step must be in (0, 0.01], got {args.step}")
    table = build_table(args.w, args.step)
    table.save(args.out)
    print(f"wrote {table.rho.size} nodes to {args.out} (+ .json sidecar)")


def cmd_simulate_mse(args):
    _positive("--w", args.w)
    if args.trials < 1:
        raise UsageError(f"--trials must be >= 1, got {args.trials}")
    if args.k < 1:
        raise UsageError(f"--k must be >= 1, got {args.k}")
    grid = parse_grid(args.rho_grid)
    if np.any(np.abs(grid) > RHO_MAX):
        raise UsageError(f"--rho-grid values must satisfy |rho| <= {RHO_MAX}")
    estimators = _estimators(args.estimators, MSE_ESTIMATORS)
    rows = simulate_mse(grid, args.k, args.trials, args.w, args.seed, estimators)
    write_mse_csv(args.out, rows)
    print(f"wrote {len(rows)} rows to {args.out}")


def cmd_gap_curves(args):
    rho0s = parse_list(args.rho0)
    cs = parse_list(args.c_grid)
    schemes = parse_list(args.scheme, str)
    for s in schemes:
        if s not in SCHEMES:
            raise UsageError(f"unknown scheme {s!r}; choose from {', '.join(SCHEMES)}")
    w_grid = parse_grid(args.w_grid)
    if np.any(w_grid <= 0):
        raise UsageError("--w-grid values must be positive")
    rows, skipped = [], 0
    for rho0 in rho0s:
        if not 0 <= rho0 < 1:
            raise UsageError(f"--rho0 values must lie in [0, 1), got {rho0}")
        for c in cs:
            if c <= 1:
                raise UsageError(f"--c-grid values must exceed 1, got {c}")
            if c > max_c(rho0) * (1 + 1e-12):
                skipped += 1
                continue
            for scheme in schemes:
                for w in w_grid:
                    rows.append((rho0, c, float(w), scheme, gap(GapQuery(rho0, c, float(w)), scheme)))
    if not rows:
        raise UsageError("no admissible (rho0, c) pair; c must not exceed sqrt(1/(1-rho0))")
    write_gap_csv(args.out, rows)
    note = f" ({skipped} inadmissible (rho0, c) pairs skipped)" if skipped else ""
    print(f"wrote {len(rows)} rows to {args.out}{note}")


def cmd_g_curve(args):
    w_grid = parse_grid(args.w_grid)
    if np.any(w_grid <= 0):
        raise UsageError("--w-grid values must be positive")
    g = g_function(w_grid)
    with open(args.out, "w", newline="") as fh:
        out = csv.writer(fh)
        out.writerow(("w", "g", "g_squared"))
        for w, v in zip(w_grid, np.atleast_1d(g)):
            out.writerow([f"{w:.10g}", f"{v:.12g}", f"{v * v:.12g}"])
    i = int(np.argmax(g))
    print(f"max g = {np.atleast_1d(g)[i]:.6f} at w = {w_grid[i]:.6f}")


def cmd_synth_data(args):
    data, queries = planted_dataset(args.n, args.D, args.n_queries, args.cluster_size, args.seed)
    for path, arr in ((args.out_data, data), (args.out_queries, queries)):
        if str(path).endswith(".csv"):
            np.savetxt(path, arr, delimiter=",", fmt="%.9g")
        else:
            write_raw_f32(path, arr)
    print(f"wrote {data.shape[0]} points and {queries.shape[0]} queries (D={args.D})")


def cmd_build_index(args):
    data = _dataset(args.data, args.format, args.n, args.D)
    cfg = IndexConfig(args.K, args.L, args.w1, args.seed)
    _positive("--w", args.w)
    index, store = build_two_stage(data, cfg, args.k, args.w)
    prefix = Path(args.out)
    index.save(prefix.with_name(prefix.name + ".index"))
    store.sketches.save(prefix.with_name(prefix.name + ".sketch"))
    print(f"indexed {index.n} points into {cfg.L} tables; sketches k={args.k}")


def cmd_query(args):
    prefix = Path(args.index)
    index = LshIndex.load(prefix.with_name(prefix.name + ".index"))
    sk = Sketches.load(prefix.with_name(prefix.name + ".sketch"))
    store = SketchStore(sk)
    _estimators(args.estimator, ESTIMATORS)
    queries = _dataset(args.queries, args.format, None, index.D)
    table = cached_table(float(sk.w))
    rows = []
    for qi, q in enumerate(queries):
        cand = query(index, q)
        ids, rho = rerank(cand, query_sketch(index, q, sk.k, sk.w), store, args.estimator, table)
        top = len(ids) if args.top is None else min(args.top, len(ids))
        rows.extend((qi, r + 1, int(ids[r]), float(rho[r])) for r in range(top))
    with open(args.out, "w", newline="") as fh:
        out = csv.writer(fh)
        out.writerow(("query", "rank", "id", "rho_hat"))
        for qi, r, i, rho in rows:
            out.writerow([qi, r, i, f"{rho:.10g}"])
    print(f"wrote {len(rows)} ranked candidates for {len(queries)} queries")


def cmd_rerank_eval(args):
    if (args.data is None) != (args.queries is None):
        raise UsageError("--data and --queries must be given together")
    if args.data is None:
        data, queries = planted_dataset(args.n, args.D, args.n_queries, seed=args.seed)
    else:
        data = _dataset(args.data, args.format, None, None)
        queries = _dataset(args.queries, args.format, None, data.shape[1])
    cfg = ExperimentConfig(
        K=args.K, L_values=tuple(parse_list(args.L, int)), w1=args.w1, w=args.w,
        k_values=tuple(parse_list(args.k, int)), T_values=tuple(parse_list(args.T, int)),
        estimators=tuple(_estimators(args.estimators, ESTIMATORS)),
        n=data.shape[0], D=data.shape[1], n_queries=queries.shape[0], seed=args.seed,
    )
    report = rerank_eval(data, queries, cfg)
    write_rerank_csv(args.out, report)
    for (L, k, T, e), a in sorted(report.auc.items()):
        print(f"L={L} k={k} T={T} {e}: AUC={a:.4f}")
    frac = np.mean([r[4] for r in report.retrieved])
    print(f"mean retrieved fraction {frac:.4f}")


def cmd_estimate(args):
    x = Sketches.load(args.x)
    y = Sketches.load(args.y)
    if (x.scheme, x.w, x.k, x.n) != (y.scheme, y.w, y.k, y.n):
        raise UsageError("sketch files disagree on scheme, w, k or row count")
    if x.seed != y.seed:
        raise UsageError(f"sketches were drawn with different projection seeds ({x.seed} vs {y.seed})")
    estimators = _estimators(args.estimators, ESTIMATORS)
    if x.scheme == "one_bit" and estimators != ["one_bit"]:
        raise UsageError("1-bit sketches support only the one_bit estimator")
    table = cached_table(float(x.w)) if x.scheme == "two_bit" else None
    cx, cy = x.codes, y.codes
    if x.scheme == "one_bit":
        # sign bits map onto the 2-bit codes 1 (negative) and 2 (positive)
        cx, cy = cx + 1, cy + 1
    raw = pair_cell_counts(cx, cy)
    results = {}
    for e in estimators:
        rho = estimate_from_raw(raw, e, table)
        var = np.array([predicted_variance(e, r, x.k, table) for r in rho])
        results[e] = (rho, np.sqrt(var))
    with open(args.out, "w", newline="") as fh:
        out = csv.writer(fh)
        out.writerow(("pair_id", "estimator", "rho_hat", "predicted_std"))
        for i in range(x.n):
            for e in estimators:
                rho, std = results[e]
                out.writerow([i, e, f"{rho[i]:.10g}", f"{std[i]:.10g}"])
    print(f"wrote {x.n * len(estimators)} estimates to {args.out}")


# ---------------------------------------------------------------- wiring


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="twobit", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def add(name, fn, help_):
        sp = sub.add_parser(name, help=help_)
        sp.set_defaults(func=fn)
        sp.add_argument("--seed", type=int, default=0)
        return sp

    sp = add("tabulate", cmd_tabulate, "precompute a probability table")
    sp.add_argument("--w", type=float, required=True)
    sp.add_argument("--step", type=float, default=1e-3)
    sp.add_argument("--out", required=True)

    sp = add("simulate-mse", cmd_simulate_mse, "empirical MSE against Fisher-predicted variance")
    sp.add_argument("--rho-grid", default="0,0.25,0.5,0.75,0.9,0.95")
    sp.add_argument("--k", type=int, default=200)
    sp.add_argument("--trials", type=int, default=10_000)
    sp.add_argument("--w", type=float, default=0.75)
    sp.add_argument("--estimators", default=",".join(MSE_ESTIMATORS))
    sp.add_argument("--out", required=True)

    sp = add("gap-curves", cmd_gap_curves, "LSH gap of both quantizers over w")
    sp.add_argument("--rho0", default="0.5,0.7,0.9")
    sp.add_argument("--scheme", default=",".join(SCHEMES))
    sp.add_argument("--w-grid", default="geom:0.25:5:200")
    sp.add_argument("--c-grid", default="1.1,1.2,1.5,2")
    sp.add_argument("--out", required=True)

    sp = add("g-curve", cmd_g_curve, "variance-ratio curve at rho = 0")
    sp.add_argument("--w-grid", default="0.3:3:1e-4")
    sp.add_argument("--out", required=True)

    sp = add("synth-data", cmd_synth_data, "write the planted-neighbor dataset")
    sp.add_argument("--n", type=int, default=10_000)
    sp.add_argument("--D", type=int, default=128)
    sp.add_argument("--n-queries", type=int, default=500)
    sp.add_argument("--cluster-size", type=int, default=500)
    sp.add_argument("--out-data", required=True)
    sp.add_argument("--out-queries", required=True)

    sp = add("build-index", cmd_build_index, "build and save an LSH index with sketches")
    sp.add_argument("--data", required=True)
    sp.add_argument("--format", choices=("csv", "raw_f32"))
    sp.add_argument("--n", type=int)
    sp.add_argument("--D", type=int)
    sp.add_argument("--K", type=int, default=10)
    sp.add_argument("--L", type=int, default=50)
    sp.add_argument("--w1", type=float, default=1.5)
    sp.add_argument("--k", type=int, default=200)
    sp.add_argument("--w", type=float, default=0.75)
    sp.add_argument("--out", required=True, help="output prefix; writes PREFIX.index and PREFIX.sketch")

    sp = add("query", cmd_query, "retrieve and re-rank candidates for query vectors")
    sp.add_argument("--index", required=True, help="prefix given to build-index")
    sp.add_argument("--queries", required=True)
    sp.add_argument("--format", choices=("csv", "raw_f32"))
    sp.add_argument("--estimator", default="two_bit_mle")
    sp.add_argument("--top", type=int)
    sp.add_argument("--out", required=True)

    sp = add("rerank-eval", cmd_rerank_eval, "precision-recall of re-ranked LSH candidates")
    sp.add_argument("--data")
    sp.add_argument("--queries")
    sp.add_argument("--format", choices=("csv", "raw_f32"))
    sp.add_argument("--n", type=int, default=10_000)
    sp.add_argument("--D", type=int, default=128)
    sp.add_argument("--n-queries", type=int, default=500)
    sp.add_argument("--K", type=int, default=10)
    sp.add_argument("--L", default="50,100")
    sp.add_argument("--w1", type=float, default=1.5)
    sp.add_argument("--w", type=float, default=0.75)
    sp.add_argument("--k", default="100,200")
    sp.add_argument("--T", default="10,20,50,100")
    sp.add_argument("--estimators", default=",".join(ESTIMATORS))
    sp.add_argument("--out", required=True)

    sp = add("estimate", cmd_estimate, "similarity estimates for row-aligned sketch pairs")
    sp.add_argument("--x", required=True)
    sp.add_argument("--y", required=True)
    sp.add_argument("--estimators", default=",".join(ESTIMATORS))
    sp.add_argument("--out", required=True)
    return p


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        args.func(args)
    except (UsageError, ValueError, KeyError, FileNotFoundError) as exc:
        msg = exc.args[0] if isinstance(exc, KeyError) and exc.args else exc
        print(f"error: {msg}".splitlines()[0], file=sys.stderr)
        return EXIT_INVALID
    except Exception as exc:  # noqa: BLE001 - top-level guard
        print(f"runtime failure: {type(exc).__name__}: {exc}".splitlines()[0], file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
