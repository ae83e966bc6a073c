"""Datasets, ground truth and the experiment drivers behind the CLI."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .coding import (
    Sketches,
    encode_1bit,
    encode_2bit,
    encode_offset,
    encode_uniform,
    group_counts,
    pair_cell_counts,
)
from .estimation import (
    ESTIMATORS,
    MleConfig,
    estimate_2bit_mle_batch,
    estimate_from_raw,
    predicted_variance,
)
from .lsh_engine import (
    IndexConfig,
    SketchStore,
    build_two_stage,
    precision_recall,
    query,
    query_sketch,
    rerank,
)
from .region_model import RHO_MAX, cached_table

# --------------------------------------------------------------- datasets


@dataclass(frozen=True)
class DatasetSpec:
    path: str
    format: str = "csv"
    n: int | None = None
    D: int | None = None
    normalize: bool = True

    def __post_init__(self):
        if self.format not in ("csv", "raw_f32"):
            raise ValueError(f"dataset format must be 'csv' or 'raw_f32', got {self.format!r}")
        if self.format == "raw_f32" and (self.n is None or self.D is None):
            raise ValueError("raw_f32 datasets need both n and D")


def normalize_rows(data) -> np.ndarray:
    data = np.asarray(data, dtype=float)
    norms = np.linalg.norm(data, axis=1)
    zero = np.flatnonzero(norms == 0)
    if zero.size:
        raise ValueError(f"row {int(zero[0])} has zero norm and cannot be normalized")
    return data / norms[:, None]


def _read_csv(path: Path) -> np.ndarray:
    rows = []
    width = None
    with open(path, newline="") as fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            if not row or all(not cell.strip() for cell in row):
                continue
            try:
                vals = [float(cell) for cell in row]
            except ValueError:
                raise ValueError(f"{path}:{lineno}: cannot parse {row!r} as numbers") from None
            if width is None:
                width = len(vals)
            elif len(vals) != width:
                raise ValueError(f"{path}:{lineno}: expected {width} columns, found {len(vals)}")
            rows.append(vals)
    return np.array(rows, dtype=float).reshape(len(rows), width or 0)


def load_dataset(spec: DatasetSpec) -> np.ndarray:
    path = Path(spec.path)
    if not path.exists():
        raise FileNotFoundError(f"dataset {path} does not exist")
    if spec.format == "csv":
        data = _read_csv(path)
    else:
        raw = np.fromfile(path, dtype="<f4")
        if raw.size != spec.n * spec.D:
            raise ValueError(f"{path}: declared n*D = {spec.n}*{spec.D} = {spec.n * spec.D} "
                             f"values but file holds {raw.size}")
        data = raw.reshape(spec.n, spec.D).astype(float)
    if spec.D is not None and data.shape[1] != spec.D:
        raise ValueError(f"{path}: declared D={spec.D} but file has {data.shape[1]} columns")
    if spec.n is not None and data.shape[0] != spec.n:
        raise ValueError(f"{path}: declared n={spec.n} but file has {data.shape[0]} rows")
    bad = np.argwhere(~np.isfinite(data))
    if bad.size:
        raise ValueError(f"{path}: non-finite value at row {int(bad[0, 0])}")
    return normalize_rows(data) if spec.normalize else data


def write_raw_f32(path, data) -> Path:
    path = Path(path)
    np.asarray(data, dtype="<f4").tofile(path)
    return path


def planted_dataset(n: int = 10_000, D: int = 128, n_queries: int = 500,
                    cluster_size: int = 500, seed: int = 0,
                    affinity: tuple[float, float] = (0.75, 0.99)):
    """Unit-norm points grouped around random centers, plus held-out queries.

    A member with affinity a is a * center + sqrt(1 - a^2) * noise, with the
    noise orthogonal to the center, so its correlation with the center is
    exactly a and two members of a cluster correlate at about a_i * a_j.
    Queries are drawn the same way from the dataset's centers.  Row order is
    shuffled so ids carry no similarity information.
    """
    rng = np.random.default_rng(seed)
    n_clusters = max(1, n // cluster_size)
    centers = normalize_rows(rng.standard_normal((n_clusters, D)))

    def members(which):
        a = rng.uniform(*affinity, size=which.size)
        c = centers[which]
        noise = rng.standard_normal((which.size, D))
        noise -= np.sum(noise * c, axis=1, keepdims=True) * c
        noise = normalize_rows(noise)
        return normalize_rows(a[:, None] * c + np.sqrt(1 - a * a)[:, None] * noise)

    data = members(np.arange(n) % n_clusters)
    data = data[rng.permutation(n)]
    queries = members(rng.integers(0, n_clusters, size=n_queries))
    return data, queries


def brute_force_topT(data, q, T: int):
    """Exact top-T ids by inner product, ties to the smaller id, with similarities."""
    data = np.asarray(data, dtype=float)
    if not 1 <= T <= data.shape[0]:
        raise ValueError(f"T must be in [1, n={data.shape[0]}], got {T}")
    sims = data @ np.asarray(q, dtype=float)
    order = np.lexsort((np.arange(sims.size), -sims))[:T]
    return order, sims[order]


# --------------------------------------------------------------- simulation

CODE_SCHEMES = ("two_bit", "one_bit", "uniform", "offset", "raw")


def bivariate_normal_pairs(rho: float, shape, rng: np.random.Generator):
    if abs(rho) > RHO_MAX:
        raise ValueError(f"|rho| must be at most {RHO_MAX}")
    x = rng.standard_normal(shape)
    y = rho * x + math.sqrt((1 - rho) * (1 + rho)) * rng.standard_normal(shape)
    return x, y


def synth_pairs(rho: float, k: int, trials: int, seed: int,
                scheme: str = "two_bit", w: float = 0.75):
    """``trials`` x ``k`` correlated pairs, coded by ``scheme``.

    The offset scheme draws a fresh offset per pair, shared by both members.
    """
    if scheme not in CODE_SCHEMES:
        raise ValueError(f"scheme must be one of {CODE_SCHEMES}, got {scheme!r}")
    rng = np.random.default_rng(seed)
    x, y = bivariate_normal_pairs(rho, (trials, k), rng)
    if scheme == "two_bit":
        return encode_2bit(x, w), encode_2bit(y, w)
    if scheme == "one_bit":
        return encode_1bit(x), encode_1bit(y)
    if scheme == "uniform":
        return encode_uniform(x, w), encode_uniform(y, w)
    if scheme == "offset":
        q = rng.uniform(0.0, w, size=(trials, k))
        q = np.minimum(q, np.nextafter(w, 0))
        return encode_offset(x, w, q), encode_offset(y, w, q)
    return x, y


MSE_ESTIMATORS = ("one_bit", "two_bit_linear", "two_bit_mle", "two_bit_mle_five")


def _estimates(raw16, estimator, table, mle: MleConfig):
    if estimator == "two_bit_mle_five":
        cfg = MleConfig("five_cell", mle.tolerance, mle.max_iterations, mle.rho_bounds)
        return estimate_2bit_mle_batch(group_counts(raw16), table, cfg).rho_hat
    if estimator not in MSE_ESTIMATORS:
        raise ValueError(f"unknown estimator {estimator!r}; choose from {MSE_ESTIMATORS}")
    return estimate_from_raw(raw16, estimator, table, mle)


def simulate_estimates(rho: float, k: int, trials: int, w: float, seed: int,
                       estimators=MSE_ESTIMATORS, mle: MleConfig = MleConfig(),
                       chunk: int = 2000) -> dict:
    """Estimates from ``trials`` independent sets of k coded pairs.

    Trials are simulated in fixed-size chunks, each seeded from (seed, chunk
    index), so results do not depend on how the work is split.
    """
    if trials < 1:
        raise ValueError("trials must be >= 1")
    if k < 1:
        raise ValueError("k must be >= 1")
    table = cached_table(float(w))
    out = {e: [] for e in estimators}
    seeds = np.random.SeedSequence(seed).spawn(-(-trials // chunk))
    for c, ss in enumerate(seeds):
        m = min(chunk, trials - c * chunk)
        rng = np.random.default_rng(ss)
        x, y = bivariate_normal_pairs(rho, (m, k), rng)
        raw = pair_cell_counts(encode_2bit(x, w), encode_2bit(y, w))
        for e in estimators:
            out[e].append(np.atleast_1d(_estimates(raw, e, table, mle)))
    return {e: np.concatenate(v) for e, v in out.items()}


def simulate_mse(rho_grid, k: int, trials: int, w: float = 0.75, seed: int = 0,
                 estimators=MSE_ESTIMATORS, mle: MleConfig = MleConfig()):
    """Rows (rho, estimator, empirical_mse, fisher_predicted_var)."""
    table = cached_table(float(w))
    rows = []
    for i, rho in enumerate(rho_grid):
        est = simulate_estimates(float(rho), k, trials, w, seed * 1_000_003 + i, estimators, mle)
        for e in estimators:
            mse = float(np.mean((est[e] - rho) ** 2))
            rows.append((float(rho), e, mse, float(predicted_variance(e, rho, k, table))))
    return rows


MSE_CSV_COLUMNS = ("rho", "estimator", "empirical_mse", "fisher_predicted_var")


def write_mse_csv(path, rows) -> None:
    with open(path, "w", newline="") as fh:
        out = csv.writer(fh)
        out.writerow(MSE_CSV_COLUMNS)
        for rho, e, mse, var in rows:
            out.writerow([f"{rho:.10g}", e, f"{mse:.10g}", f"{var:.10g}"])


# --------------------------------------------------------------- re-ranking


@dataclass(frozen=True)
class ExperimentConfig:
    K: int = 10
    L_values: tuple = (50, 100)
    w1: float = 1.5
    w: float = 0.75
    k_values: tuple = (100, 200)
    T_values: tuple = (10, 20, 50, 100)
    estimators: tuple = ESTIMATORS
    n: int = 10_000
    D: int = 128
    n_queries: int = 500
    trials: int = 1
    seed: int = 0
    mle: MleConfig = field(default_factory=MleConfig)

    def __post_init__(self):
        if not (self.w > 0 and self.w1 > 0):
            raise ValueError("thresholds w and w1 must be positive")
        if any(T < 1 or T > self.n - 1 for T in self.T_values):
            raise ValueError(f"every T must lie in [1, n-1 = {self.n - 1}]")
        if any(k < 1 or k > self.K * L for k in self.k_values for L in self.L_values):
            raise ValueError("sketch size k must be in [1, K*L]")
        unknown = set(self.estimators) - set(ESTIMATORS)
        if unknown:
            raise ValueError(f"unknown estimators {sorted(unknown)}")
        if self.n_queries < 1 or self.trials < 1:
            raise ValueError("n_queries and trials must be >= 1")


def average_curves(curves, length: int | None = None) -> np.ndarray:
    """Point-wise mean of per-query (precision, recall) curves at each m.

    A list shorter than m contributes its full-list values: the top-m of a
    list with fewer than m entries is the whole list.  An empty candidate
    list contributes (0, 0).
    """
    length = length or max((c.shape[0] for c in curves), default=0)
    acc = np.zeros((length, 2))
    for c in curves:
        if c.shape[0] == 0:
            continue
        acc[:c.shape[0]] += c
        acc[c.shape[0]:] += c[-1]
    return acc / max(len(curves), 1)


def pr_auc(curve) -> float:
    """Area under precision as a function of recall (trapezoid), from recall 0."""
    if curve.shape[0] == 0:
        return 0.0
    p = np.concatenate([[curve[0, 0]], curve[:, 0]])
    r = np.concatenate([[0.0], curve[:, 1]])
    return float(np.sum(0.5 * (p[1:] + p[:-1]) * np.diff(r)))


@dataclass
class RerankReport:
    curves: dict           # (L, k, T, estimator) -> (M, 2) averaged curve
    auc: dict              # (L, k, T, estimator) -> float
    retrieved: list        # rows (query, L, k, n_candidates, fraction)


def rerank_eval(data, queries, cfg: ExperimentConfig) -> RerankReport:
    data = np.asarray(data, dtype=float)
    queries = np.atleast_2d(queries)
    n = data.shape[0]
    table = cached_table(float(cfg.w))
    T_max = max(cfg.T_values)
    truth = [brute_force_topT(data, q, T_max)[0] for q in queries]

    curves, aucs, retrieved = {}, {}, []
    for L in cfg.L_values:
        k_max = max(cfg.k_values)
        index, store_max = build_two_stage(data, IndexConfig(cfg.K, L, cfg.w1, cfg.seed), k_max, cfg.w)
        cand = [query(index, q) for q in queries]
        q_codes = [query_sketch(index, q, k_max, cfg.w) for q in queries]
        for k in cfg.k_values:
            store = SketchStore(Sketches("two_bit", cfg.w, cfg.seed, store_max.sketches.codes[:, :k]))
            per = {(T, e): [] for T in cfg.T_values for e in cfg.estimators}
            for qi, (ids, codes) in enumerate(zip(cand, q_codes)):
                retrieved.append((qi, L, k, int(ids.size), ids.size / n))
                for e in cfg.estimators:
                    ranked, _ = rerank(ids, codes[:k], store, e, table, cfg.mle)
                    for T in cfg.T_values:
                        per[(T, e)].append(precision_recall(ranked, truth[qi][:T]))
            length = max((c.size for c in cand), default=0)
            for (T, e), cs in per.items():
                avg = average_curves(cs, length)
                curves[(L, k, T, e)] = avg
                aucs[(L, k, T, e)] = pr_auc(avg)
    return RerankReport(curves, aucs, retrieved)


PR_CSV_COLUMNS = ("T", "m", "precision", "recall", "estimator", "L", "k")
RETRIEVED_CSV_COLUMNS = ("query", "L", "k", "n_candidates", "fraction")


def write_rerank_csv(path, report: RerankReport) -> Path:
    """Precision-recall rows to ``path`` and per-query retrieval to ``<path>.retrieved.csv``."""
    path = Path(path)
    with open(path, "w", newline="") as fh:
        out = csv.writer(fh)
        out.writerow(PR_CSV_COLUMNS)
        for (L, k, T, e), curve in sorted(report.curves.items(), key=lambda kv: (kv[0][0], kv[0][1], kv[0][2], kv[0][3])):
            for m, (p, r) in enumerate(curve, start=1):
                out.writerow([T, m, f"{p:.10g}", f"{r:.10g}", e, L, k])
    side = path.with_name(path.name + ".retrieved.csv")
    with open(side, "w", newline="") as fh:
        out = csv.writer(fh)
        out.writerow(RETRIEVED_CSV_COLUMNS)
        for qi, L, k, nc, frac in report.retrieved:
            out.writerow([qi, L, k, nc, f"{frac:.10g}"])
    return path
