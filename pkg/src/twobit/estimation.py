"""Similarity estimators for 1-bit and 2-bit coded random projections.

Three estimators are provided:

* ``one_bit``: closed form from the fraction of sign agreements.
* ``two_bit_linear``: inverts the probability that the two codes are equal.
* ``two_bit_mle``: maximizes the multinomial likelihood of the six grouped
  cells (or five, with the anti-diagonal corners merged) by safeguarded
  Newton iteration on a ``ProbabilityTable``.

Batch functions operate on arrays of counts and are what the simulation and
re-ranking drivers use; the scalar functions wrap them.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .coding import CellCounts
from .normal_math import std_normal_cdf, std_normal_sf
from .region_model import RHO_MAX, ProbabilityTable, base_derivatives, base_probs, clamp_rho

LOG_FLOOR = 1e-300

# Grouped-cell probability as a combination of the six components
# [P22(r), P23(r), P33(r), P22(-r), P23(-r), P33(-r)], with cell multiplicities.
_SIX_CELL = np.diag([2.0, 4.0, 2.0, 2.0, 4.0, 2.0])
_FIVE_CELL = np.array([
    [2.0, 0, 0, 0, 0, 0],
    [0, 4.0, 0, 0, 0, 0],
    [0, 0, 2.0, 0, 0, 0],
    [0, 0, 0, 2.0, 0, 0],
    [0, 0, 0, 0, 4.0, 2.0],
])
# how the six observed counts merge into each mode's cells
_MERGE = {
    "six_cell": np.eye(6, dtype=np.int64),
    "five_cell": np.array([
        [1, 0, 0, 0, 0],
        [0, 1, 0, 0, 0],
        [0, 0, 1, 0, 0],
        [0, 0, 0, 1, 0],
        [0, 0, 0, 0, 1],
        [0, 0, 0, 0, 1],
    ], dtype=np.int64),
}
_MIX = {"six_cell": _SIX_CELL, "five_cell": _FIVE_CELL}


@dataclass(frozen=True)
class MleConfig:
    mode: str = "six_cell"
    tolerance: float = 1e-6
    max_iterations: int = 50
    rho_bounds: tuple[float, float] = (-RHO_MAX, RHO_MAX)

    def __post_init__(self):
        if self.mode not in _MIX:
            raise ValueError(f"mode must be 'six_cell' or 'five_cell', got {self.mode!r}")
        if not self.tolerance > 0:
            raise ValueError("tolerance must be positive")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")
        lo, hi = self.rho_bounds
        if not -RHO_MAX <= lo < hi <= RHO_MAX:
            raise ValueError(f"rho_bounds must lie inside [-{RHO_MAX}, {RHO_MAX}]")


@dataclass(frozen=True)
class EstimateResult:
    rho_hat: float
    iterations: int = 0
    converged: bool = True
    predicted_variance: float | None = None
    clamped: bool = False


@dataclass(frozen=True, eq=False)
class BatchEstimate:
    rho_hat: np.ndarray
    iterations: np.ndarray
    converged: np.ndarray
    clamped: np.ndarray

    def __len__(self):
        return self.rho_hat.size

    def __getitem__(self, i) -> EstimateResult:
        return EstimateResult(float(self.rho_hat[i]), int(self.iterations[i]),
                              bool(self.converged[i]), None, bool(self.clamped[i]))


# ---------------------------------------------------------------- 1-bit


def estimate_1bit(n_same_sign, k):
    """rho = cos(pi * (1 - n_same_sign / k)), clipped to the open interval."""
    n = np.asarray(n_same_sign, dtype=float)
    k = np.asarray(k, dtype=float)
    if np.any(k < 1):
        raise ValueError("k must be >= 1")
    if np.any(n < 0) or np.any(n > k):
        raise ValueError("n_same_sign must lie in [0, k]")
    rho = np.clip(np.cos(np.pi * (1.0 - n / k)), -RHO_MAX, RHO_MAX)
    return float(rho) if rho.ndim == 0 else rho


def fisher_info_1bit(rho):
    """Per-projection Fisher information of the sign-agreement count."""
    rho = np.asarray(clamp_rho(rho), dtype=float)
    a = np.arcsin(rho) / (2.0 * math.pi)
    out = 2.0 / (4.0 * math.pi ** 2 * (1.0 - rho) * (1.0 + rho)) * (1.0 / (0.25 + a) + 1.0 / (0.25 - a))
    return float(out) if out.ndim == 0 else out


# ---------------------------------------------------------------- 2-bit linear


def estimate_2bit_linear_batch(n_diagonal, k, table: ProbabilityTable, iterations: int = 60):
    """Solve 2 P22(rho) + 2 P33(rho) = n_diagonal / k by vectorized bisection.

    The left side increases in rho, so bisection on [-1 + eps, 1 - eps] is
    exact up to the table interpolation.  Fractions outside the attainable
    range are clamped to the nearest bound and flagged.
    """
    frac = np.asarray(n_diagonal, dtype=float) / np.asarray(k, dtype=float)
    frac = np.atleast_1d(frac)
    lo = np.full(frac.shape, -RHO_MAX)
    hi = np.full(frac.shape, RHO_MAX)
    d_lo = table.diagonal_mass(lo[:1])[0]
    d_hi = table.diagonal_mass(hi[:1])[0]
    below = frac <= d_lo
    above = frac >= d_hi
    for _ in range(iterations):
        mid = 0.5 * (lo + hi)
        up = table.diagonal_mass(mid) < frac
        lo = np.where(up, mid, lo)
        hi = np.where(up, hi, mid)
    rho = 0.5 * (lo + hi)
    rho = np.where(below, -RHO_MAX, np.where(above, RHO_MAX, rho))
    n = rho.size
    return BatchEstimate(rho, np.full(n, iterations), np.ones(n, bool), below | above)


def estimate_2bit_linear(counts: CellCounts, table: ProbabilityTable) -> EstimateResult:
    if counts.n_diagonal is None:
        raise ValueError("the linear estimator needs the exact-diagonal count n_diagonal")
    if counts.total < 1:
        raise ValueError("need at least one observation")
    res = estimate_2bit_linear_batch([counts.n_diagonal], counts.total, table)[0]
    var = linear_variance(res.rho_hat, table) / counts.total
    return EstimateResult(res.rho_hat, res.iterations, res.converged, var, res.clamped)


def linear_variance(rho, table: ProbabilityTable):
    """Per-projection asymptotic variance of the linear estimator (delta method)."""
    rho = np.asarray(rho, dtype=float)
    d = table.diagonal_mass(rho)
    d1, _ = base_derivatives(rho, table.w)
    slope = 2.0 * (d1[0] + d1[2])
    out = d * (1.0 - d) / slope ** 2
    return float(out) if out.ndim == 0 else out


# ---------------------------------------------------------------- 2-bit MLE


def _components(table: ProbabilityTable, rho):
    """Six component probabilities and their rho-derivatives, each (6, m)."""
    p_pos, d1_pos, d2_pos = table.evaluate(rho)
    p_neg, d1_neg, d2_neg = table.evaluate(-rho)
    return (np.concatenate([p_pos, p_neg]),
            np.concatenate([d1_pos, -d1_neg]),
            np.concatenate([d2_pos, d2_neg]))


def log_likelihood(counts, rho, table: ProbabilityTable, mode: str = "six_cell", order: int = 2):
    """l(rho) and, up to ``order``, its first two derivatives.

    ``counts`` is (m, 6) in ``CELL_NAMES`` order and ``rho`` has shape (m,).
    Empty cells contribute nothing; probabilities are floored at 1e-300.
    """
    mix = _MIX[mode]
    n = np.asarray(counts, dtype=float) @ _MERGE[mode]
    rho = np.asarray(rho, dtype=float)
    p, d1, d2 = _components(table, rho)
    q_raw = (mix @ p).T
    q = np.maximum(q_raw, LOG_FLOOR)
    occupied = n > 0
    ll = np.sum(np.where(occupied, n * np.log(q), 0.0), axis=1)
    if order == 0:
        return ll
    # An occupied cell whose probability underflowed only happens near
    # rho = +-1, at the end where that cell vanishes; push back inward.
    vanished = np.any(occupied & (q_raw <= LOG_FLOOR), axis=1)
    inward = np.where(rho > 0, -np.inf, np.inf)
    with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
        ratio = (mix @ d1).T / q
        score = np.sum(np.where(occupied, n * ratio, 0.0), axis=1)
        score = np.where(vanished, inward, score)
        if order == 1:
            return ll, score
        curv = np.sum(np.where(occupied, n * ((mix @ d2).T / q - ratio * ratio), 0.0), axis=1)
        curv = np.where(vanished | ~np.isfinite(curv), -np.inf, curv)
    return ll, score, curv


def one_bit_init(counts) -> np.ndarray:
    """1-bit estimate from the sign information inside 2-bit counts."""
    counts = np.asarray(counts)
    k = counts.sum(axis=1)
    same = counts[:, :3].sum(axis=1)
    return estimate_1bit(same, k)


def estimate_2bit_mle_batch(counts, table: ProbabilityTable,
                            config: MleConfig = MleConfig()) -> BatchEstimate:
    """Vectorized safeguarded Newton maximization of the grouped likelihood.

    For each row a bracket [lo, hi] with l'(lo) > 0 > l'(hi) is kept.  A
    Newton step is taken when l'' < 0 and the step lands strictly inside the
    bracket; otherwise the bracket is bisected.  When l' does not change sign
    over the bounds the maximizer sits on a bound and is returned clamped.
    """
    counts = np.atleast_2d(np.asarray(counts, dtype=np.int64))
    if counts.shape[1] != 6:
        raise ValueError("counts must have six columns")
    if np.any(counts < 0):
        raise ValueError("cell counts must be nonnegative")
    if np.any(counts.sum(axis=1) < 1):
        raise ValueError("every row needs at least one observation")
    m = counts.shape[0]
    lo_b, hi_b = config.rho_bounds
    mode = config.mode

    rho0 = np.clip(one_bit_init(counts), lo_b, hi_b)
    l0, g0, _ = log_likelihood(counts, rho0, table, mode)
    _, g_lo = log_likelihood(counts, np.full(m, lo_b), table, mode, order=1)
    l_hi, g_hi = log_likelihood(counts, np.full(m, hi_b), table, mode, order=1)

    rho = rho0.copy()
    iterations = np.zeros(m, dtype=np.int64)
    converged = np.abs(g0) <= config.tolerance
    clamped = np.zeros(m, dtype=bool)

    # l' >= 0 at the top: the maximum over the bounds is at the top, unless
    # l' <= 0 at the bottom as well and the bottom is higher.
    l_lo = log_likelihood(counts, np.full(m, lo_b), table, mode, order=0)
    top = (g_hi >= 0) & ~converged
    bottom = (g_lo <= 0) & ~converged
    both = top & bottom
    pick_top = top & (~both | (l_hi >= l_lo))
    pick_bottom = bottom & ~pick_top
    rho[pick_top] = hi_b
    rho[pick_bottom] = lo_b
    clamped |= pick_top | pick_bottom

    lo = np.where(g0 > 0, rho0, lo_b)
    hi = np.where(g0 > 0, hi_b, rho0)
    g = g0.copy()
    h = log_likelihood(counts, rho0, table, mode)[2]
    tiny = 4.0 * np.finfo(float).eps
    active = ~(converged | clamped)
    while np.any(active):
        idx = np.flatnonzero(active)
        with np.errstate(divide="ignore", invalid="ignore"):
            newton = rho[idx] - g[idx] / h[idx]
        inside = (h[idx] < 0) & (newton > lo[idx]) & (newton < hi[idx])
        rho[idx] = np.where(inside, newton, 0.5 * (lo[idx] + hi[idx]))
        iterations[idx] += 1

        _, g_i, h_i = log_likelihood(counts[idx], rho[idx], table, mode)
        g[idx], h[idx] = g_i, h_i
        pos = g_i > 0
        lo[idx] = np.where(pos, rho[idx], lo[idx])
        hi[idx] = np.where(pos, hi[idx], rho[idx])
        done = (np.abs(g_i) <= config.tolerance) | (hi[idx] - lo[idx] <= tiny)
        converged[idx[done]] = True
        active[idx[done]] = False
        active &= iterations < config.max_iterations

    # never return something worse than the initializer
    l_end = log_likelihood(counts, rho, table, mode, order=0)
    worse = l_end < l0
    rho[worse] = rho0[worse]
    converged[worse] = False
    return BatchEstimate(rho, iterations, converged, clamped)


def estimate_2bit_mle(counts: CellCounts, table: ProbabilityTable,
                      config: MleConfig = MleConfig()) -> EstimateResult:
    if counts.total < 1:
        raise ValueError("need at least one observation")
    res = estimate_2bit_mle_batch(counts.as_array()[None, :], table, config)[0]
    info = fisher_info_2bit(res.rho_hat, table.w, mode=config.mode, table=table)
    var = 1.0 / (counts.total * info) if info > 0 else None
    return EstimateResult(res.rho_hat, res.iterations, res.converged, var, res.clamped)


# ---------------------------------------------------------------- Fisher information


def fisher_info_2bit(rho, w: float, mode: str = "six_cell", table: ProbabilityTable | None = None):
    """Per-projection Fisher information of the grouped 2-bit likelihood.

    In six-cell mode this is 2A with A the sum of (P')^2 / P terms over the
    base regions at +rho and -rho, the pair multiplicities included.  Exact
    quadrature is used unless a table is supplied.
    """
    if not w > 0:
        raise ValueError("w must be positive")
    mix = _MIX[mode]
    rho = np.atleast_1d(np.asarray(clamp_rho(rho), dtype=float))
    if table is not None:
        if table.w != w:
            raise ValueError(f"table was built for w={table.w}, not {w}")
        p, d1, _ = _components(table, rho)
    else:
        p = np.array([base_probs(r, w) + base_probs(-r, w) for r in rho]).T
        d_pos, _ = base_derivatives(rho, w)
        d_neg, _ = base_derivatives(-rho, w)
        d1 = np.concatenate([d_pos, -d_neg])
    q = mix @ p
    dq = mix @ d1
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(q > 0, dq * dq / q, 0.0)
    out = terms.sum(axis=0)
    return float(out[0]) if out.size == 1 else out


def variance_ratio(rho, w: float, mode: str = "six_cell"):
    """Variance reduction of the 2-bit MLE over the 1-bit estimator."""
    return fisher_info_2bit(rho, w, mode) / fisher_info_1bit(rho)


def g_function(w):
    """sqrt of the variance ratio at rho = 0, in closed form."""
    w = np.asarray(w, dtype=float)
    if np.any(w <= 0):
        raise ValueError("w must be positive")
    half_mass = std_normal_cdf(w) - 0.5
    tail = std_normal_sf(w)
    out = 0.5 * (np.expm1(-0.5 * w * w) ** 2 / half_mass + np.exp(-w * w) / tail)
    return float(out) if out.ndim == 0 else out


def predicted_variance(estimator: str, rho, k: int, table: ProbabilityTable):
    """Asymptotic variance of an estimator at rho with k projections."""
    if estimator == "one_bit":
        return 1.0 / (k * fisher_info_1bit(rho))
    if estimator == "two_bit_linear":
        return linear_variance(rho, table) / k
    if estimator in ("two_bit_mle", "two_bit_mle_five"):
        mode = "five_cell" if estimator.endswith("five") else "six_cell"
        return 1.0 / (k * fisher_info_2bit(rho, table.w, mode=mode, table=table))
    raise ValueError(f"unknown estimator {estimator!r}")


ESTIMATORS = ("one_bit", "two_bit_linear", "two_bit_mle")


def estimate_from_raw(raw16, estimator: str, table: ProbabilityTable,
                      config: MleConfig = MleConfig()) -> np.ndarray:
    """Estimates for (m, 16) raw cell counts under the named estimator."""
    from .coding import diagonal_counts, group_counts, same_sign_counts

    raw16 = np.atleast_2d(raw16)
    k = raw16.sum(axis=1)
    if estimator == "one_bit":
        return np.atleast_1d(estimate_1bit(same_sign_counts(raw16), k))
    if estimator == "two_bit_linear":
        return estimate_2bit_linear_batch(diagonal_counts(raw16), k, table).rho_hat
    if estimator == "two_bit_mle":
        return estimate_2bit_mle_batch(group_counts(raw16), table, config).rho_hat
    raise ValueError(f"unknown estimator {estimator!r}; choose from {ESTIMATORS}")
