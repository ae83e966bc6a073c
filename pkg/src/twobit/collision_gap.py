"""Collision probabilities of the two quantizers and the LSH gap they induce.

``uniform`` is floor(x / w); ``offset`` is floor((x + q) / w) with q uniform
on [0, w).  Similarity enters as correlation rho for the uniform scheme and
as squared distance d = 2 (1 - rho) for the offset scheme; the conversion
happens only in ``GapQuery``.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np

from .normal_math import (
    DEFAULT_QUADRATURE,
    QuadratureSpec,
    integrate,
    std_normal_cdf,
    std_normal_pdf,
    std_normal_sf,
)
from .region_model import RHO_MAX, clamp_rho

SCHEMES = ("uniform", "offset")
BAND_MASS_CUTOFF = 1e-14
DEFAULT_W_GRID = np.geomspace(0.25, 5.0, 200)


def _band_count(w: float) -> int:
    """Number of bands [i w, (i+1) w) on the positive axis before the rest is negligible.

    The discarded tail is 1 - Phi(n w) < 1e-14, which bounds the truncation
    error of the series: each discarded term is at most its band mass.
    """
    n = 1
    while std_normal_sf(n * w) >= BAND_MASS_CUTOFF:
        n += 1
    return n


def _edge_points(edges, s):
    """Breakpoints within a few multiples of s around each band edge."""
    pts = [edges]
    if s < 0.25:
        h = s
        while h < 0.5 * (edges[1] - edges[0]):
            pts.append(edges + h)
            pts.append(edges - h)
            h *= 4.0
    out = np.concatenate(pts)
    return out[out > 0]


def collision_prob_uniform(rho: float, w: float, spec: QuadratureSpec = DEFAULT_QUADRATURE,
                           n_bands: int | None = None) -> float:
    """Pr(floor(x / w) == floor(y / w)) for standard normals with correlation rho."""
    if not w > 0:
        raise ValueError(f"bin width must be positive, got {w}")
    rho = clamp_rho(rho)
    s = math.sqrt((1.0 - rho) * (1.0 + rho))
    n = _band_count(w) if n_bands is None else int(n_bands)
    edges = w * np.arange(n + 1)

    def f(z):
        i = np.floor(z / w)
        hi = ((i + 1.0) * w - rho * z) / s
        lo = (i * w - rho * z) / s
        diff = np.where(lo > 0, std_normal_sf(lo) - std_normal_sf(hi),
                        std_normal_cdf(hi) - std_normal_cdf(lo))
        return std_normal_pdf(z) * diff

    total = integrate(f, 0.0, float(edges[-1]), spec, points=_edge_points(edges, s))
    return min(1.0, 2.0 * total)


def collision_prob_offset(d: float, w: float, spec: QuadratureSpec = DEFAULT_QUADRATURE) -> float:
    """Collision probability of the random-offset quantizer at squared distance d."""
    if not w > 0:
        raise ValueError(f"bin width must be positive, got {w}")
    if not 0 <= d <= 4:
        raise ValueError(f"squared distance of unit vectors must lie in [0, 4], got {d}")
    if d == 0:
        return 1.0
    r = math.sqrt(d)

    def f(t):
        return 2.0 / r * std_normal_pdf(t / r) * (1.0 - t / w)

    ladder = []
    h = r
    while h < w:
        ladder.append(h)
        h *= 4.0
    return min(1.0, integrate(f, 0.0, w, spec, points=ladder))


def collision_prob(scheme: str, rho: float, w: float) -> float:
    if scheme == "uniform":
        return collision_prob_uniform(rho, w)
    if scheme == "offset":
        return collision_prob_offset(max(0.0, 2.0 * (1.0 - rho)), w)
    raise ValueError(f"scheme must be one of {SCHEMES}, got {scheme!r}")


@dataclass(frozen=True)
class GapQuery:
    rho0: float
    c: float
    w: float

    def __post_init__(self):
        if not 0 <= self.rho0 < 1:
            raise ValueError(f"target similarity rho0 must be in [0, 1), got {self.rho0}")
        if not self.c > 1:
            raise ValueError(f"approximation factor c must exceed 1, got {self.c}")
        if not self.w > 0:
            raise ValueError(f"bin width must be positive, got {self.w}")
        c_max = math.sqrt(1.0 / (1.0 - self.rho0))
        if self.c > c_max * (1 + 1e-12):
            raise ValueError(f"c={self.c} exceeds the admissible maximum {c_max:.6g} for rho0={self.rho0}")

    @property
    def d0(self) -> float:
        return 2.0 * (1.0 - self.rho0)

    @property
    def d2(self) -> float:
        return self.c * self.c * self.d0

    @property
    def rho2(self) -> float:
        return max(-RHO_MAX, 1.0 - self.d2 / 2.0)


def max_c(rho0: float) -> float:
    return math.sqrt(1.0 / (1.0 - rho0))


@dataclass(frozen=True)
class GapProfile:
    p1: float
    p2: float
    gap: float


def gap(query: GapQuery, scheme: str) -> GapProfile:
    if scheme == "uniform":
        p1 = collision_prob_uniform(query.rho0, query.w)
        p2 = collision_prob_uniform(query.rho2, query.w)
    elif scheme == "offset":
        p1 = collision_prob_offset(query.d0, query.w)
        p2 = collision_prob_offset(min(query.d2, 4.0), query.w)
    else:
        raise ValueError(f"scheme must be one of {SCHEMES}, got {scheme!r}")
    if p1 >= 1.0:
        return GapProfile(p1, p2, 0.0 if p2 < 1.0 else 1.0)
    return GapProfile(p1, p2, math.log(p1) / math.log(p2))


def gap_curve(rho0: float, c: float, scheme: str, w_grid=DEFAULT_W_GRID) -> np.ndarray:
    return np.array([gap(GapQuery(rho0, c, float(w)), scheme).gap for w in w_grid])


def optimal_gap(rho0: float, c: float, scheme: str, w_grid=DEFAULT_W_GRID):
    """(w*, G*) minimizing the gap over the grid; the first minimum wins ties."""
    w_grid = np.asarray(w_grid, dtype=float)
    if w_grid.ndim != 1 or w_grid.size == 0 or np.any(np.diff(w_grid) <= 0):
        raise ValueError("w_grid must be a nonempty ascending sequence")
    curve = gap_curve(rho0, c, scheme, w_grid)
    i = int(np.argmin(curve))
    return float(w_grid[i]), float(curve[i])


GAP_CSV_COLUMNS = ("rho0", "c", "w", "scheme", "p1", "p2", "gap")


def write_gap_csv(path, rows) -> None:
    """Rows are (rho0, c, w, scheme, GapProfile)."""
    with open(path, "w", newline="") as fh:
        out = csv.writer(fh)
        out.writerow(GAP_CSV_COLUMNS)
        for rho0, c, w, scheme, prof in rows:
            out.writerow([f"{rho0:.10g}", f"{c:.10g}", f"{w:.10g}", scheme,
                          f"{prof.p1:.15g}", f"{prof.p2:.15g}", f"{prof.gap:.15g}"])
