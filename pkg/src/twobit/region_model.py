"""Probabilities of the 16 code-pair regions of 2-bit coding.

A projected pair (x, y) is standard bivariate normal with correlation rho.
Each coordinate is coded to {0, 1, 2, 3} by the thresholds -w, 0, w, so the
plane splits into a 4x4 grid of regions.  By symmetry every region reduces
to one of three base regions, (2, 2), (2, 3) and (3, 3), evaluated at
+rho or -rho.
"""

from __future__ import annotations

import json
import math
import struct
import warnings
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path

import numpy as np

from .normal_math import (
    DEFAULT_QUADRATURE,
    TAIL_CUTOFF,
    QuadratureSpec,
    integrate,
    std_normal_cdf,
    std_normal_pdf,
    std_normal_sf,
)

EPS = 1e-8
RHO_MAX = 1.0 - EPS
TWO_PI = 2.0 * math.pi

BASE_REGIONS = ((2, 2), (2, 3), (3, 3))
_BASE_INDEX = {r: i for i, r in enumerate(BASE_REGIONS)}

# region -> (base region, sign of rho at which the base region is evaluated)
SYMMETRY = {
    (2, 2): ((2, 2), 1), (1, 1): ((2, 2), 1),
    (2, 3): ((2, 3), 1), (3, 2): ((2, 3), 1), (0, 1): ((2, 3), 1), (1, 0): ((2, 3), 1),
    (3, 3): ((3, 3), 1), (0, 0): ((3, 3), 1),
    (1, 2): ((2, 2), -1), (2, 1): ((2, 2), -1),
    (0, 2): ((2, 3), -1), (1, 3): ((2, 3), -1), (2, 0): ((2, 3), -1), (3, 1): ((2, 3), -1),
    (0, 3): ((3, 3), -1), (3, 0): ((3, 3), -1),
}


class RhoClampWarning(UserWarning):
    """rho was moved inside [-1 + EPS, 1 - EPS] before evaluation."""


@dataclass(frozen=True)
class RegionId:
    row: int
    col: int

    def __post_init__(self):
        if self.row not in range(4) or self.col not in range(4):
            raise ValueError(f"region indices must be in 0..3, got ({self.row}, {self.col})")

    @property
    def key(self):
        return (self.row, self.col)


def clamp_rho(rho, warn: bool = True):
    """Clip rho into the open interval the closed forms are finite on."""
    arr = np.asarray(rho, dtype=float)
    if not np.all(np.isfinite(arr)):
        raise ValueError("rho must be finite")
    clipped = np.clip(arr, -RHO_MAX, RHO_MAX)
    if warn and np.any(clipped != arr):
        warnings.warn(f"rho clamped to [-{RHO_MAX}, {RHO_MAX}]", RhoClampWarning, stacklevel=3)
    return float(clipped) if clipped.ndim == 0 else clipped


def _check_w(w):
    if not (w > 0 and math.isfinite(w)):
        raise ValueError(f"threshold w must be positive and finite, got {w}")


def _base_key(region):
    region = tuple(region)
    if region not in _BASE_INDEX:
        raise ValueError(f"{region} is not a base region; use one of {BASE_REGIONS}")
    return region


def _cdf_diff(hi, lo):
    """Phi(hi) - Phi(lo) for hi >= lo, using upper tails when both are positive."""
    upper = std_normal_sf(lo) - std_normal_sf(hi)
    lower = std_normal_cdf(hi) - std_normal_cdf(lo)
    return np.where(lo > 0, upper, lower)


def _ladder(s, w, length):
    """Geometric steps from the finest feature scale up to ``length``.

    As |rho| -> 1 the conditional scale s = sqrt(1 - rho^2) shrinks and the
    integrands develop steps of width ~s, and tails that decay on a scale
    ~s^2 / w, at the ends of the integration range; fixed Kronrod nodes
    would step over both.
    """
    h = min(s, s * s / max(w, 1.0)) / 4.0
    steps = []
    while h < length:
        steps.append(h)
        h *= 4.0
    return np.array(steps)


def _edge_ladder(s, w):
    """Breakpoints clustered near both ends of [0, w]."""
    steps = _ladder(s, w, 0.5 * w)
    return np.concatenate([steps, w - steps])


def _p22(rho, w, spec):
    s = math.sqrt((1.0 - rho) * (1.0 + rho))

    def f(x):
        return std_normal_pdf(x) * _cdf_diff((w - rho * x) / s, -rho * x / s)

    return integrate(f, 0.0, w, spec, points=_edge_ladder(s, w))


def _p23(rho, w, spec):
    s = math.sqrt((1.0 - rho) * (1.0 + rho))

    def f(x):
        return std_normal_pdf(x) * std_normal_cdf((rho * x - w) / s)

    return integrate(f, 0.0, w, spec, points=_edge_ladder(s, w))


def _p33(rho, w, spec):
    s = math.sqrt((1.0 - rho) * (1.0 + rho))

    def f(x):
        return std_normal_pdf(x) * std_normal_sf((w - rho * x) / s)

    return integrate(f, w, w + TAIL_CUTOFF, spec, points=w + _ladder(s, w, TAIL_CUTOFF))


# Below this size a probability is recomputed to relative accuracy; the
# absolute quadrature tolerance and the P33 identity (which cancels terms of
# order 1/4) both leave only absolute accuracy near 1e-16.
SMALL_PROB = 1e-6
_RELATIVE_QUADRATURE = QuadratureSpec(absolute_tolerance=1e-300, max_subdivisions=20000,
                                      relative_tolerance=1e-10)


def base_probs(rho: float, w: float, spec: QuadratureSpec = DEFAULT_QUADRATURE):
    """(P22, P23, P33) at a single (rho, w).

    P33 follows from the quadrant identity
    P22 + 2 P23 + P33 = 1/4 + arcsin(rho) / (2 pi) unless it is small, in
    which case it is integrated directly so that tiny values keep their
    relative accuracy (the likelihood divides by them).
    """
    _check_w(w)
    rho = clamp_rho(rho)
    p22 = _p22(rho, w, spec)
    p23 = _p23(rho, w, spec)
    p33 = 0.25 + math.asin(rho) / TWO_PI - p22 - 2.0 * p23
    if p22 < SMALL_PROB:
        p22 = _p22(rho, w, _RELATIVE_QUADRATURE)
    if p23 < SMALL_PROB:
        p23 = _p23(rho, w, _RELATIVE_QUADRATURE)
    if p33 < SMALL_PROB:
        p33 = _p33(rho, w, _RELATIVE_QUADRATURE)
    return (min(max(p22, 0.0), 1.0), min(max(p23, 0.0), 1.0), min(max(p33, 0.0), 1.0))


def base_region_prob(region, rho: float, w: float,
                     spec: QuadratureSpec = DEFAULT_QUADRATURE) -> float:
    region = _base_key(region)
    _check_w(w)
    rho = clamp_rho(rho)
    if region == (2, 2):
        return min(max(_p22(rho, w, spec), 0.0), 1.0)
    if region == (2, 3):
        return min(max(_p23(rho, w, spec), 0.0), 1.0)
    return base_probs(rho, w, spec)[2]


def base_derivatives(rho, w):
    """First and second rho-derivatives of P22, P23, P33 (closed form).

    Vectorized over rho.  Returns two arrays of shape (3, *rho.shape).
    """
    rho = np.asarray(clamp_rho(rho), dtype=float)
    one_m = (1.0 - rho) * (1.0 + rho)
    root = np.sqrt(one_m)
    a = np.exp(-w * w / (2.0 * one_m))
    b = np.exp(-w * w / (1.0 + rho))
    c = 1.0 / (TWO_PI * root)

    d1 = np.stack([
        c * (1.0 - 2.0 * a + b),
        c * (a - b),
        c * b,
    ])

    lead = rho / (TWO_PI * one_m * root)
    a_term = lead * a * (1.0 - w * w / one_m)
    b_term = c * b * (rho / one_m + w * w / (1.0 + rho) ** 2)
    d2 = np.stack([
        lead - 2.0 * a_term + b_term,
        a_term - b_term,
        b_term,
    ])
    return d1, d2


def base_region_d1(region, rho, w):
    _check_w(w)
    d1, _ = base_derivatives(rho, w)
    out = d1[_BASE_INDEX[_base_key(region)]]
    return float(out) if np.ndim(out) == 0 else out


def base_region_d2(region, rho, w):
    _check_w(w)
    _, d2 = base_derivatives(rho, w)
    out = d2[_BASE_INDEX[_base_key(region)]]
    return float(out) if np.ndim(out) == 0 else out


def _as_key(region):
    if isinstance(region, RegionId):
        return region.key
    key = tuple(region)
    RegionId(*key)
    return key


def region_prob(region, rho: float, w: float,
                spec: QuadratureSpec = DEFAULT_QUADRATURE) -> float:
    base, sign = SYMMETRY[_as_key(region)]
    return base_region_prob(base, sign * clamp_rho(rho), w, spec)


def region_d1(region, rho, w):
    base, sign = SYMMETRY[_as_key(region)]
    return sign * base_region_d1(base, sign * clamp_rho(rho), w)


def region_d2(region, rho, w):
    base, sign = SYMMETRY[_as_key(region)]
    return base_region_d2(base, sign * clamp_rho(rho), w)


def all_region_probs(rho: float, w: float, spec: QuadratureSpec = DEFAULT_QUADRATURE):
    """4x4 array of region probabilities; row = code of x, column = code of y."""
    rho = clamp_rho(rho)
    pos = base_probs(rho, w, spec)
    neg = base_probs(-rho, w, spec)
    out = np.empty((4, 4))
    for (i, j), (base, sign) in SYMMETRY.items():
        out[i, j] = (pos if sign > 0 else neg)[_BASE_INDEX[base]]
    return out


# --- lookup table ---------------------------------------------------------

TABLE_MAGIC = b"TBPT"
TABLE_VERSION = 1
_TABLE_HEADER = struct.Struct("<4sHdddI")


def _theta_nodes(grid_step: float):
    top = math.asin(RHO_MAX)
    n = int(math.ceil(2.0 * top / grid_step)) + 1
    theta = np.linspace(-top, top, n)
    rho = np.sin(theta)
    rho[0], rho[-1] = -RHO_MAX, RHO_MAX
    return theta, rho


LOG_INTERP_BELOW = 1e-8


def _hermite(t, y0, m0, y1, m1):
    t2, t3 = t * t, t * t * t
    return ((2 * t3 - 3 * t2 + 1) * y0 + (t3 - 2 * t2 + t) * m0
            + (-2 * t3 + 3 * t2) * y1 + (t3 - t2) * m1)


@dataclass(frozen=True, eq=False)
class ProbabilityTable:
    """Tabulated P, P' and P'' of the three base regions at a fixed w.

    Nodes are uniform in theta = arcsin(rho) with spacing ``grid_step``;
    in that variable the probabilities are smooth up to rho = +-1, so a
    cubic Hermite interpolant (using the stored first derivatives) stays
    accurate across the whole range.  Derivatives at off-node points come
    from the closed forms.
    """

    w: float
    grid_step: float
    rho: np.ndarray
    values: np.ndarray  # (n_nodes, 3 regions, 3 quantities: p, d1, d2)
    eps: float = EPS
    _theta: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        if self.rho.ndim != 1 or self.rho.size < 2 or np.any(np.diff(self.rho) <= 0):
            raise ValueError("rho grid must be strictly ascending with >= 2 nodes")
        if self.values.shape != (self.rho.size, 3, 3):
            raise ValueError(f"values must have shape ({self.rho.size}, 3, 3)")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("table contains non-finite entries")
        object.__setattr__(self, "_theta", np.arcsin(self.rho))
        self.rho.setflags(write=False)
        self.values.setflags(write=False)

    @property
    def n_nodes(self) -> int:
        return self.rho.size

    def probs(self, rho):
        """Interpolated (P22, P23, P33) at rho, shape (3, *rho.shape)."""
        rho = np.asarray(np.clip(rho, -RHO_MAX, RHO_MAX), dtype=float)
        theta = np.arcsin(rho)
        t0 = self._theta[0]
        h = self._theta[1] - self._theta[0]
        idx = np.clip(((theta - t0) / h).astype(np.int64), 0, self.n_nodes - 2)
        left, right = self._theta[idx], self._theta[idx + 1]
        span = right - left
        t = (theta - left) / span
        p0 = self.values[idx, :, 0]
        p1 = self.values[idx + 1, :, 0]
        # dP/dtheta = dP/drho * cos(theta)
        m0 = self.values[idx, :, 1] * np.cos(left)[..., None] * span[..., None]
        m1 = self.values[idx + 1, :, 1] * np.cos(right)[..., None] * span[..., None]
        t = t[..., None]
        p = _hermite(t, p0, m0, p1, m1)
        # tiny tails decay like exp(-c / (1 - rho^2)); interpolate log P there
        # so relative accuracy survives (d log P = dP / P)
        tiny = (np.minimum(p0, p1) < LOG_INTERP_BELOW) & (np.minimum(p0, p1) > 1e-290)
        if np.any(tiny):
            with np.errstate(divide="ignore", invalid="ignore"):
                q = _hermite(t, np.log(p0), m0 / p0, np.log(p1), m1 / p1)
            p = np.where(tiny, np.exp(q), p)
        p = np.where(t == 0.0, p0, np.where(t == 1.0, p1, p))
        p = np.clip(p, 0.0, 1.0)
        return np.moveaxis(p, -1, 0)

    def evaluate(self, rho):
        """(p, d1, d2) for the three base regions, each shape (3, *rho.shape)."""
        rho = np.asarray(np.clip(rho, -RHO_MAX, RHO_MAX), dtype=float)
        d1, d2 = base_derivatives(rho, self.w)
        return self.probs(rho), d1, d2

    def lookup(self, region, rho):
        p, d1, d2 = self.evaluate(rho)
        i = _BASE_INDEX[_base_key(region)]
        if np.ndim(rho) == 0:
            return float(p[i]), float(d1[i]), float(d2[i])
        return p[i], d1[i], d2[i]

    def diagonal_mass(self, rho):
        """Probability that both codes agree: 2 P22 + 2 P33."""
        p = self.probs(rho)
        return 2.0 * (p[0] + p[2])

    # --- persistence ---

    def save(self, path) -> Path:
        """Write the binary table plus a ``.json`` metadata sidecar."""
        path = Path(path)
        header = _TABLE_HEADER.pack(TABLE_MAGIC, TABLE_VERSION, self.w, self.eps,
                                    self.grid_step, self.n_nodes)
        rows = np.concatenate([self.rho[:, None], self.values.reshape(self.n_nodes, 9)], axis=1)
        with open(path, "wb") as fh:
            fh.write(header)
            fh.write(rows.astype("<f8").tobytes(order="C"))
        meta = {
            "format": "twobit-probability-table",
            "version": TABLE_VERSION,
            "w": self.w,
            "eps": self.eps,
            "grid_step": self.grid_step,
            "grid": "uniform in arcsin(rho)",
            "n_nodes": self.n_nodes,
            "columns": ["rho"] + [f"{q}_{r[0]}{r[1]}" for r in BASE_REGIONS for q in ("p", "d1", "d2")],
        }
        sidecar = path.with_name(path.name + ".json")
        sidecar.write_text(json.dumps(meta, indent=2) + "\n")
        return path

    @classmethod
    def load(cls, path) -> "ProbabilityTable":
        raw = Path(path).read_bytes()
        if len(raw) < _TABLE_HEADER.size:
            raise ValueError(f"{path}: truncated table header")
        magic, version, w, eps, step, n = _TABLE_HEADER.unpack_from(raw)
        if magic != TABLE_MAGIC:
            raise ValueError(f"{path}: not a probability table (magic {magic!r})")
        if version != TABLE_VERSION:
            raise ValueError(f"{path}: unsupported table version {version}")
        body = np.frombuffer(raw, dtype="<f8", offset=_TABLE_HEADER.size)
        if body.size != n * 10:
            raise ValueError(f"{path}: expected {n * 10} entries, found {body.size}")
        rows = body.reshape(n, 10).astype(float)
        return cls(w=w, grid_step=step, rho=rows[:, 0].copy(),
                   values=rows[:, 1:].reshape(n, 3, 3).copy(), eps=eps)


def build_table(w: float, grid_step: float = 1e-3,
                spec: QuadratureSpec = DEFAULT_QUADRATURE) -> ProbabilityTable:
    _check_w(w)
    if not (0 < grid_step <= 0.01):
        raise ValueError(f"grid_step must be in (0, 0.01], got {grid_step}")
    _, rho = _theta_nodes(grid_step)
    values = np.empty((rho.size, 3, 3))
    for n, r in enumerate(rho):
        values[n, :, 0] = base_probs(r, w, spec)
    d1, d2 = base_derivatives(rho, w)
    values[:, :, 1] = d1.T
    values[:, :, 2] = d2.T
    return ProbabilityTable(w=float(w), grid_step=float(grid_step), rho=rho, values=values)


@lru_cache(maxsize=16)
def cached_table(w: float, grid_step: float = 1e-3) -> ProbabilityTable:
    """Process-wide table cache, optionally backed by ``$TWOBIT_TABLE_CACHE``."""
    import os

    cache_dir = os.environ.get("TWOBIT_TABLE_CACHE")
    if cache_dir:
        path = Path(cache_dir) / f"table_w{w!r}_step{grid_step!r}.bin"
        if path.exists():
            table = ProbabilityTable.load(path)
            if table.w == w and table.grid_step == grid_step:
                return table
        path.parent.mkdir(parents=True, exist_ok=True)
        table = build_table(w, grid_step)
        table.save(path)
        return table
    return build_table(w, grid_step)
