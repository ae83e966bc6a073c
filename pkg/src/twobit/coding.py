"""Random projections and the coders applied to projected values.

Coders are vectorized over numpy arrays.  Tie conventions: the 2-bit and
1-bit coders send boundary values (0, +-w) to the lower code; the two
floor-based quantizers follow ``floor`` exactly.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .region_model import SYMMETRY

# ---------------------------------------------------------------- projections


@dataclass(frozen=True)
class ProjectionSpec:
    k: int
    seed: int
    D: int

    def __post_init__(self):
        if self.k < 1:
            raise ValueError(f"k must be >= 1, got {self.k}")
        if self.D < 1:
            raise ValueError(f"D must be >= 1, got {self.D}")
        if not 0 <= self.seed < 2**64:
            raise ValueError("seed must fit in an unsigned 64-bit integer")


def projection_column(seed: int, column: int, D: int) -> np.ndarray:
    """Column ``column`` of the projection matrix.

    Each column has its own Philox counter stream keyed by (seed, column); the
    row index is the position in that stream.  Columns can therefore be
    generated independently and in any order.
    """
    bitgen = np.random.Philox(np.random.SeedSequence([seed, column]))
    return np.random.Generator(bitgen).standard_normal(D)


def projection_matrix(spec: ProjectionSpec, start: int = 0) -> np.ndarray:
    """D x k matrix of i.i.d. N(0, 1) entries (columns ``start .. start+k-1``)."""
    R = np.empty((spec.D, spec.k))
    for j in range(spec.k):
        R[:, j] = projection_column(spec.seed, start + j, spec.D)
    return R


def project(data, spec: ProjectionSpec) -> np.ndarray:
    data = np.asarray(data, dtype=float)
    if data.ndim == 1:
        data = data[None, :]
    if data.ndim != 2 or data.shape[1] != spec.D:
        raise ValueError(f"data has dimension {data.shape[-1]}, projection expects D={spec.D}")
    return data @ projection_matrix(spec)


# --------------------------------------------------------------------- coders


def _check_w(w):
    if not w > 0:
        raise ValueError(f"bin width / threshold must be positive, got {w}")


def encode_2bit(x, w: float):
    """0: x <= -w, 1: -w < x <= 0, 2: 0 < x <= w, 3: x > w."""
    _check_w(w)
    x = np.asarray(x, dtype=float)
    code = (x > -w).astype(np.uint8) + (x > 0) + (x > w)
    return int(code) if code.ndim == 0 else code


def encode_1bit(x):
    x = np.asarray(x, dtype=float)
    bit = (x > 0).astype(np.uint8)
    return int(bit) if bit.ndim == 0 else bit


def encode_uniform(x, w: float):
    """Uniform quantization without offset: floor(x / w)."""
    _check_w(w)
    out = np.floor(np.asarray(x, dtype=float) / w).astype(np.int64)
    return int(out) if out.ndim == 0 else out


def encode_offset(x, w: float, q):
    """Windowed quantization with random offset: floor((x + q) / w), 0 <= q < w."""
    _check_w(w)
    q = np.asarray(q, dtype=float)
    if np.any(q < 0) or np.any(q >= w):
        raise ValueError(f"offset q must lie in [0, w) = [0, {w})")
    out = np.floor((np.asarray(x, dtype=float) + q) / w).astype(np.int64)
    return int(out) if out.ndim == 0 else out


# ---------------------------------------------------------------- cell counts

# Order of the six likelihood cells; each is a base region at +rho or -rho.
CELL_GROUPS = (((2, 2), 1), ((2, 3), 1), ((3, 3), 1),
               ((2, 2), -1), ((2, 3), -1), ((3, 3), -1))
CELL_NAMES = ("n_diag_inner", "n_adj_same", "n_diag_outer",
              "n_diag_inner_neg", "n_adj_opp", "n_diag_outer_neg")

# 16 -> 6 grouping matrix over flattened 4x4 cells (index 4 * code_x + code_y)
GROUP_MATRIX = np.zeros((16, 6), dtype=np.int64)
for (_i, _j), _group in SYMMETRY.items():
    GROUP_MATRIX[4 * _i + _j, CELL_GROUPS.index(_group)] = 1
DIAGONAL_CELLS = np.array([0, 5, 10, 15])
# codes {2, 3} carry a positive sign
SAME_SIGN_CELLS = np.array([4 * i + j for i in range(4) for j in range(4) if (i >= 2) == (j >= 2)])


@dataclass(frozen=True)
class CellCounts:
    """Grouped 2-bit contingency counts for k paired codes.

    ``n_diagonal`` is the exact-diagonal count k00 + k11 + k22 + k33 used by
    the linear estimator; it is not a function of the six groups.
    ``n_same_sign`` counts pairs whose signs agree, for the 1-bit
    initializer.
    """

    n_diag_inner: int
    n_adj_same: int
    n_diag_outer: int
    n_diag_inner_neg: int
    n_adj_opp: int
    n_diag_outer_neg: int
    n_diagonal: int | None = None

    def __post_init__(self):
        counts = self.as_array()
        if np.any(counts < 0):
            raise ValueError("cell counts must be nonnegative")
        if self.n_diagonal is not None:
            upper = self.n_diag_inner + self.n_diag_outer
            if not 0 <= self.n_diagonal <= upper:
                raise ValueError(
                    f"n_diagonal={self.n_diagonal} must be within [0, n_diag_inner + n_diag_outer = {upper}]")

    @classmethod
    def from_table(cls, table) -> "CellCounts":
        table = np.asarray(table, dtype=np.int64).reshape(16)
        six = table @ GROUP_MATRIX
        return cls(*(int(v) for v in six), n_diagonal=int(table[DIAGONAL_CELLS].sum()))

    def as_array(self) -> np.ndarray:
        return np.array([self.n_diag_inner, self.n_adj_same, self.n_diag_outer,
                         self.n_diag_inner_neg, self.n_adj_opp, self.n_diag_outer_neg],
                        dtype=np.int64)

    @property
    def total(self) -> int:
        return int(self.as_array().sum())

    @property
    def n_same_sign(self) -> int:
        return self.n_diag_inner + self.n_adj_same + self.n_diag_outer


def cell_table(codes_x, codes_y) -> np.ndarray:
    """Raw 4x4 counts of code pairs."""
    cx = np.asarray(codes_x, dtype=np.int64)
    cy = np.asarray(codes_y, dtype=np.int64)
    if cx.shape != cy.shape:
        raise ValueError(f"code sequences differ in length: {cx.shape} vs {cy.shape}")
    if cx.size and (cx.min() < 0 or cx.max() > 3 or cy.min() < 0 or cy.max() > 3):
        raise ValueError("2-bit codes must be in 0..3")
    return np.bincount(4 * cx.ravel() + cy.ravel(), minlength=16).reshape(4, 4)


def tally_cells(codes_x, codes_y) -> CellCounts:
    return CellCounts.from_table(cell_table(codes_x, codes_y))


def tally_cells_batch(query_codes, candidate_codes) -> np.ndarray:
    """(m, 16) raw cell counts of one query against m candidate code rows."""
    q = np.asarray(query_codes, dtype=np.int64)
    c = np.asarray(candidate_codes, dtype=np.int64)
    if c.ndim == 1:
        c = c[None, :]
    if c.shape[1] != q.shape[0]:
        raise ValueError(f"query has {q.shape[0]} codes, candidates have {c.shape[1]}")
    m = c.shape[0]
    idx = 4 * q[None, :] + c + 16 * np.arange(m)[:, None]
    return np.bincount(idx.ravel(), minlength=16 * m).reshape(m, 16)


def pair_cell_counts(codes_x, codes_y) -> np.ndarray:
    """(n, 16) raw cell counts for n paired code rows (each of length k)."""
    cx = np.asarray(codes_x, dtype=np.int64)
    cy = np.asarray(codes_y, dtype=np.int64)
    if cx.shape != cy.shape or cx.ndim != 2:
        raise ValueError("paired code arrays must both have shape (n, k)")
    n = cx.shape[0]
    idx = 4 * cx + cy + 16 * np.arange(n)[:, None]
    return np.bincount(idx.ravel(), minlength=16 * n).reshape(n, 16)


def group_counts(raw16) -> np.ndarray:
    """Collapse (..., 16) raw counts to the six likelihood cells."""
    return np.asarray(raw16) @ GROUP_MATRIX


def diagonal_counts(raw16) -> np.ndarray:
    return np.asarray(raw16)[..., DIAGONAL_CELLS].sum(axis=-1)


def same_sign_counts(raw16) -> np.ndarray:
    return np.asarray(raw16)[..., SAME_SIGN_CELLS].sum(axis=-1)


# ------------------------------------------------------------ packed storage


def pack_codes(codes, bits: int) -> np.ndarray:
    """Pack an (n, k) array of codes, ``8 // bits`` codes per byte, low bits first."""
    if bits not in (1, 2):
        raise ValueError("only 1- and 2-bit codes are packed")
    codes = np.asarray(codes, dtype=np.uint8)
    if codes.ndim == 1:
        codes = codes[None, :]
    if codes.size and codes.max() >= (1 << bits):
        raise ValueError(f"code value exceeds {bits}-bit range")
    per = 8 // bits
    n, k = codes.shape
    width = -(-k // per)
    padded = np.zeros((n, width * per), dtype=np.uint8)
    padded[:, :k] = codes
    groups = padded.reshape(n, width, per)
    shifts = (np.arange(per, dtype=np.uint8) * bits)
    return np.bitwise_or.reduce(groups << shifts, axis=2).astype(np.uint8)


def unpack_codes(packed, k: int, bits: int) -> np.ndarray:
    packed = np.asarray(packed, dtype=np.uint8)
    if packed.ndim == 1:
        packed = packed[None, :]
    per = 8 // bits
    shifts = (np.arange(per, dtype=np.uint8) * bits)
    mask = np.uint8((1 << bits) - 1)
    out = (packed[:, :, None] >> shifts) & mask
    return out.reshape(packed.shape[0], -1)[:, :k]


SKETCH_MAGIC = b"TBSK"
SKETCH_VERSION = 1
SCHEME_TAGS = {"one_bit": 1, "two_bit": 2}
_SCHEME_BITS = {"one_bit": 1, "two_bit": 2}
_SKETCH_HEADER = struct.Struct("<4sHBxdIIQ")


@dataclass(frozen=True, eq=False)
class Sketches:
    """Codes of n points, k projections each, under one coding scheme."""

    scheme: str
    w: float
    seed: int
    codes: np.ndarray  # (n, k) uint8

    def __post_init__(self):
        if self.scheme not in SCHEME_TAGS:
            raise ValueError(f"unknown sketch scheme {self.scheme!r}")
        if self.codes.ndim != 2:
            raise ValueError("codes must be a 2-D array (n, k)")

    @property
    def n(self) -> int:
        return self.codes.shape[0]

    @property
    def k(self) -> int:
        return self.codes.shape[1]

    def save(self, path) -> Path:
        path = Path(path)
        bits = _SCHEME_BITS[self.scheme]
        header = _SKETCH_HEADER.pack(SKETCH_MAGIC, SKETCH_VERSION, SCHEME_TAGS[self.scheme],
                                     float(self.w), self.k, self.n, self.seed)
        with open(path, "wb") as fh:
            fh.write(header)
            fh.write(pack_codes(self.codes, bits).tobytes(order="C"))
        return path

    @classmethod
    def load(cls, path) -> "Sketches":
        raw = Path(path).read_bytes()
        if len(raw) < _SKETCH_HEADER.size:
            raise ValueError(f"{path}: truncated sketch header")
        magic, version, tag, w, k, n, seed = _SKETCH_HEADER.unpack_from(raw)
        if magic != SKETCH_MAGIC:
            raise ValueError(f"{path}: not a sketch file (magic {magic!r})")
        if version != SKETCH_VERSION:
            raise ValueError(f"{path}: unsupported sketch version {version}")
        scheme = {v: s for s, v in SCHEME_TAGS.items()}.get(tag)
        if scheme is None:
            raise ValueError(f"{path}: unknown scheme tag {tag}")
        bits = _SCHEME_BITS[scheme]
        width = -(-k // (8 // bits))
        body = np.frombuffer(raw, dtype=np.uint8, offset=_SKETCH_HEADER.size)
        if body.size != n * width:
            raise ValueError(f"{path}: expected {n * width} code bytes, found {body.size}")
        codes = unpack_codes(body.reshape(n, width), k, bits)
        return cls(scheme=scheme, w=w, seed=seed, codes=codes)


def sketch(data, spec: ProjectionSpec, w: float, scheme: str = "two_bit") -> Sketches:
    x = project(data, spec)
    codes = encode_2bit(x, w) if scheme == "two_bit" else encode_1bit(x)
    return Sketches(scheme=scheme, w=float(w), seed=spec.seed, codes=np.asarray(codes, dtype=np.uint8))
