"""(K, L)-LSH over uniformly quantized projections, with sketch-based re-ranking.

Two-stage coding: the same K * L projections that key the hash tables
(bin width ``w1``) are coded a second time with the 2-bit scheme at
threshold ``w``, and the first ``k`` of those codes are kept per point as
the estimation sketch.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .coding import ProjectionSpec, Sketches, encode_2bit, encode_uniform, projection_matrix, tally_cells_batch
from .estimation import ESTIMATORS, MleConfig, estimate_from_raw
from .region_model import ProbabilityTable

_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_GOLDEN = np.uint64(0x9E3779B97F4A7C15)


def _mix64(h):
    h = h ^ (h >> np.uint64(30))
    h = h * _M1
    h = h ^ (h >> np.uint64(27))
    h = h * _M2
    return h ^ (h >> np.uint64(31))


def key_digest(codes) -> np.ndarray:
    """64-bit digest of each row of an (n, K) integer code array."""
    codes = np.atleast_2d(np.asarray(codes, dtype=np.int64)).view(np.uint64)
    h = np.full(codes.shape[0], _GOLDEN, dtype=np.uint64)
    with np.errstate(over="ignore"):
        for col in codes.T:
            h = _mix64(h + _GOLDEN + col)
    return h


@dataclass(frozen=True)
class IndexConfig:
    K: int = 10
    L: int = 50
    w1: float = 1.5
    seed: int = 0

    def __post_init__(self):
        if self.K < 1 or self.L < 1:
            raise ValueError(f"K and L must be >= 1, got K={self.K}, L={self.L}")
        if not self.w1 > 0:
            raise ValueError(f"table bin width w1 must be positive, got {self.w1}")


@dataclass(frozen=True)
class _Table:
    digests: np.ndarray  # sorted unique uint64
    offsets: np.ndarray  # len(digests) + 1
    ids: np.ndarray      # point ids grouped by bucket, ascending within a bucket

    def bucket(self, digest) -> np.ndarray:
        i = np.searchsorted(self.digests, digest)
        if i < self.digests.size and self.digests[i] == digest:
            return self.ids[self.offsets[i]:self.offsets[i + 1]]
        return self.ids[:0]


def _make_table(digests: np.ndarray) -> _Table:
    n = digests.size
    order = np.lexsort((np.arange(n), digests))
    sorted_d = digests[order]
    uniq, start = np.unique(sorted_d, return_index=True)
    offsets = np.append(start, n).astype(np.int64)
    return _Table(uniq, offsets, order.astype(np.int64))


@dataclass(frozen=True, eq=False)
class LshIndex:
    config: IndexConfig
    D: int
    n: int
    tables: tuple
    _projection: np.ndarray = field(default=None, repr=False)

    @property
    def projection(self) -> np.ndarray:
        if self._projection is None:
            R = projection_matrix(ProjectionSpec(self.config.K * self.config.L, self.config.seed, self.D))
            object.__setattr__(self, "_projection", R)
        return self._projection

    @classmethod
    def empty(cls, config: IndexConfig, D: int) -> "LshIndex":
        none = np.zeros(0, dtype=np.uint64)
        tables = tuple(_Table(none, np.zeros(1, np.int64), np.zeros(0, np.int64)) for _ in range(config.L))
        return cls(config, D, 0, tables)

    def keys(self, queries) -> np.ndarray:
        """(m, L) bucket digests of query vectors."""
        x = np.atleast_2d(queries) @ self.projection
        return _table_digests(x, self.config)

    def save(self, path) -> Path:
        path = Path(path)
        cfg = self.config
        with open(path, "wb") as fh:
            fh.write(_INDEX_HEADER.pack(INDEX_MAGIC, INDEX_VERSION, cfg.K, cfg.L, cfg.w1,
                                        cfg.seed, self.n, self.D))
            for t in self.tables:
                fh.write(struct.pack("<I", t.digests.size))
                directory = np.zeros(t.digests.size, dtype=[("digest", "<u8"), ("offset", "<u4"), ("count", "<u4")])
                directory["digest"] = t.digests
                directory["offset"] = t.offsets[:-1]
                directory["count"] = np.diff(t.offsets)
                fh.write(directory.tobytes())
                fh.write(t.ids.astype("<u4").tobytes())
        return path

    @classmethod
    def load(cls, path) -> "LshIndex":
        raw = Path(path).read_bytes()
        if len(raw) < _INDEX_HEADER.size:
            raise ValueError(f"{path}: truncated index header")
        magic, version, K, L, w1, seed, n, D = _INDEX_HEADER.unpack_from(raw)
        if magic != INDEX_MAGIC:
            raise ValueError(f"{path}: not an LSH index (magic {magic!r})")
        if version != INDEX_VERSION:
            raise ValueError(f"{path}: unsupported index version {version}")
        pos = _INDEX_HEADER.size
        dir_dtype = np.dtype([("digest", "<u8"), ("offset", "<u4"), ("count", "<u4")])
        tables = []
        for _ in range(L):
            (nb,) = struct.unpack_from("<I", raw, pos)
            pos += 4
            directory = np.frombuffer(raw, dtype=dir_dtype, count=nb, offset=pos)
            pos += nb * dir_dtype.itemsize
            ids = np.frombuffer(raw, dtype="<u4", count=n, offset=pos).astype(np.int64)
            pos += 4 * n
            offsets = np.append(directory["offset"], n).astype(np.int64)
            tables.append(_Table(directory["digest"].astype(np.uint64), offsets, ids))
        if pos != len(raw):
            raise ValueError(f"{path}: {len(raw) - pos} trailing bytes")
        return cls(IndexConfig(K, L, w1, seed), D, n, tuple(tables))


INDEX_MAGIC = b"TBIX"
INDEX_VERSION = 1
_INDEX_HEADER = struct.Struct("<4sHIIdQII")


def _table_digests(x: np.ndarray, config: IndexConfig) -> np.ndarray:
    codes = encode_uniform(x, config.w1)
    n = codes.shape[0]
    blocks = codes.reshape(n, config.L, config.K)
    return np.stack([key_digest(blocks[:, t, :]) for t in range(config.L)], axis=1)


def _check_data(data) -> np.ndarray:
    data = np.asarray(data, dtype=float)
    if data.ndim != 2 or data.shape[0] == 0:
        raise ValueError("cannot index an empty dataset")
    return data


def build_index(data, config: IndexConfig) -> LshIndex:
    data = _check_data(data)
    n, D = data.shape
    R = projection_matrix(ProjectionSpec(config.K * config.L, config.seed, D))
    digests = _table_digests(data @ R, config)
    tables = tuple(_make_table(digests[:, t]) for t in range(config.L))
    return LshIndex(config, D, n, tables, R)


@dataclass(frozen=True, eq=False)
class SketchStore:
    """Per-point 2-bit codes used only for similarity estimation."""

    sketches: Sketches

    @property
    def k(self) -> int:
        return self.sketches.k

    @property
    def w(self) -> float:
        return self.sketches.w

    def rows(self, ids) -> np.ndarray:
        ids = np.asarray(ids, dtype=np.int64)
        if ids.size and (ids.min() < 0 or ids.max() >= self.sketches.n):
            bad = ids[(ids < 0) | (ids >= self.sketches.n)][0]
            raise KeyError(f"no sketch stored for point id {int(bad)}")
        return self.sketches.codes[ids]


def build_two_stage(data, config: IndexConfig, k: int, w: float):
    """Index plus sketch store sharing one set of projections."""
    data = _check_data(data)
    n, D = data.shape
    if not 1 <= k <= config.K * config.L:
        raise ValueError(f"sketch size k={k} must be in [1, K*L={config.K * config.L}]")
    R = projection_matrix(ProjectionSpec(config.K * config.L, config.seed, D))
    x = data @ R
    digests = _table_digests(x, config)
    tables = tuple(_make_table(digests[:, t]) for t in range(config.L))
    index = LshIndex(config, D, n, tables, R)
    codes = np.asarray(encode_2bit(x[:, :k], w), dtype=np.uint8)
    store = SketchStore(Sketches("two_bit", float(w), config.seed, codes))
    return index, store


def query_sketch(index: LshIndex, q, k: int, w: float) -> np.ndarray:
    x = np.atleast_2d(q) @ index.projection[:, :k]
    return np.asarray(encode_2bit(x[0], w), dtype=np.uint8)


def query(index: LshIndex, q) -> np.ndarray:
    """Ids sharing at least one bucket with q, ascending (no ranking implied)."""
    if index.n == 0:
        return np.zeros(0, dtype=np.int64)
    keys = index.keys(q)[0]
    hits = [t.bucket(d) for t, d in zip(index.tables, keys)]
    return np.unique(np.concatenate(hits)) if hits else np.zeros(0, dtype=np.int64)


def rerank(candidates, q_codes, store: SketchStore, estimator: str, table: ProbabilityTable,
           config: MleConfig = MleConfig()):
    """Sort candidates by descending estimated similarity; ties go to the smaller id.

    Returns (ids, rho_hat) for the full candidate list.
    """
    if estimator not in ESTIMATORS:
        raise ValueError(f"unknown estimator {estimator!r}; choose from {ESTIMATORS}")
    ids = np.asarray(sorted(set(int(i) for i in candidates)), dtype=np.int64)
    if ids.size == 0:
        return ids, np.zeros(0)
    if table.w != store.w:
        raise ValueError(f"table threshold w={table.w} differs from sketch threshold w={store.w}")
    raw = tally_cells_batch(q_codes, store.rows(ids))
    rho = estimate_from_raw(raw, estimator, table, config)
    order = np.lexsort((ids, -rho))
    return ids[order], rho[order]


def precision_recall(ranked, truth) -> np.ndarray:
    """(m, 2) array of (precision, recall) for the top-m prefix, m = 1 .. len(ranked)."""
    truth = set(int(t) for t in truth)
    if not truth:
        raise ValueError("ground-truth set must be nonempty")
    ranked = np.asarray(ranked, dtype=np.int64)
    hits = np.cumsum([int(i) in truth for i in ranked])
    m = np.arange(1, ranked.size + 1)
    return np.column_stack([hits / m, hits / len(truth)]) if ranked.size else np.zeros((0, 2))
