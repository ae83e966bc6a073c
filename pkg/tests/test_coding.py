import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from conftest import mc_cell_counts, within_se
from twobit.coding import (
    CELL_GROUPS,
    GROUP_MATRIX,
    CellCounts,
    ProjectionSpec,
    Sketches,
    cell_table,
    encode_1bit,
    encode_2bit,
    encode_offset,
    encode_uniform,
    group_counts,
    pack_codes,
    pair_cell_counts,
    project,
    projection_matrix,
    sketch,
    tally_cells,
    tally_cells_batch,
    unpack_codes,
)
from twobit.collision_gap import collision_prob_offset
from twobit.normal_math import std_normal_sf
from twobit.region_model import region_prob


def unit(v):
    v = np.asarray(v, dtype=float)
    return v / np.linalg.norm(v)


# --- projections


def test_zero_vector_projects_to_zero():
    assert np.all(project(np.zeros(16), ProjectionSpec(8, 1, 16)) == 0)


def test_projection_deterministic():
    spec = ProjectionSpec(20, 42, 7)
    assert np.array_equal(projection_matrix(spec), projection_matrix(spec))
    assert not np.array_equal(projection_matrix(spec), projection_matrix(ProjectionSpec(20, 43, 7)))


def test_projection_columns_are_prefix_stable():
    a = projection_matrix(ProjectionSpec(5, 3, 10))
    b = projection_matrix(ProjectionSpec(9, 3, 10))
    assert np.array_equal(a, b[:, :5])


def test_projected_correlation():
    D = 64
    rng = np.random.default_rng(0)
    u = unit(rng.standard_normal(D))
    v = rng.standard_normal(D)
    v = unit(v - (v @ u) * u)
    y = 0.8 * u + 0.6 * v
    k = 100_000
    px = project(u, ProjectionSpec(k, 5, D))[0]
    py = project(y, ProjectionSpec(k, 5, D))[0]
    r = np.corrcoef(px, py)[0, 1]
    se = (1 - 0.8 ** 2) / math.sqrt(k)
    assert abs(r - 0.8) <= 4 * se


def test_projection_entries_standard_normal():
    R = projection_matrix(ProjectionSpec(400, 9, 100))
    assert abs(R.mean()) < 4 / math.sqrt(R.size)
    assert abs(R.var() - 1) < 4 * math.sqrt(2 / R.size)


def test_project_dimension_mismatch():
    with pytest.raises(ValueError, match="D=5"):
        project(np.ones(4), ProjectionSpec(3, 0, 5))


@pytest.mark.parametrize("kwargs", [dict(k=0, seed=0, D=3), dict(k=1, seed=0, D=0), dict(k=1, seed=-1, D=3)])
def test_projection_spec_validation(kwargs):
    with pytest.raises(ValueError):
        ProjectionSpec(**kwargs)


# --- coders


@pytest.mark.parametrize("x,code", [(0.5, 2), (-2.0, 0), (0.75, 2), (-0.75, 0), (0.0, 1), (0.76, 3), (-0.1, 1)])
def test_encode_2bit_examples(x, code):
    assert encode_2bit(x, 0.75) == code


@given(st.floats(-10, 10), st.floats(0.05, 5))
def test_encode_2bit_mirror(x, w):
    if x in (0.0, w, -w):
        return
    assert encode_2bit(-x, w) == 3 - encode_2bit(x, w)


@given(st.floats(-10, 10), st.floats(0.05, 5))
def test_encode_2bit_sign_consistent_with_1bit(x, w):
    assert (encode_2bit(x, w) >= 2) == bool(encode_1bit(x))


@pytest.mark.parametrize("x,code", [(0.4, 0), (-0.1, -1), (3.0, 2)])
def test_encode_uniform_examples(x, code):
    assert encode_uniform(x, 1.5) == code


def test_encode_offset_examples():
    assert encode_offset(0.4, 1.5, 0.0) == 0
    assert encode_offset(0.4, 1.5, 1.2) == 1
    with pytest.raises(ValueError):
        encode_offset(0.4, 1.5, 1.5)


@pytest.mark.parametrize("x,bit", [(0.3, 1), (-0.3, 0), (0.0, 0)])
def test_encode_1bit_examples(x, bit):
    assert encode_1bit(x) == bit


def test_coders_reject_bad_width():
    for f in (encode_2bit, encode_uniform):
        with pytest.raises(ValueError):
            f(0.1, 0.0)


def test_offset_collision_rate_matches_integral():
    n = 10_000_000
    rng = np.random.default_rng(3)
    # squared distance d between unit vectors: projections differ by N(0, d)
    d, w = 1.0, 2.0
    x = rng.standard_normal(n)
    y = x + math.sqrt(d) * rng.standard_normal(n)
    q = rng.uniform(0, w, n)
    rate = np.mean(encode_offset(x, w, q) == encode_offset(y, w, q))
    assert within_se(rate, collision_prob_offset(d, w), n)


def test_wide_threshold_is_essentially_one_bit():
    n = 1_000_000
    counts = mc_cell_counts(0.3, 3.0, n, seed=4)
    # each coordinate lands in the sign-only codes {1, 2} with mass 1 - 2 (1 - Phi(3))
    marginal = counts[1:3, :].sum() / n
    assert within_se(marginal, 1 - 2 * std_normal_sf(3.0), n)
    assert counts[1:3, 1:3].sum() / n >= 1 - 4 * std_normal_sf(3.0)


# --- tallies


def test_identical_codes_are_diagonal():
    codes = np.array([0, 1, 2, 3, 3, 2, 1, 0, 2])
    c = tally_cells(codes, codes)
    assert c.n_adj_same == c.n_diag_inner_neg == c.n_adj_opp == c.n_diag_outer_neg == 0
    assert c.n_diagonal == codes.size == c.total


def test_single_adjacent_pair():
    c = tally_cells([2], [3])
    assert c.as_array().tolist() == [0, 1, 0, 0, 0, 0]


def test_tally_length_mismatch():
    with pytest.raises(ValueError):
        tally_cells([0, 1], [1])


def test_group_matrix_partitions_cells():
    assert np.array_equal(GROUP_MATRIX.sum(axis=1), np.ones(16))
    assert GROUP_MATRIX.sum(axis=0).tolist() == [2, 4, 2, 2, 4, 2]


@given(arrays(np.uint8, st.integers(1, 60), elements=st.integers(0, 3)),
       st.randoms(use_true_random=False))
def test_counts_sum_to_k(cx, rnd):
    cy = np.array([rnd.randrange(4) for _ in cx], dtype=np.uint8)
    c = tally_cells(cx, cy)
    assert c.total == cx.size
    assert 0 <= c.n_diagonal <= c.n_diag_inner + c.n_diag_outer
    assert c.n_same_sign == int(np.sum((cx >= 2) == (cy >= 2)))


def test_batch_tallies_agree():
    rng = np.random.default_rng(1)
    q = rng.integers(0, 4, 50)
    cands = rng.integers(0, 4, (7, 50))
    batch = tally_cells_batch(q, cands)
    for i in range(7):
        assert np.array_equal(batch[i], cell_table(q, cands[i]).ravel())
    pairs = pair_cell_counts(np.tile(q, (7, 1)), cands)
    assert np.array_equal(pairs, batch)


def test_grouped_frequencies_match_regions():
    n = 1_000_000
    counts = mc_cell_counts(0.5, 0.75, n, seed=8)
    six = group_counts(counts.ravel())
    mult = [2, 4, 2, 2, 4, 2]
    for (region, sign), m, observed in zip(CELL_GROUPS, mult, six):
        p = m * region_prob(region, sign * 0.5, 0.75)
        assert within_se(observed / n, p, n), (region, sign)


def test_cellcounts_validation():
    with pytest.raises(ValueError):
        CellCounts(-1, 0, 0, 0, 0, 0)
    with pytest.raises(ValueError):
        CellCounts(1, 0, 1, 0, 0, 0, n_diagonal=3)


# --- packed sketches


@given(arrays(np.uint8, st.tuples(st.integers(1, 5), st.integers(1, 23)), elements=st.integers(0, 3)),
       st.sampled_from([1, 2]))
def test_pack_round_trip(codes, bits):
    codes = codes & ((1 << bits) - 1)
    packed = pack_codes(codes, bits)
    assert packed.shape[1] == -(-codes.shape[1] // (8 // bits))
    assert np.array_equal(unpack_codes(packed, codes.shape[1], bits), codes)


def test_pack_layout_low_bits_first():
    assert pack_codes(np.array([[1, 2, 3, 0, 3]]), 2).tolist() == [[0b00111001, 0b00000011]]


def test_pack_rejects_out_of_range():
    with pytest.raises(ValueError):
        pack_codes(np.array([[2]]), 1)


@pytest.mark.parametrize("scheme", ["one_bit", "two_bit"])
def test_sketch_file_round_trip(tmp_path, scheme):
    rng = np.random.default_rng(2)
    data = rng.standard_normal((13, 9))
    s = sketch(data, ProjectionSpec(37, 77, 9), 0.75, scheme)
    path = s.save(tmp_path / "s.bin")
    back = Sketches.load(path)
    assert (back.scheme, back.w, back.seed, back.k, back.n) == (scheme, 0.75, 77, 37, 13)
    assert np.array_equal(back.codes, s.codes)
    bits = 1 if scheme == "one_bit" else 2
    assert path.stat().st_size == 32 + 13 * -(-37 // (8 // bits))


def test_sketch_file_rejects_garbage(tmp_path):
    path = tmp_path / "x.bin"
    path.write_bytes(b"NOPE" + bytes(60))
    with pytest.raises(ValueError, match="magic"):
        Sketches.load(path)
