import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.stats import multivariate_normal

from conftest import mc_cell_counts, within_se
from twobit.normal_math import std_normal_cdf, std_normal_sf
from twobit.region_model import (
    BASE_REGIONS,
    RHO_MAX,
    ProbabilityTable,
    RegionId,
    RhoClampWarning,
    all_region_probs,
    base_derivatives,
    base_probs,
    base_region_d1,
    base_region_d2,
    base_region_prob,
    build_table,
    clamp_rho,
    region_d1,
    region_d2,
    region_prob,
)

RHO_GRID = np.round(np.arange(-0.95, 0.951, 0.05), 10)
W_GRID = (0.4, 0.6, 0.75, 1.0, 1.5, 3.0)
ALL_REGIONS = [(i, j) for i in range(4) for j in range(4)]


def scipy_rect(lo, hi, rho):
    """P(lo < (x, y) <= hi) by inclusion-exclusion on scipy's bivariate cdf."""
    mvn = multivariate_normal(mean=[0, 0], cov=[[1, rho], [rho, 1]])
    big = 12.0
    lo = [max(v, -big) for v in lo]
    hi = [min(v, big) for v in hi]
    f = lambda a, b: mvn.cdf([a, b])
    return f(hi[0], hi[1]) - f(lo[0], hi[1]) - f(hi[0], lo[1]) + f(lo[0], lo[1])


def test_independence_at_zero():
    for w in (0.5, 0.75, 2.0):
        assert base_region_prob((3, 3), 0.0, w) == pytest.approx(std_normal_sf(w) ** 2, abs=1e-13)
        half = std_normal_cdf(w) - 0.5
        assert base_region_prob((2, 2), 0.0, w) == pytest.approx(half * half, abs=1e-13)


@pytest.mark.parametrize("rho", [-0.9, -0.3, 0.2, 0.6, 0.95])
@pytest.mark.parametrize("w", [0.4, 0.75, 1.5])
def test_base_probs_match_scipy(rho, w):
    p22, p23, p33 = base_probs(rho, w)
    inf = math.inf
    assert p22 == pytest.approx(scipy_rect((0, 0), (w, w), rho), abs=2e-7)
    assert p23 == pytest.approx(scipy_rect((0, w), (w, inf), rho), abs=2e-7)
    assert p33 == pytest.approx(scipy_rect((w, w), (inf, inf), rho), abs=2e-7)


def test_discordant_cell_near_perfect_correlation():
    # The (2,3) cell does not vanish identically at 1 - 1e-8: a sliver of
    # width s = sqrt(1 - rho^2) ~ 1.4e-4 straddles x = w, leaving mass
    # close to phi(w) * s / sqrt(2 pi).
    rho = 1 - 1e-8
    s = math.sqrt((1 - rho) * (1 + rho))
    p23 = base_region_prob((2, 3), rho, 0.75)
    expected = math.exp(-0.75 ** 2 / 2) / math.sqrt(2 * math.pi) * s / math.sqrt(2 * math.pi)
    assert p23 == pytest.approx(expected, rel=1e-3)
    assert p23 < 2e-5


def test_p22_spike_near_negative_one():
    # as rho -> -1 the (2,2) mass concentrates in a thin band near the origin
    rho = -1 + 1e-8
    ref = scipy_rect((0, 0), (0.75, 0.75), -0.999999)
    assert base_region_prob((2, 2), -0.999999, 0.75) == pytest.approx(ref, rel=1e-4)
    assert 0 < base_region_prob((2, 2), rho, 0.75) < 1e-3


def test_mc_base_region():
    n = 4_000_000
    counts = mc_cell_counts(0.5, 0.75, n, seed=11)
    assert within_se(counts[2, 2] / n, base_region_prob((2, 2), 0.5, 0.75), n)
    counts = mc_cell_counts(0.6, 0.75, n, seed=12)
    assert within_se(counts[0, 2] / n, region_prob((0, 2), 0.6, 0.75), n)


def test_d1_at_zero_closed_form():
    for w in (0.5, 0.75, 1.5):
        assert base_region_d1((3, 3), 0.0, w) == pytest.approx(math.exp(-w * w) / (2 * math.pi), rel=1e-14)


@given(st.floats(-0.99, 0.99), st.sampled_from(W_GRID))
def test_d1_telescopes_to_quadrant(rho, w):
    d1 = base_derivatives(rho, w)[0]
    total = d1[0] + 2 * d1[1] + d1[2]
    assert total == pytest.approx(1 / (2 * math.pi * math.sqrt(1 - rho * rho)), rel=1e-12)


def test_d1_finite_difference_spot():
    h = 1e-5
    fd = (base_region_prob((2, 2), 0.3 + h, 0.75) - base_region_prob((2, 2), 0.3 - h, 0.75)) / (2 * h)
    assert abs(base_region_d1((2, 2), 0.3, 0.75) - fd) <= 1e-6


@pytest.mark.parametrize("w", W_GRID)
def test_derivatives_finite_difference_grid(w):
    h = 1e-5
    rhos = RHO_GRID
    for region in BASE_REGIONS:
        p_hi = np.array([base_region_prob(region, r + h, w) for r in rhos])
        p_lo = np.array([base_region_prob(region, r - h, w) for r in rhos])
        fd1 = (p_hi - p_lo) / (2 * h)
        assert np.max(np.abs(fd1 - base_region_d1(region, rhos, w))) <= 1e-6
        fd2 = (base_region_d1(region, rhos + h, w) - base_region_d1(region, rhos - h, w)) / (2 * h)
        assert np.max(np.abs(fd2 - base_region_d2(region, rhos, w))) <= 1e-5


@pytest.mark.parametrize("rho", [-0.5, 0.0, 0.5])
def test_inner_mirror_regions(rho):
    assert region_prob((1, 1), rho, 0.75) == region_prob((2, 2), rho, 0.75)
    assert region_prob((0, 0), rho, 0.75) == region_prob((3, 3), rho, 0.75)


def test_total_probability_spot():
    assert abs(all_region_probs(0.37, 0.75).sum() - 1) <= 1e-8


@pytest.mark.parametrize("w", W_GRID)
def test_normalization_and_derivative_closure(w):
    for rho in RHO_GRID:
        assert abs(all_region_probs(rho, w).sum() - 1) <= 1e-8
        assert abs(sum(region_d1(r, rho, w) for r in ALL_REGIONS)) <= 1e-8
        assert abs(sum(region_d2(r, rho, w) for r in ALL_REGIONS)) <= 1e-8


@pytest.mark.parametrize("w", (0.4, 0.75, 3.0))
def test_diagonal_mass_nondecreasing(w):
    rhos = np.linspace(0, 0.999, 80)
    diag = np.array([base_probs(r, w)[0] + base_probs(r, w)[2] for r in rhos])
    assert np.all(np.diff(diag) >= -1e-12)


@pytest.mark.parametrize("rho", [-0.8, -0.2, 0.0, 0.45, 0.9])
def test_quadrant_limits(rho):
    quadrant = 0.25 + math.asin(rho) / (2 * math.pi)
    # w large: the inner cell is the whole quadrant; w small: the outer cell is
    assert base_region_prob((2, 2), rho, 10.0) == pytest.approx(quadrant, abs=1e-6)
    assert base_region_prob((3, 3), rho, 1e-7) == pytest.approx(quadrant, abs=1e-6)


@given(st.integers(0, 3), st.integers(0, 3), st.floats(-0.98, 0.98))
def test_region_values_in_unit_interval(i, j, rho):
    p = region_prob(RegionId(i, j), rho, 0.75)
    assert 0.0 <= p <= 1.0


def test_region_id_validation():
    with pytest.raises(ValueError):
        RegionId(4, 0)
    with pytest.raises(ValueError):
        base_region_prob((1, 2), 0.1, 0.75)


def test_clamp_warns():
    with pytest.warns(RhoClampWarning):
        assert clamp_rho(1.0) == RHO_MAX
    assert clamp_rho(0.3) == 0.3
    with pytest.raises(ValueError):
        clamp_rho(math.nan)


def test_bad_w_rejected():
    with pytest.raises(ValueError):
        base_probs(0.1, 0.0)


# --- tables


def test_table_node_identity(table075):
    nodes = table075.rho[::97]
    direct = np.array([base_probs(r, 0.75) for r in nodes]).T
    assert np.array_equal(table075.probs(nodes), direct)


def test_table_midpoint_accuracy(table075):
    p, d1, d2 = table075.evaluate(0.4715)
    direct = np.array(base_probs(0.4715, 0.75))
    assert np.max(np.abs(p - direct)) <= 1e-6
    ref1, ref2 = base_derivatives(0.4715, 0.75)
    assert np.allclose(d1, ref1, rtol=0, atol=1e-12)
    assert np.allclose(d2, ref2, rtol=0, atol=1e-12)


def test_table_max_interpolation_error(table075):
    theta = np.arcsin(table075.rho)
    mid = np.sin(0.5 * (theta[:-1] + theta[1:]))[::41]
    direct = np.array([base_probs(r, 0.75) for r in mid]).T
    assert np.max(np.abs(table075.probs(mid) - direct)) <= 1e-6


def test_table_boundaries_finite(table075):
    for rho in (-RHO_MAX, RHO_MAX):
        p, d1, d2 = table075.evaluate(rho)
        assert np.all(np.isfinite(p)) and np.all(np.isfinite(d1)) and np.all(np.isfinite(d2))
    assert table075.rho[0] == pytest.approx(-RHO_MAX, abs=1e-15)
    assert table075.rho[-1] == pytest.approx(RHO_MAX, abs=1e-15)
    assert np.all(np.diff(table075.rho) > 0)


def test_table_lookup_region(table075):
    p, d1, d2 = table075.lookup((2, 3), 0.2)
    assert p == pytest.approx(base_region_prob((2, 3), 0.2, 0.75), abs=1e-6)
    assert d1 == pytest.approx(base_region_d1((2, 3), 0.2, 0.75), abs=1e-12)


def test_table_round_trip(tmp_path):
    table = build_table(1.5, grid_step=0.01)
    path = table.save(tmp_path / "t.bin")
    loaded = ProbabilityTable.load(path)
    assert loaded.w == 1.5 and loaded.grid_step == 0.01
    assert np.array_equal(loaded.rho, table.rho)
    assert np.array_equal(loaded.values, table.values)
    assert (tmp_path / "t.bin.json").exists()


def test_table_rejects_corrupt(tmp_path):
    path = tmp_path / "bad.bin"
    path.write_bytes(b"XXXX" + bytes(40))
    with pytest.raises(ValueError, match="magic"):
        ProbabilityTable.load(path)
    table = build_table(1.5, grid_step=0.01)
    table.save(path)
    path.write_bytes(path.read_bytes()[:-8])
    with pytest.raises(ValueError):
        ProbabilityTable.load(path)


@pytest.mark.parametrize("step", [0.0, 0.02])
def test_table_step_validation(step):
    with pytest.raises(ValueError):
        build_table(0.75, grid_step=step)


# --- far tails near rho = -1


def _mp_base_probs(rho, w):
    import mpmath as mp

    with mp.workdps(40):
        rho, w = mp.mpf(rho), mp.mpf(w)
        s = mp.sqrt(1 - rho * rho)
        ladder = [s * s / w * 4**i / 4 for i in range(12) if s * s / w * 4**i / 4 < w / 2]
        p22 = mp.quad(lambda x: mp.npdf(x) * (mp.ncdf((w - rho * x) / s) - mp.ncdf(-rho * x / s)),
                      [0] + ladder + [w - h for h in reversed(ladder)] + [w])
        p23 = mp.quad(lambda x: mp.npdf(x) * mp.ncdf((rho * x - w) / s), [0] + ladder + [w])
        p33 = mp.quad(lambda x: mp.npdf(x) * mp.ncdf((rho * x - w) / s),
                      [w] + [w + h for h in ladder] + [w + 1, mp.inf])
        return [float(p22), float(p23), float(p33)]


@pytest.mark.parametrize("rho, w", [(-0.9, 3.0), (-0.99, 0.75), (-0.99, 3.0),
                                    (-0.999, 0.4), (-0.999, 0.75), (-0.9999, 0.4)])
def test_tiny_probabilities_relative_accuracy(rho, w):
    got = np.array(base_probs(rho, w))
    ref = np.array(_mp_base_probs(rho, w))
    ok = ref > 1e-290
    assert np.all(np.abs(got[ok] - ref[ok]) <= 1e-6 * ref[ok])


def test_table_tail_relative_accuracy(table075):
    for rho in (-0.9995, -0.9987, -0.995, -0.97):
        got = table075.probs(rho)
        ref = np.array(base_probs(rho, 0.75))
        ok = ref > 1e-290
        assert np.all(np.abs(got[ok] - ref[ok]) <= 1e-3 * ref[ok])
