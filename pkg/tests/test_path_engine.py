import csv
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.stats import poisson

from gbdsde.errors import BudgetExceeded, NonmonotoneA
from gbdsde.levy_teugels import LevyJumpSpec, orthonormalize, teugels_increments
from gbdsde.path_engine import TimeGrid, a_process, build_tree, simulate_paths


def test_grid_basics():
    g = TimeGrid(0.4, 4)
    assert g.dt == pytest.approx(0.1)
    assert g.nodes[0] == 0 and g.nodes[-1] == pytest.approx(0.4)
    assert g.index_of(0.2) == 2
    with pytest.raises(ValueError):
        g.index_of(0.15)


@pytest.mark.parametrize("T,N", [(0.0, 4), (-1.0, 4), (1.0, 0), (1.0, 2.5)])
def test_grid_rejects_bad_input(T, N):
    with pytest.raises(ValueError):
        TimeGrid(T, N)


# --- A process ----------------------------------------------------------------------

def test_identity_a_gives_dt():
    g = TimeGrid(1.0, 8)
    np.testing.assert_allclose(a_process("identity").increments(g), np.full(8, g.dt), rtol=0,
                               atol=1e-16)


def test_scaled_and_zero_a():
    g = TimeGrid(1.0, 4)
    np.testing.assert_allclose(a_process("scaled:3").increments(g), 0.75)
    np.testing.assert_array_equal(a_process("zero").increments(g), 0.0)


def test_table_a(tmp_path):
    f = tmp_path / "a.csv"
    f.write_text("# t,A\n0,0\n0.5,1\n1,1.5\n")
    np.testing.assert_allclose(a_process(f"table:{f}").increments(TimeGrid(1.0, 2)), [1.0, 0.5])


def test_decreasing_a_rejected():
    with pytest.raises(NonmonotoneA) as exc:
        simulate_paths(LevyJumpSpec.poisson(1.0), TimeGrid(1.0, 4), lambda t: -t, P=2)
    assert exc.value.code == "NONMONOTONE_A"


def test_unknown_a_rejected():
    with pytest.raises(ValueError):
        a_process("cubic")


# --- Monte Carlo ----------------------------------------------------------------------

def test_same_seed_is_bit_identical():
    spec, g = LevyJumpSpec((1.0, -2.0), (1.0, 0.5)), TimeGrid(1.0, 10)
    a = simulate_paths(spec, g, P=500, seed=99)
    b = simulate_paths(spec, g, P=500, seed=99)
    assert np.array_equal(a.counts, b.counts) and np.array_equal(a.brownian, b.brownian)
    c = simulate_paths(spec, g, P=500, seed=100)
    assert not np.array_equal(a.brownian, c.brownian)


def test_large_seed_accepted():
    b = simulate_paths(LevyJumpSpec.poisson(1.0), TimeGrid(1.0, 2), P=3, seed=2**64 - 1)
    assert b.counts.shape == (3, 2, 1)


def test_bundle_is_read_only():
    b = simulate_paths(LevyJumpSpec.poisson(1.0), TimeGrid(1.0, 2), P=3)
    with pytest.raises(ValueError):
        b.counts[0, 0, 0] = 5


def test_mean_count_matches_poisson_law():
    b = simulate_paths(LevyJumpSpec.poisson(1.0), TimeGrid(0.01, 1), P=100_000, seed=1)
    c = b.counts[:, 0, 0]
    se = c.std() / math.sqrt(c.size)
    assert abs(c.mean() - 0.01) <= 4 * se
    dB = b.brownian[:, 0]
    assert abs(dB.var() - 0.01) <= 4 * 0.01 * math.sqrt(2 / dB.size)


def test_paths_must_be_positive():
    with pytest.raises(ValueError):
        simulate_paths(LevyJumpSpec.poisson(1.0), TimeGrid(1.0, 2), P=0)


def test_path_csv_round_trip(tmp_path):
    b = simulate_paths(LevyJumpSpec((1.0, 2.0), (1.0, 1.0)), TimeGrid(1.0, 3), P=4, seed=5)
    b.write_csv(tmp_path / "p.csv")
    rows = list(csv.DictReader((tmp_path / "p.csv").open()))
    assert len(rows) == 12
    back = np.array([float(r["dB"]) for r in rows]).reshape(4, 3)
    assert np.array_equal(back, b.brownian)


def test_cumulative_counts():
    b = simulate_paths(LevyJumpSpec.poisson(3.0), TimeGrid(1.0, 5), P=50, seed=2)
    assert np.array_equal(b.cumulative_counts(0), np.zeros((50, 1)))
    assert np.array_equal(b.cumulative_counts(5), b.counts.sum(axis=1))


# --- scenario tree ----------------------------------------------------------------------

def test_cap_zero_has_only_brownian_branches():
    spec = LevyJumpSpec((1.0, -1.0), (0.7, 0.4))
    t = build_tree(spec, TimeGrid(1.0, 3), cap=0)
    assert t.n_patterns == 1 and t.n_leaves == 8
    assert t.truncated_mass == pytest.approx(1 - math.exp(-1.1), abs=1e-14)


def test_pattern_probabilities_follow_truncated_poisson():
    t = build_tree(LevyJumpSpec.poisson(1.0), TimeGrid(0.4, 4), cap=2)
    w = np.array([1.0, 0.1, 0.005])
    np.testing.assert_allclose(t.pattern_probs[0], w / w.sum(), rtol=1e-14)
    retained = math.exp(-0.1) * w.sum()
    assert t.truncated_mass == pytest.approx(1 - retained**4, rel=1e-12)


@given(st.integers(1, 3), st.integers(0, 3), st.integers(1, 2),
       st.floats(0.05, 2.0), st.floats(0.1, 2.0))
def test_leaf_probabilities_sum_to_one(N, cap, m, lam, T):
    spec = LevyJumpSpec(tuple(range(1, m + 1)), (lam,) * m)
    t = build_tree(spec, TimeGrid(T, N), cap=cap)
    assert abs(t.leaf_probs.sum() - 1.0) <= 1e-12
    assert t.leaf_counts.shape == (t.n_leaves, N, m)
    assert np.all(t.leaf_counts <= cap)


def test_two_point_brownian_has_variance_dt():
    t = build_tree(LevyJumpSpec.poisson(1.0), TimeGrid(0.3, 3), cap=1)
    dB = t.leaf_brownian
    assert np.all(np.abs(dB) == math.sqrt(0.1))
    for k in range(3):
        assert np.sum(t.leaf_probs * dB[:, k]) == pytest.approx(0, abs=1e-15)
        assert np.sum(t.leaf_probs * dB[:, k] ** 2) == pytest.approx(0.1, rel=1e-14)


def test_budget_exceeded_reports_leaf_count():
    with pytest.raises(BudgetExceeded) as exc:
        build_tree(LevyJumpSpec.poisson(1.0), TimeGrid(1.0, 8), cap=4)
    assert exc.value.leaf_count == 10**8
    assert exc.value.code == "BUDGET_EXCEEDED"


def tree_mean_dH(lam, dt, cap):
    spec = LevyJumpSpec.poisson(lam)
    t = build_tree(spec, TimeGrid(dt, 1), cap=cap)
    dH = teugels_increments(orthonormalize(spec), t.patterns, dt)[:, 0]
    return float(t.pattern_probs[0] @ dH)


def truncated_bias(lam, dt, cap):
    n = np.arange(cap + 1)
    p = poisson.pmf(n, lam * dt)
    return (p @ n / p.sum() - lam * dt) / math.sqrt(lam)


@pytest.mark.parametrize("lam,dt,cap", [(1, 0.1, 2), (1, 0.2, 4), (2, 0.1, 5), (0.5, 0.2, 3)])
def test_tree_mean_dH_equals_truncation_bias(lam, dt, cap):
    assert tree_mean_dH(lam, dt, cap) == pytest.approx(truncated_bias(lam, dt, cap), abs=1e-15)


def test_truncation_bias_shrinks_with_cap():
    vals = [abs(tree_mean_dH(1.0, 0.2, cap)) for cap in range(1, 8)]
    assert all(b < a for a, b in zip(vals, vals[1:]))


@pytest.mark.parametrize("lam_dt", [0.05, 0.1, 0.2])
def test_truncation_bias_below_threshold_from_cap_five(lam_dt):
    assert abs(tree_mean_dH(1.0, lam_dt, 5)) <= 1e-6


@pytest.mark.parametrize("lam_dt", [0.05, 0.1])
def test_truncation_bias_below_threshold_at_cap_four(lam_dt):
    assert abs(tree_mean_dH(1.0, lam_dt, 4)) <= 1e-6


def test_truncation_bias_at_cap_four_and_lambda_dt_point_two():
    # 1.09e-5 here, above 1e-6; cap 5 is the first cap that reaches 1e-6 at this step size
    assert abs(tree_mean_dH(1.0, 0.2, 4)) == pytest.approx(1.0916434692e-05, rel=1e-9)
    # the bias in H-units grows like 1/sqrt(lambda) at fixed lambda dt
    assert abs(tree_mean_dH(0.04, 5.0, 5)) > 1e-6


def test_monte_carlo_and_tree_agree_on_count_polynomials():
    spec = LevyJumpSpec((1.0, -1.0), (1.0, 0.5))
    g = TimeGrid(0.4, 3)
    tree = build_tree(spec, g, cap=4)
    b = simulate_paths(spec, g, P=100_000, seed=17)

    def poly(c):
        tot = c.sum(axis=1).astype(float)
        return tot[:, 0] ** 2 + 2 * tot[:, 1] - tot[:, 0] * tot[:, 1] + c[:, 0, 0]

    exact = tree.count_moment(poly)
    vals = poly(b.counts)
    assert abs(vals.mean() - exact) <= 4 * vals.std() / math.sqrt(vals.size)
