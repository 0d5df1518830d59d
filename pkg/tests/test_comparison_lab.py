import math

import numpy as np
import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st

from gbdsde.bdsde_solver import TreeConditioner, solve_lipschitz
from gbdsde.comparison_lab import (beta_quotients, check_dominance, counterexample,
                                   counterexample_problems, jump_condition,
                                   poisson_violation_probability, run_comparison)
from gbdsde.errors import PreconditionDominanceFailed
from gbdsde.generator_kit import GeneratorSpec, ProblemSpec, generator_catalog, terminal_catalog
from gbdsde.levy_teugels import LevyJumpSpec, orthonormalize
from gbdsde.path_engine import TimeGrid, build_tree, simulate_paths

TWO_SIDED = LevyJumpSpec((1.0, -0.5), (1.0, 1.5))


# --- difference quotients ------------------------------------------------------------

def test_beta_of_linear_generator_is_its_coefficients():
    f = generator_catalog("linear:0.3,2,-1", 2).f
    z1 = np.array([[0.0, 1.0], [2.0, 2.0]])
    z2 = np.array([[1.0, 1.0], [-1.0, 5.0]])
    beta = beta_quotients(f, 0.0, np.zeros(2), z1, z2)
    np.testing.assert_allclose(beta, [[2.0, 0.0], [-1.0, -1.0]])


def test_beta_is_zero_where_coordinates_agree():
    f = generator_catalog("sine_plus_linear").f
    beta = beta_quotients(f, 0.0, np.ones(3), np.ones((1, 3)), np.ones((1, 3)))
    assert np.all(beta == 0.0)


def _nonlinear(t, y, z):
    return np.sin(y * z[0]) + z[1] ** 3 - np.abs(z[0] - z[2]) + z[0] * z[1]


@given(st.integers(0, 10_000))
def test_beta_telescopes(seed):
    rng = np.random.default_rng(seed)
    y = rng.normal(size=5)
    z1, z2 = rng.normal(size=(3, 5)), rng.normal(size=(3, 5))
    beta = beta_quotients(_nonlinear, 0.1, y, z1, z2)
    lhs = np.sum(beta * (z2 - z1), axis=0)
    rhs = _nonlinear(0.1, y, z2) - _nonlinear(0.1, y, z1)
    np.testing.assert_allclose(lhs, rhs, rtol=1e-10, atol=1e-10)


# --- jump condition ---------------------------------------------------------------------

@pytest.mark.parametrize("lam,margin", [(1.0, -1.0), (4.0, -0.5), (0.25, -2.0)])
def test_counterexample_margin(lam, margin):
    basis = orthonormalize(LevyJumpSpec.poisson(lam))
    jc = jump_condition(np.array([-(1 + math.sqrt(lam))]), basis)
    assert jc.min_margin == pytest.approx(margin, abs=1e-14)
    assert not jc.satisfied


def test_zero_beta_always_satisfies():
    jc = jump_condition(np.zeros((2, 7)), orthonormalize(TWO_SIDED))
    assert jc.satisfied
    np.testing.assert_array_equal(jc.margins, 1.0)


@given(st.floats(-3, 3), st.floats(-3, 3), st.floats(0.2, 5), st.floats(0.1, 5))
def test_single_size_margin_matches_formula(b1, b2, a, lam):
    # for one jump size q_1(a) a = sqrt(1 / lambda) up to sign, so the margin is affine in beta
    basis = orthonormalize(LevyJumpSpec((a,), (lam,)))
    m1 = jump_condition(np.array([b1]), basis).min_margin
    m2 = jump_condition(np.array([b2]), basis).min_margin
    assert abs(m1 - 1.0) == pytest.approx(abs(b1) / math.sqrt(lam), rel=1e-10, abs=1e-12)
    if b1 <= b2:
        assert m1 <= m2 + 1e-12


def test_monotone_generator_can_violate_condition_with_two_sizes():
    # sizes 1, 2 at unit intensity: dH^(2) at a jump of size 1 is -2/sqrt(5)
    basis = orthonormalize(LevyJumpSpec((1.0, 2.0), (1.0, 1.0)))
    np.testing.assert_allclose(basis.jump_map, np.array([[1, 2], [-2, 1]]) / math.sqrt(5), atol=1e-15)
    jc = jump_condition(np.array([0.0, 2.0]), basis)
    assert jc.margins[0] == pytest.approx(1 - 4 / math.sqrt(5), abs=1e-14)
    assert not jc.satisfied


# --- comparison runs ---------------------------------------------------------------------

def linear_problem(term, gen="linear:0.5,1", levy=LevyJumpSpec.poisson(1.0), T=0.4):
    return ProblemSpec(terminal_catalog(term, levy), generator_catalog(gen, levy.m), levy,
                       "identity", T)


def test_identical_problems_have_no_violations():
    p = linear_problem("count")
    rep = run_comparison(p, p, build_tree(p.levy, TimeGrid(0.4, 4), cap=2))
    assert rep.violations == 0 and rep.worst_gap == 0.0
    np.testing.assert_array_equal(rep.margins, 1.0)


def test_terminal_shift_orders_solutions():
    p1, p2 = linear_problem("count"), linear_problem("count_plus:1")
    rep = run_comparison(p1, p2, build_tree(p1.levy, TimeGrid(0.4, 4), cap=2))
    assert rep.satisfied and rep.violations == 0
    assert rep.extras["y0_2"] > rep.extras["y0_1"]


def test_driver_shift_orders_solutions_on_paths():
    p1 = linear_problem("count")
    p2 = ProblemSpec(p1.terminal, p1.generator.shifted(1.0), p1.levy, "identity", 0.4)
    bundle = simulate_paths(p1.levy, TimeGrid(0.4, 4), P=5000, seed=1)
    rep = run_comparison(p1, p2, bundle)
    assert rep.violations == 0
    assert rep.extras["y0_2"] - rep.extras["y0_1"] == pytest.approx(0.1 * sum(1.05 ** j for j in range(4)), abs=1e-10)


def test_terminal_dominance_failure_has_witness():
    p1, p2 = linear_problem("count_plus:1"), linear_problem("count")
    with pytest.raises(PreconditionDominanceFailed) as exc:
        run_comparison(p1, p2, build_tree(p1.levy, TimeGrid(0.4, 2), cap=1))
    assert exc.value.code == "PRECONDITION_DOMINANCE_FAILED"
    assert exc.value.witness["xi2"] < exc.value.witness["xi1"]


def test_driver_dominance_failure_has_witness():
    p1, p2 = linear_problem("count", "linear:0.5,2"), linear_problem("count", "linear:0.5,1")
    tree = build_tree(p1.levy, TimeGrid(0.4, 2), cap=1)
    cond = TreeConditioner(tree, orthonormalize(p1.levy))
    sols = [solve_lipschitz(p, cond) for p in (p1, p2)]
    with pytest.raises(PreconditionDominanceFailed) as exc:
        check_dominance(p1, p2, cond, sols)
    w = exc.value.witness
    assert w["gap"] < 0 and w["z"][0] > 0


def _step_weights(cond, k, a, b):
    """Node weights of the linear step X -> Yhat + dt (a Yhat + b . Z) on the tree."""
    w, mean, cen, cov_inv = cond._moments[k]
    proj = cov_inv @ cen                       # (m, K)
    intercept = 1.0 - mean @ proj
    return w * ((1 + a * cond.grid.dt) * intercept + cond.grid.dt * (b @ proj))


@settings(max_examples=30, deadline=None)
@given(st.floats(-1, 1), st.floats(-0.6, 0.6), st.floats(-0.6, 0.6), st.integers(0, 10_000),
       st.floats(0, 1))
def test_discrete_comparison_on_random_linear_problems(a, b1, b2, seed, lift):
    levy, grid = TWO_SIDED, TimeGrid(0.3, 3)
    tree = build_tree(levy, grid, cap=1)
    cond = TreeConditioner(tree, orthonormalize(levy))
    b = np.array([b1, b2])
    # the hypothesis of the discrete comparison: every step is a positive linear map
    assume(all(np.all(_step_weights(cond, k, a, b) >= 0) for k in range(grid.steps)))
    rng = np.random.default_rng(seed)
    c1, c2 = rng.normal(size=(2, grid.steps * levy.m))

    def xi1(c):
        return np.sin(c.reshape(c.shape[0], -1) @ c1)

    def xi2(c):
        return xi1(c) + lift * np.cos(c.reshape(c.shape[0], -1) @ c2) ** 2

    gen = generator_catalog(f"linear:{a},{b1},{b2}", 2)
    p1 = ProblemSpec(xi1, gen, levy, "identity", grid.horizon)
    p2 = ProblemSpec(xi2, gen, levy, "identity", grid.horizon)
    rep = run_comparison(p1, p2, cond)
    assert rep.violations == 0


# --- the counter-example ----------------------------------------------------------------------

@pytest.mark.parametrize("lam", [1.0, 4.0])
def test_counterexample_on_tree(lam):
    rep = counterexample(lam, TimeGrid(1.0, 4), engine="tree", cap=4)
    assert rep.residual_max <= 1e-10
    assert rep.margin == pytest.approx(-1 / math.sqrt(lam), abs=1e-12)
    assert not rep.satisfied
    assert rep.comparison.violations > 0


def test_counterexample_probability_matches_poisson_law():
    rep = counterexample(1.0, TimeGrid(1.0, 4), paths=100_000, seed=7)
    assert rep.p_exact == pytest.approx(math.exp(-0.5), abs=1e-15)
    assert abs(rep.p_estimate - rep.p_exact) <= 4 * rep.p_stderr


def test_counterexample_problems_dominate():
    p1, p2 = counterexample_problems(2.0, 1.0)
    counts = np.array([[[0]], [[3]]])
    assert np.all(p2.terminal_values(counts) >= p1.terminal_values(counts))


@pytest.mark.parametrize("lam,T,t,expected", [
    (1.0, 1.0, 0.5, math.exp(-0.5)),
    (1.0, 1.0, 1.0, 0.0),
    (4.0, 1.0, 0.5, math.exp(-2.0)),            # N < 1
    (1.0, 3.0, 1.0, math.exp(-1.0) * 2.0),      # N < 2
])
def test_poisson_violation_probability(lam, T, t, expected):
    assert poisson_violation_probability(lam, T, t) == pytest.approx(expected, rel=1e-14)


@given(st.floats(0.1, 10), st.floats(0.0, 1.0), st.floats(0.0, 1.0))
def test_violation_probability_decreases_in_time(lam, s, u):
    t1, t2 = sorted((s, u))
    assert poisson_violation_probability(lam, 1.0, t2) <= poisson_violation_probability(lam, 1.0, t1) + 1e-15


def test_counterexample_rejects_bad_intensity():
    with pytest.raises(ValueError):
        counterexample(0.0, TimeGrid(1.0, 2), engine="tree")
