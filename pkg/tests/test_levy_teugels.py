import math

import numpy as np
import pytest
from hypothesis import assume, given
from hypothesis import strategies as st

from gbdsde.errors import NearSingularMomentMatrix
from gbdsde.levy_teugels import LevyJumpSpec, orthonormalize, power_moments, teugels_increments


def moment_cholesky_coeffs(spec):
    """Independent oracle: rows of inv(chol(G)) with G_kl = sum_j lambda_j a_j^(k+l+2)."""
    m = spec.m
    a, lam = spec.sizes, spec.rates
    G = np.array([[np.sum(lam * a**2 * a ** (k + l)) for l in range(m)] for k in range(m)])
    return np.linalg.inv(np.linalg.cholesky(G))


@st.composite
def jump_specs(draw, max_m=6, min_gap=1e-3):
    m = draw(st.integers(1, max_m))
    sizes = draw(st.lists(st.floats(-3, 3).filter(lambda x: abs(x) > 1e-3), min_size=m,
                          max_size=m))
    srt = np.sort(sizes)
    assume(m == 1 or np.min(np.diff(srt)) > min_gap)
    lam = draw(st.lists(st.floats(1e-3, 5.0), min_size=m, max_size=m))
    return LevyJumpSpec(tuple(sizes), tuple(lam))


# --- power moments ---------------------------------------------------------------

def test_power_moments_poisson_unit():
    np.testing.assert_array_equal(power_moments(LevyJumpSpec.poisson(1.0), 3), [1, 1, 1])


@pytest.mark.parametrize("k", [1, 2, 5])
def test_power_moments_single_atom(k):
    assert power_moments(LevyJumpSpec((1.0,), (2.0,)), k)[-1] == 2.0


def test_power_moments_two_sided_cancellation():
    mu = power_moments(LevyJumpSpec((1, -1), (1, 1)), 3)
    np.testing.assert_array_equal(mu, [0, 2, 0])


def test_power_moments_rejects_zero_order():
    with pytest.raises(ValueError):
        power_moments(LevyJumpSpec.poisson(1.0), 0)


# --- spec validation ---------------------------------------------------------------

@pytest.mark.parametrize("sizes,lam", [
    ((0.0,), (1.0,)),
    ((1.0, 1.0), (1.0, 2.0)),
    ((1.0,), (0.0,)),
    ((1.0,), (-1.0,)),
    ((1.0, 2.0), (1.0,)),
    ((), ()),
    ((np.inf,), (1.0,)),
])
def test_invalid_specs(sizes, lam):
    with pytest.raises(ValueError):
        LevyJumpSpec(sizes, lam)


def test_spec_is_immutable():
    spec = LevyJumpSpec.poisson(2.0)
    with pytest.raises(Exception):
        spec.intensities = (3.0,)


# --- orthonormalize -------------------------------------------------------------------

@pytest.mark.parametrize("lam", [0.25, 0.5, 1.0, 4.0, 9.0, 17.0])
def test_poisson_basis_is_inverse_sqrt(lam):
    b = orthonormalize(LevyJumpSpec.poisson(lam))
    assert b.m == 1
    assert b.coeffs[0, 0] == pytest.approx(1 / math.sqrt(lam), abs=1e-12)
    assert b.drift[0] == pytest.approx(math.sqrt(lam), abs=1e-12)


def test_two_sided_basis():
    b = orthonormalize(LevyJumpSpec((1, -1), (1, 1)))
    r = 1 / math.sqrt(2)
    np.testing.assert_allclose(b.coeffs, [[r, 0], [0, r]], atol=1e-15)
    assert b.q(1, 0.3) == pytest.approx(r)
    assert b.q(2, 0.3) == pytest.approx(0.3 * r)
    np.testing.assert_allclose(b.coeffs, moment_cholesky_coeffs(b.spec), atol=1e-14)


def test_index_beyond_dimension_is_an_error():
    b = orthonormalize(LevyJumpSpec((1, 2), (1, 1)))
    with pytest.raises(IndexError):
        b.q(3, 1.0)
    with pytest.raises(IndexError):
        b.q(0, 1.0)


def test_near_coincident_sizes_raise():
    with pytest.raises(NearSingularMomentMatrix) as exc:
        orthonormalize(LevyJumpSpec((1.0, 1.0 + 1e-14), (1.0, 1.0)))
    assert str(exc.value).startswith("NEAR_SINGULAR_MOMENT_MATRIX")


@given(jump_specs())
def test_identities_on_random_specs(spec):
    b = orthonormalize(spec)
    assert b.m == spec.m
    assert b.orthonormality_residual() <= 1e-10
    assert b.compensator_residual() <= 1e-10
    assert np.all(np.diag(b.coeffs) > 0)
    assert np.allclose(np.triu(b.coeffs, 1), 0)


@given(jump_specs(max_m=4, min_gap=0.2))
def test_matches_moment_cholesky_oracle(spec):
    b = orthonormalize(spec)
    oracle = moment_cholesky_coeffs(spec)
    scale = np.max(np.abs(oracle), axis=1, keepdims=True)
    np.testing.assert_allclose(b.coeffs / scale, oracle / scale, atol=1e-8)


@given(jump_specs(max_m=4, min_gap=0.2))
def test_coefficients_reproduce_atom_values(spec):
    b = orthonormalize(spec)
    assert b.coefficient_residual() <= 1e-9


def test_clustered_alphabet_keeps_identities():
    # gap 2e-3 between three atoms: the monomial coefficients cancel heavily
    spec = LevyJumpSpec((-1.3898080441501295, -1.3916227825942245, -2.5747092946190593,
                         -0.19674711704795422, -1.4147673603571889),
                        (0.5552898098425385, 3.5684084372869265, 1.1311653415073124,
                         2.563775694738573, 2.6599047653269565))
    b = orthonormalize(spec)
    assert b.orthonormality_residual() <= 1e-12
    assert b.compensator_residual() <= 1e-12
    assert b.coefficient_residual() > 1e-12  # the floor of the coefficient form is visible


# --- increments ------------------------------------------------------------------------

def test_increment_one_poisson_jump():
    b = orthonormalize(LevyJumpSpec.poisson(1.0))
    assert teugels_increments(b, [1], 0.1)[0] == pytest.approx(0.9, abs=1e-15)


@given(jump_specs(max_m=4), st.floats(0.0, 2.0))
def test_zero_counts_give_compensator(spec, dt):
    b = orthonormalize(spec)
    np.testing.assert_allclose(teugels_increments(b, np.zeros(spec.m), dt), -dt * b.drift)


def test_jump_map_column_two_sided():
    b = orthonormalize(LevyJumpSpec((1, -1), (1, 1)))
    r = 1 / math.sqrt(2)
    np.testing.assert_allclose(teugels_increments(b, [0, 1], 0.0), [-r, r], atol=1e-15)


def test_negative_dt_rejected():
    b = orthonormalize(LevyJumpSpec.poisson(1.0))
    with pytest.raises(ValueError):
        teugels_increments(b, [1], -0.1)


def test_increment_batch_shape():
    b = orthonormalize(LevyJumpSpec((1, 2, -1), (1, 1, 1)))
    out = teugels_increments(b, np.ones((5, 7, 3)), 0.1)
    assert out.shape == (5, 7, 3)


def test_monte_carlo_covariance_identity():
    spec = LevyJumpSpec((1.0, -0.5, 2.0), (1.5, 2.0, 0.5))
    b = orthonormalize(spec)
    dt, n = 0.1, 100_000
    rng = np.random.default_rng(12345)
    counts = rng.poisson(spec.rates * dt, size=(n, spec.m))
    dH = teugels_increments(b, counts, dt)
    for i in range(spec.m):
        for l in range(spec.m):
            prod = dH[:, i] * dH[:, l]
            se = prod.std() / math.sqrt(n)
            target = dt if i == l else 0.0
            assert abs(prod.mean() - target) <= 4 * se
        mean_se = dH[:, i].std() / math.sqrt(n)
        assert abs(dH[:, i].mean()) <= 4 * mean_se
