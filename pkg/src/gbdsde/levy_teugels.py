"""Teugels martingale basis for a pure-jump Lévy process with finitely many jump sizes.

The process jumps by ``a_j`` at rate ``lambda_j`` (j = 1..m) and has no Gaussian
part, so the Lévy measure is ``sum_j lambda_j * delta_{a_j}``.  The orthonormal
polynomials ``q_i`` are obtained by Gram-Schmidt on ``1, x, ..., x^{m-1}``
against the discrete measure with mass ``lambda_j * a_j**2`` at ``a_j``; the
martingale ``H^(i)`` then jumps by ``a_j * q_i(a_j)`` whenever the process jumps
by ``a_j`` and is compensated by the drift ``d_i * t``.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import mpmath as mp
import numpy as np

from .errors import NearSingularMomentMatrix

PIVOT_TOL = 1e-12


@dataclass(frozen=True)
class LevyJumpSpec:
    """Jump alphabet: sizes ``a_j`` and intensities ``lambda_j``."""

    jump_sizes: tuple
    intensities: tuple

    def __post_init__(self):
        a = tuple(float(x) for x in np.atleast_1d(self.jump_sizes))
        lam = tuple(float(x) for x in np.atleast_1d(self.intensities))
        object.__setattr__(self, "jump_sizes", a)
        object.__setattr__(self, "intensities", lam)
        if len(a) < 1:
            raise ValueError("need at least one jump size")
        if len(a) != len(lam):
            raise ValueError(f"{len(a)} jump sizes but {len(lam)} intensities")
        if not all(np.isfinite(a)) or not all(np.isfinite(lam)):
            raise ValueError("jump sizes and intensities must be finite")
        if any(x == 0.0 for x in a):
            raise ValueError("jump sizes must be nonzero")
        if len(set(a)) != len(a):
            raise ValueError("jump sizes must be pairwise distinct")
        if any(x <= 0.0 for x in lam):
            raise ValueError("intensities must be strictly positive")

    @classmethod
    def poisson(cls, intensity: float) -> "LevyJumpSpec":
        return cls((1.0,), (intensity,))

    @classmethod
    def from_pairs(cls, pairs) -> "LevyJumpSpec":
        pairs = list(pairs)
        return cls(tuple(p[0] for p in pairs), tuple(p[1] for p in pairs))

    @property
    def m(self) -> int:
        return len(self.jump_sizes)

    @property
    def sizes(self) -> np.ndarray:
        return np.array(self.jump_sizes)

    @property
    def rates(self) -> np.ndarray:
        return np.array(self.intensities)

    @property
    def total_intensity(self) -> float:
        return float(sum(self.intensities))


def power_moments(spec: LevyJumpSpec, up_to: int) -> np.ndarray:
    """Return ``mu_k = sum_j lambda_j a_j**k`` for ``k = 1..up_to``."""
    if up_to < 1:
        raise ValueError("up_to must be >= 1")
    k = np.arange(1, up_to + 1)
    return np.sum(spec.rates[None, :] * spec.sizes[None, :] ** k[:, None], axis=1)


@dataclass(frozen=True)
class TeugelsBasis:
    """Orthonormal polynomial coefficients and the induced jump/drift maps.

    ``coeffs[i, k]`` multiplies ``x**k`` in ``q_{i+1}`` (lower triangular).
    ``jump_map[i, j] = a_j * q_{i+1}(a_j)`` is the jump of ``H^(i+1)`` at a jump
    of size ``a_j``; ``drift[i]`` is its compensator rate.
    """

    spec: LevyJumpSpec
    coeffs: np.ndarray
    power_moments: np.ndarray
    drift: np.ndarray
    jump_map: np.ndarray = field(repr=False)
    atom_values: np.ndarray = field(default=None, repr=False)  # q_{i+1}(a_j), correctly rounded

    @property
    def m(self) -> int:
        return self.coeffs.shape[0]

    def q(self, i: int, x):
        """Evaluate ``q_i`` (1-based) at ``x``; ``i > m`` is an error since ``H^(i) = 0`` there."""
        if not 1 <= i <= self.m:
            raise IndexError(f"basis has {self.m} polynomials, asked for q_{i}")
        return np.polynomial.polynomial.polyval(np.asarray(x, dtype=float), self.coeffs[i - 1, :i])

    def q_values(self) -> np.ndarray:
        """Matrix ``Q[i, j] = q_{i+1}(a_j)`` at the atoms."""
        if self.atom_values is not None:
            return self.atom_values
        return self.coefficient_values()

    def coefficient_values(self) -> np.ndarray:
        """``q_{i+1}(a_j)`` re-evaluated from the double-precision monomial coefficients."""
        vander = self.spec.sizes[None, :] ** np.arange(self.m)[:, None]
        return self.coeffs @ vander

    def coefficient_residual(self) -> float:
        """Gap between coefficient evaluation and the atom values, relative to ``max |q|``.

        This is the conditioning floor of the monomial representation (about
        ``eps`` times the size of the cancelling terms); it is reported, not bounded.
        """
        Q = self.q_values()
        return float(np.max(np.abs(self.coefficient_values() - Q)) / np.max(np.abs(Q)))

    def gram(self) -> np.ndarray:
        w = self.spec.rates * self.spec.sizes**2
        Q = self.q_values()
        return (Q * w[None, :]) @ Q.T

    def orthonormality_residual(self) -> float:
        return float(np.max(np.abs(self.gram() - np.eye(self.m))))

    def compensator_residual(self) -> float:
        direct = self.jump_map @ self.spec.rates
        return float(np.max(np.abs(direct - self.drift)))


def orthonormalize(spec: LevyJumpSpec, digits: int = 40) -> TeugelsBasis:
    """Gram-Schmidt the monomials against ``sum_j lambda_j a_j^2 delta_{a_j}``.

    Modified Gram-Schmidt with one re-orthogonalisation pass, carried out on
    polynomial coefficient vectors alongside their values at the atoms.  The
    arithmetic runs at ``digits`` significant digits and every output is then
    rounded once to double precision: monomial coefficients of clustered jump
    alphabets cancel heavily, and rounding them early would cost ``eps * cond``
    in the identities downstream.
    """
    m = spec.m
    with mp.workdps(digits):
        a = [mp.mpf(x) for x in spec.jump_sizes]
        lam = [mp.mpf(x) for x in spec.intensities]
        w = [l_ * x * x for l_, x in zip(lam, a)]

        def inner(u, v):
            return mp.fsum(wj * uj * vj for wj, uj, vj in zip(w, u, v))

        coeffs = [[mp.mpf(0)] * m for _ in range(m)]
        values = [[mp.mpf(0)] * m for _ in range(m)]
        for i in range(m):
            c = [mp.mpf(0)] * m
            c[i] = mp.mpf(1)
            v = [x**i for x in a]
            for _ in range(2):
                for l in range(i):
                    r = inner(values[l], v)
                    v = [vj - r * lj for vj, lj in zip(v, values[l])]
                    c = [cj - r * lj for cj, lj in zip(c, coeffs[l])]
            nrm = mp.sqrt(inner(v, v))
            if nrm < PIVOT_TOL:
                raise NearSingularMomentMatrix(
                    f"pivot norm {float(nrm):.3e} at degree {i}; jump sizes nearly coincide"
                )
            sgn = 1 if c[i] > 0 else -1  # sign convention: positive leading coefficient
            coeffs[i] = [sgn * cj / nrm for cj in c]
            values[i] = [sgn * vj / nrm for vj in v]
        mu = [mp.fsum(l_ * x**k for l_, x in zip(lam, a)) for k in range(1, 2 * m + 1)]
        # d_i = sum_k c_{i,k} mu_k is the compensator rate of sum_k c_{i,k} T^(k)
        drift = [mp.fsum(coeffs[i][k] * mu[k] for k in range(m)) for i in range(m)]
        jump_map = [[a[j] * values[i][j] for j in range(m)] for i in range(m)]

        def to_np(x):
            return np.array([[float(e) for e in row] for row in x])

        return TeugelsBasis(spec=spec, coeffs=to_np(coeffs), power_moments=to_np([mu])[0],
                            drift=to_np([drift])[0], jump_map=to_np(jump_map),
                            atom_values=to_np(values))


def teugels_increments(basis: TeugelsBasis, counts, dt: float) -> np.ndarray:
    """Increment of ``H^(1..m)`` over an interval of length ``dt``.

    ``counts[..., j]`` is the number of jumps of size ``a_j``; the result has the
    same leading shape with a trailing axis of length m.
    """
    if dt < 0:
        raise ValueError("dt must be nonnegative")
    counts = np.asarray(counts, dtype=float)
    return counts @ basis.jump_map.T - dt * basis.drift
