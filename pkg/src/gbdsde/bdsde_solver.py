"""Backward solvers for the discretised doubly stochastic equation with jumps.

One explicit backward step reads, with ``E_k`` the conditional expectation
given the jump history up to ``t_k`` and the Brownian increments after ``t_k``::

    (Yhat_k, Z_k) = martingale projection of Y_{k+1} on (1, dH_k)
    ghat_k        = E_k[g(t_{k+1}, Y_{k+1})]
    Y_k           = Yhat_k + f(t_k, Yhat_k, Z_k) dt + k(t_k, Yhat_k) dA_k + ghat_k dB_k

On a :class:`ScenarioTree` the projection is exact under the (truncated) tree
law; on a :class:`PathBundle` it is a least-squares regression on polynomial
features of the cumulative jump counts and the remaining Brownian increment.

All fields are stored on a flat state axis: ``Y`` has shape ``(N+1, S)`` and
``Z`` has shape ``(N, m, S)`` with ``S`` tree leaves or Monte Carlo paths.
"""
from __future__ import annotations

import itertools
import math
import warnings
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .errors import NonfiniteValue, PicardBudgetWarning, RegressionRankDeficient
from .generator_kit import GeneratorSpec, ProblemSpec, znorm
from .levy_teugels import TeugelsBasis, orthonormalize, teugels_increments
from .path_engine import PathBundle, ScenarioTree

RANK_TOL = 1e-10
MONOTONE_TOL = 1e-9
SECTIONS = 20
MIN_SECTION_PATHS = 500


@dataclass(frozen=True)
class SchemeConfig:
    engine: str = "tree"
    degree: int = 2
    paths: int = 10_000
    cap: int = 2
    picard_tol: float = 1e-6
    picard_max_iters: int = 200
    approx_index: Optional[float] = None

    def __post_init__(self):
        if self.engine not in ("tree", "regression"):
            raise ValueError("engine must be 'tree' or 'regression'")
        if not self.picard_tol > 0:
            raise ValueError("picard_tol must be positive")
        if self.picard_max_iters < 1:
            raise ValueError("picard_max_iters must be >= 1")
        if self.degree < 0:
            raise ValueError("degree must be >= 0")


# --- conditional expectation engines ----------------------------------------------

class TreeConditioner:
    """Exact conditional expectations on a scenario tree."""

    kind = "tree"

    def __init__(self, tree: ScenarioTree, basis: TeugelsBasis):
        self.tree = tree
        self.basis = basis
        self.grid = tree.grid
        self.N = tree.grid.steps
        self.m = basis.m
        self.K = tree.n_patterns
        self.S = tree.n_leaves
        self.weights = tree.leaf_probs
        self.dA = np.asarray(tree.dA, dtype=float)
        self.counts = tree.leaf_counts
        self._dB = tree.leaf_brownian
        # dH for each count pattern, (m, K)
        self._dH_pattern = teugels_increments(basis, tree.patterns, self.grid.dt).T
        self._moments = []
        for k in range(self.N):
            w = tree.pattern_probs[k]
            mean = self._dH_pattern @ w
            cen = self._dH_pattern - mean[:, None]
            cov = (cen * w[None, :]) @ cen.T
            self._moments.append((w, mean, cen, np.linalg.pinv(cov, rcond=1e-13, hermitian=True)))

    def _split(self, k):
        return self.K**k, self.K, self.K ** (self.N - k - 1) * 2**self.N

    def dH(self, k):
        pre, K, post = self._split(k)
        out = np.broadcast_to(self._dH_pattern[:, None, :, None], (self.m, pre, K, post))
        return out.reshape(self.m, self.S)

    def dB(self, k):
        return self._dB[:, k]

    def expect(self, k, X):
        X = np.asarray(X, dtype=float)
        lead = X.shape[:-1]
        pre, K, post = self._split(k)
        Xr = X.reshape(lead + (pre, K, post))
        w = self._moments[k][0]
        # anchored on the first child so that node-constant X is reproduced bit for bit
        x0 = Xr[..., :1, :]
        e = x0[..., 0, :] + np.einsum("n,...pnq->...pq", w, Xr - x0)
        return np.broadcast_to(e[..., :, None, :], Xr.shape).reshape(X.shape)

    def decompose(self, k, X):
        """Least-squares split ``X = a + Z . dH_k + remainder`` under the tree law.

        Returns ``(a, Z)`` with ``a`` shaped like ``X`` and ``Z`` of shape (m, S).
        """
        X = np.asarray(X, dtype=float)
        pre, K, post = self._split(k)
        Xr = X.reshape(pre, K, post)
        w, mean, cen, cov_inv = self._moments[k]
        # anchoring on one child makes node-constant X give a == X and Z == 0 exactly
        x0 = Xr[:, :1, :]
        ex = x0[:, 0, :] + np.einsum("n,pnq->pq", w, Xr - x0)
        cov_hx = np.einsum("in,pnq->ipq", cen * w[None, :], Xr - x0)
        Z = np.einsum("ij,jpq->ipq", cov_inv, cov_hx)
        a = ex - np.einsum("i,ipq->pq", mean, Z)
        a_full = np.broadcast_to(a[:, None, :], (pre, K, post)).reshape(self.S)
        Z_full = np.broadcast_to(Z[:, :, None, :], (self.m, pre, K, post)).reshape(self.m, self.S)
        return a_full, Z_full

    def mean(self, X):
        return np.sum(np.asarray(X) * self.weights, axis=-1)


def _monomial_exponents(nvars, degree):
    exps = [e for d in range(degree + 1) for e in itertools.product(range(d + 1), repeat=nvars)
            if sum(e) == d]
    return sorted(set(exps), key=lambda e: (sum(e), tuple(-x for x in e)))


class RegressionConditioner:
    """Least-squares Monte Carlo projections on a path bundle.

    Features at step ``k`` are monomials up to ``degree`` in the cumulative jump
    counts per size on ``(0, t_k]`` and in ``B_T - B_{t_{k+1}}``.  Columns that
    are constant across paths (e.g. counts at ``k = 0``) are dropped; the rest are
    standardised before the normal equations are solved.
    """

    kind = "regression"

    def __init__(self, bundle: PathBundle, basis: TeugelsBasis, degree: int = 2):
        self.bundle = bundle
        self.basis = basis
        self.grid = bundle.grid
        self.N = bundle.grid.steps
        self.m = basis.m
        self.S = bundle.paths
        self.degree = degree
        self.weights = np.full(self.S, 1.0 / self.S)
        self.dA = np.asarray(bundle.dA, dtype=float)
        self.counts = bundle.counts
        self._dH = teugels_increments(basis, bundle.counts, self.grid.dt)  # (P, N, m)
        self._exps = _monomial_exponents(self.m + 1, degree)
        rem = np.cumsum(bundle.brownian[:, ::-1], axis=1)[:, ::-1]  # B_T - B_{t_k}
        self._remaining = np.concatenate([rem, np.zeros((self.S, 1))], axis=1)
        self._cache = {}

    def dH(self, k):
        return self._dH[:, k, :].T

    def dB(self, k):
        return self.bundle.brownian[:, k]

    def features(self, k):
        if k in self._cache:
            return self._cache[k]
        vars_ = np.column_stack([self.bundle.cumulative_counts(k).astype(float),
                                 self._remaining[:, k + 1]])
        cols = [np.prod(vars_ ** np.array(e)[None, :], axis=1) for e in self._exps]
        X = np.column_stack(cols)
        keep = [0]
        for j in range(1, X.shape[1]):
            sd = X[:, j].std()
            if sd > 1e-12 * (1.0 + abs(X[:, j].mean())):
                keep.append(j)
        X = X[:, keep]
        mu = X[:, 1:].mean(axis=0)
        sd = X[:, 1:].std(axis=0)
        X[:, 1:] = (X[:, 1:] - mu) / sd
        gram = X.T @ X / self.S
        try:
            L = np.linalg.cholesky(gram)
        except np.linalg.LinAlgError:
            raise RegressionRankDeficient(f"step {k}: normal equations not positive definite") from None
        pivot = float(np.min(np.diag(L)) ** 2)
        if pivot < RANK_TOL:
            raise RegressionRankDeficient(f"step {k}: normal-equation pivot {pivot:.3e} < {RANK_TOL}")
        self._cache[k] = (X, L)
        return X, L

    def expect(self, k, X):
        X = np.asarray(X, dtype=float)
        Phi, L = self.features(k)
        rhs = Phi.T @ X.reshape(-1, self.S).T / self.S
        coef = np.linalg.solve(L.T, np.linalg.solve(L, rhs))
        return (Phi @ coef).T.reshape(X.shape)

    def decompose(self, k, X):
        X = np.asarray(X, dtype=float)
        # E_k[dH] = 0, so centring X first leaves Z unbiased and strips the noise
        # that the predictable part of X would otherwise contribute
        a = self.expect(k, X)
        Z = self.expect(k, (X - a)[None, :] * self.dH(k))
        return a, Z / self.grid.dt

    def mean(self, X):
        return np.mean(np.asarray(X), axis=-1)


def make_conditioner(noise, levy=None, degree: int = 2):
    if isinstance(noise, (TreeConditioner, RegressionConditioner)):
        return noise
    basis = orthonormalize(noise.spec if levy is None else levy)
    if isinstance(noise, ScenarioTree):
        return TreeConditioner(noise, basis)
    if isinstance(noise, PathBundle):
        return RegressionConditioner(noise, basis, degree)
    raise TypeError(f"unsupported noise object {type(noise).__name__}")


# --- solutions ----------------------------------------------------------------------

@dataclass
class GridSolution:
    """Discrete ``(Y, Z)`` on a flat state axis plus diagnostics.

    ``Yhat[k]`` is the value the drivers consumed at step ``k``.
    """

    Y: np.ndarray
    Z: np.ndarray
    weights: np.ndarray
    dt: float
    dA: np.ndarray
    Yhat: Optional[np.ndarray] = None
    engine: str = "tree"
    diagnostics: dict = field(default_factory=dict)

    @property
    def steps(self) -> int:
        return self.Z.shape[0]

    @property
    def y0(self) -> float:
        return float(np.sum(self.weights * self.Y[0]))

    @property
    def y0_stderr(self) -> float:
        return float(self.diagnostics.get("y0_stderr", 0.0))


def em_norm_parts(sol: GridSolution):
    """Squared discrete norm split into sup, dA-integral and Z-integral terms."""
    sup = np.max(sol.Y**2, axis=0)
    a_int = np.sum(sol.Y[:-1] ** 2 * sol.dA[:, None], axis=0)
    z_int = np.sum(np.sum(sol.Z**2, axis=1), axis=0) * sol.dt
    w = sol.weights
    return float(np.sum(w * sup)), float(np.sum(w * a_int)), float(np.sum(w * z_int))


def em_norm(sol: GridSolution) -> float:
    """``E[max_k |Y_k|^2 + sum_k |Y_k|^2 dA_k + sum_k |Z_k|^2 dt]`` (squared norm)."""
    return float(sum(em_norm_parts(sol)))


# --- the backward scheme ----------------------------------------------------------------

def _terminal(prob: ProblemSpec, cond):
    return prob.terminal_values(cond.counts)


def _check_finite(arr, what, k):
    if not np.all(np.isfinite(arr)):
        raise NonfiniteValue(f"{what} is not finite at step {k}")


def backward_solve(cond, xi, driver: Callable, g: Callable) -> GridSolution:
    """Run the explicit scheme with ``driver(k, t, y, z) -> (f_value, k_value)``."""
    N, S, m = cond.N, cond.S, cond.m
    dt = cond.grid.dt
    nodes = cond.grid.nodes
    Y = np.empty((N + 1, S))
    Z = np.empty((N, m, S))
    Yhat = np.empty((N, S))
    target0 = None
    Y[N] = xi
    for k in range(N - 1, -1, -1):
        a, z = cond.decompose(k, Y[k + 1])
        ghat = cond.expect(k, g(nodes[k + 1], Y[k + 1]))
        fv, kv = driver(k, nodes[k], a, z)
        Y[k] = a + fv * dt + kv * cond.dA[k] + ghat * cond.dB(k)
        _check_finite(Y[k], "Y", k)
        _check_finite(z, "Z", k)
        Z[k], Yhat[k] = z, a
        if k == 0:
            target0 = Y[1] + (Y[0] - a)
    diag = {}
    if cond.kind == "regression":
        diag["y0_stderr"] = float(np.std(target0) / math.sqrt(S))
    sol = GridSolution(Y=Y, Z=Z, weights=cond.weights, dt=dt, dA=cond.dA, Yhat=Yhat,
                       engine=cond.kind, diagnostics=diag)
    sol.diagnostics["em_norm"] = em_norm(sol)
    return sol


def sectioned_stderr(cond, run, sections: int = SECTIONS):
    """Batch-means standard error of ``Y_0`` for a regression solve.

    The bundle is split into ``sections`` disjoint blocks, each solved on its
    own; the spread of the block estimates, divided by ``sqrt(sections)``,
    estimates the error of the full-bundle estimate.  This captures the noise
    that enters through the regression coefficients, which a pathwise formula
    misses.  Returns ``None`` when the bundle is too small to split.
    """
    if cond.kind != "regression" or cond.S < sections * MIN_SECTION_PATHS:
        return None
    blocks = np.array_split(np.arange(cond.S), sections)
    est = []
    for idx in blocks:
        sub = RegressionConditioner(cond.bundle.subset(idx), cond.basis, cond.degree)
        try:
            est.append(run(sub).y0)
        except RegressionRankDeficient:
            continue
    if len(est) < 2:
        return None
    return float(np.std(est, ddof=1) / math.sqrt(len(est)))


def _with_stderr(cond, run):
    sol = run(cond)
    se = sectioned_stderr(cond, run)
    if se is not None:
        sol.diagnostics["y0_stderr_pathwise"] = sol.diagnostics.get("y0_stderr")
        sol.diagnostics["y0_stderr"] = se
    return sol


def _generator_driver(gen: GeneratorSpec):
    def driver(k, t, y, z):
        return gen.f(t, y, z), gen.k(t, y)
    return driver


def solve_lipschitz(prob: ProblemSpec, noise, cfg: SchemeConfig = SchemeConfig()) -> GridSolution:
    cond = make_conditioner(noise, prob.levy, cfg.degree)
    gen = prob.generator

    def run(c):
        return backward_solve(c, _terminal(prob, c), _generator_driver(gen), gen.g)
    return _with_stderr(cond, run)


def bounding_driver(gen: GeneratorSpec, side: str):
    """Drivers ``-/+ (f_bar + K|y| + K|z|)`` and ``-/+ (k_bar + K|y|)``."""
    if side not in ("lower", "upper"):
        raise ValueError("side must be 'lower' or 'upper'")
    sgn = -1.0 if side == "lower" else 1.0
    K = gen.K

    def driver(k, t, y, z):
        return (sgn * (gen.f_bar + K * np.abs(y) + K * znorm(z)),
                sgn * (gen.k_bar + K * np.abs(y)))
    return driver


def solve_bounding(prob: ProblemSpec, noise, cfg: SchemeConfig = SchemeConfig(),
                   side: str = "lower") -> GridSolution:
    cond = make_conditioner(noise, prob.levy, cfg.degree)
    driver = bounding_driver(prob.generator, side)

    def run(c):
        return backward_solve(c, _terminal(prob, c), driver, prob.generator.g)
    sol = _with_stderr(cond, run)
    sol.diagnostics["side"] = side
    return sol


# --- monotone Picard iteration ------------------------------------------------------------

@dataclass
class IterateRecord:
    n: int
    sup_diff: float
    em_norm: float
    monotone_margin: float
    lower_margin: float
    upper_margin: float


@dataclass
class PicardLog:
    side: str
    records: list = field(default_factory=list)
    converged: bool = False
    exhausted: bool = False
    lower: Optional[GridSolution] = None
    upper: Optional[GridSolution] = None

    @property
    def code(self):
        return PicardBudgetWarning.code if self.exhausted else "OK"

    @property
    def iterations(self) -> int:
        return self.records[-1].n if self.records else 0

    @property
    def monotonicity_violations(self) -> int:
        return sum(1 for r in self.records if r.monotone_margin < -MONOTONE_TOL)

    @property
    def sandwich_violations(self) -> int:
        return sum(1 for r in self.records
                   if r.lower_margin < -MONOTONE_TOL or r.upper_margin < -MONOTONE_TOL)

    @property
    def clean(self) -> bool:
        return self.monotonicity_violations == 0 and self.sandwich_violations == 0


def _frozen_driver(gen: GeneratorSpec, prev: GridSolution, h, p):
    """Driver of iterate n frozen at the previous iterate's driver inputs (Yhat, Z)."""

    def driver(k, t, y, z):
        yp, zp = prev.Yhat[k], prev.Z[k]
        fv = gen.f(t, yp, zp) + h(y - yp, z - zp)
        kv = gen.k(t, yp) + p(y - yp)
        return fv, kv
    return driver


def _picard(prob, noise, cfg, side):
    cond = make_conditioner(noise, prob.levy, cfg.degree)
    gen = prob.generator
    xi = _terminal(prob, cond)
    lower = backward_solve(cond, xi, bounding_driver(gen, "lower"), gen.g)
    upper = backward_solve(cond, xi, bounding_driver(gen, "upper"), gen.g)
    if side == "minimal":
        start, h, p, sign = lower, gen.h, gen.p, 1.0
    else:
        start, h, p, sign = upper, gen.upper_h, gen.upper_p, -1.0
    log = PicardLog(side=side, lower=lower, upper=upper)
    log.records.append(IterateRecord(0, float("nan"), start.diagnostics["em_norm"], 0.0,
                                     float(np.min(start.Y - lower.Y)),
                                     float(np.min(upper.Y - start.Y))))
    prev = start
    for n in range(1, cfg.picard_max_iters + 1):
        cur = backward_solve(cond, xi, _frozen_driver(gen, prev, h, p), gen.g)
        diff = cur.Y - prev.Y
        sup = float(np.max(np.abs(diff)))
        log.records.append(IterateRecord(
            n=n, sup_diff=sup, em_norm=cur.diagnostics["em_norm"],
            monotone_margin=float(np.min(sign * diff)),
            lower_margin=float(np.min(cur.Y - lower.Y)),
            upper_margin=float(np.min(upper.Y - cur.Y))))
        cur.diagnostics["iteration"] = n
        prev = cur
        if sup < cfg.picard_tol:
            log.converged = True
            break
    else:
        log.exhausted = True
        warnings.warn(f"{side} Picard iteration stopped after {cfg.picard_max_iters} iterates "
                      f"(sup-diff {log.records[-1].sup_diff:.3e})", PicardBudgetWarning,
                      stacklevel=3)
    prev.diagnostics["picard_converged"] = log.converged
    return prev, log


def solve_minimal(prob: ProblemSpec, noise, cfg: SchemeConfig = SchemeConfig()):
    """Increasing Picard iteration from the lower bounding solution.

    Iterate ``n`` uses ``f(t, Yhat^{n-1}, Z^{n-1}) + h(y - Yhat^{n-1}, z - Z^{n-1})``
    and ``k(t, Yhat^{n-1}) + p(y - Yhat^{n-1})`` on the same noise.
    """
    return _picard(prob, noise, cfg, "minimal")


def solve_maximal(prob: ProblemSpec, noise, cfg: SchemeConfig = SchemeConfig()):
    """Decreasing Picard iteration from the upper bounding solution (reversed envelopes)."""
    return _picard(prob, noise, cfg, "maximal")


# --- residual ----------------------------------------------------------------------------

def residual(prob: ProblemSpec, sol: GridSolution, noise, degree: int = 2) -> np.ndarray:
    """Per-state max over steps of the projected one-step defect.

    The pathwise defect is
    ``D_k = Y_k - [Y_{k+1} + f dt + k dA_k + ghat dB_k - Z_k . dH_k]`` with the
    drivers evaluated at ``E_k[Y_{k+1} - Z_k . dH_k]``.  The part of ``D_k``
    orthogonal to ``(1, dH_k)`` is an unhedgeable martingale remainder that the
    discrete scheme legitimately leaves behind; it is removed and the
    projection onto ``(1, dH_k)`` is reported.
    """
    cond = make_conditioner(noise, prob.levy, degree)
    gen = prob.generator
    nodes = cond.grid.nodes
    dt = cond.grid.dt
    N = cond.N
    Y = np.asarray(sol.Y, dtype=float)
    Z = np.asarray(sol.Z, dtype=float)
    out = np.zeros(cond.S)
    for k in range(N):
        dH = cond.dH(k)
        hedge = np.sum(Z[k] * dH, axis=0)
        yhat = cond.expect(k, Y[k + 1] - hedge)
        ghat = cond.expect(k, gen.g(nodes[k + 1], Y[k + 1]))
        drift = gen.f(nodes[k], yhat, Z[k]) * dt + gen.k(nodes[k], yhat) * cond.dA[k]
        D = Y[k] - (Y[k + 1] + drift + ghat * cond.dB(k) - hedge)
        a, c = cond.decompose(k, D)
        proj = a + np.sum(c * dH, axis=0)
        out = np.maximum(out, np.abs(proj))
    return out
