"""Comparison experiments: difference quotients, the jump condition, and the Poisson counter-example."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.stats import poisson, qmc

from .bdsde_solver import GridSolution, SchemeConfig, make_conditioner, residual, solve_lipschitz
from .errors import PreconditionDominanceFailed
from .generator_kit import GeneratorSpec, ProblemSpec, generator_catalog, terminal_catalog
from .levy_teugels import LevyJumpSpec, TeugelsBasis, orthonormalize
from .path_engine import TimeGrid, build_tree, simulate_paths

VIOLATION_TOL = 1e-9


def beta_quotients(f, t, y2, z1, z2) -> np.ndarray:
    """Coordinatewise difference quotients of ``f`` in ``z`` along the interleaved path.

    ``z1`` and ``z2`` have shape ``(m, ...)``; step ``i`` swaps coordinate ``i``
    from ``z1`` to ``z2``.  The quotients telescope:
    ``sum_i beta_i (z2_i - z1_i) = f(t, y2, z2) - f(t, y2, z1)``.
    """
    z1 = np.asarray(z1, dtype=float)
    z2 = np.asarray(z2, dtype=float)
    z1, z2 = np.broadcast_arrays(z1, z2)
    m = z1.shape[0]
    cur = z1.copy()
    f_prev = np.asarray(f(t, y2, cur), dtype=float)
    beta = np.zeros(np.broadcast(z1, f_prev[None]).shape)
    for i in range(m):
        cur = cur.copy()
        cur[i] = z2[i]
        f_cur = np.asarray(f(t, y2, cur), dtype=float)
        dz = z2[i] - z1[i]
        moved = dz != 0
        beta[i] = np.where(moved, (f_cur - f_prev) / np.where(moved, dz, 1.0), 0.0)
        f_prev = f_cur
    return beta


@dataclass
class JumpCondition:
    margins: np.ndarray   # (n_sizes, ...) = 1 + sum_i beta_i a_j q_i(a_j)
    satisfied: bool

    @property
    def min_margin(self) -> float:
        return float(np.min(self.margins))


def jump_condition(beta, basis: TeugelsBasis) -> JumpCondition:
    """Evaluate ``1 + sum_i beta_i dH^(i)`` at every jump size.

    Between jumps ``dH`` has no atom, so checking each jump size is exhaustive.
    """
    beta = np.asarray(beta, dtype=float)
    margins = 1.0 + np.tensordot(basis.jump_map.T, beta, axes=([1], [0]))
    return JumpCondition(margins=margins, satisfied=bool(np.min(margins) > 0))


@dataclass
class ComparisonReport:
    beta: np.ndarray                    # (N, m, S)
    margins: np.ndarray                 # worst margin per jump size
    step_min_margin: np.ndarray         # (N,)
    satisfied: bool
    violations: int
    worst_gap: float
    step_violations: np.ndarray         # (N+1,)
    p_violation: np.ndarray             # (N+1,) probability of Y2 < Y1
    p_stderr: np.ndarray
    extras: dict = field(default_factory=dict)

    def summary(self) -> dict:
        return {
            "margins": self.margins.tolist(),
            "min_margin": float(np.min(self.margins)),
            "satisfied": self.satisfied,
            "violations": int(self.violations),
            "worst_gap": float(self.worst_gap),
            "max_p_violation": float(np.max(self.p_violation)),
            **self.extras,
        }


def _violation_stats(Y1, Y2, weights, engine, tol):
    below = Y2 < Y1 - tol
    step_viol = below.sum(axis=1)
    p = below.astype(float) @ weights
    if engine == "regression":
        se = np.sqrt(np.clip(p * (1 - p), 0, None) / Y1.shape[1])
    else:
        se = np.zeros_like(p)
    gap = float(np.max(Y1 - Y2)) if Y1.size else 0.0
    return int(step_viol.sum()), max(gap, 0.0), step_viol, p, se


def compare_solutions(f1, sol1: GridSolution, sol2: GridSolution, basis: TeugelsBasis,
                      nodes, tol: float = VIOLATION_TOL) -> ComparisonReport:
    """Report for a pair of solutions on common noise; beta uses ``f1`` along ``(Yhat2, Z2, Z1)``."""
    N = sol1.steps
    betas = np.empty_like(sol2.Z)
    step_min = np.empty(N)
    worst = np.full(basis.m, np.inf)
    for k in range(N):
        b = beta_quotients(f1, nodes[k], sol2.Yhat[k], sol1.Z[k], sol2.Z[k])
        betas[k] = b
        jc = jump_condition(b, basis)
        step_min[k] = jc.min_margin
        worst = np.minimum(worst, jc.margins.min(axis=1))
    viol, gap, step_viol, p, se = _violation_stats(sol1.Y, sol2.Y, sol1.weights, sol1.engine, tol)
    return ComparisonReport(beta=betas, margins=worst, step_min_margin=step_min,
                            satisfied=bool(worst.min() > 0), violations=viol, worst_gap=gap,
                            step_violations=step_viol, p_violation=p, p_stderr=se)


def check_dominance(prob1: ProblemSpec, prob2: ProblemSpec, cond, sols, n_samples=2000,
                    box_margin=1.0, seed=0):
    """Sampled check of ``xi2 >= xi1``, ``f2 >= f1``, ``k2 >= k1``; raises with a witness."""
    xi1 = prob1.terminal_values(cond.counts)
    xi2 = prob2.terminal_values(cond.counts)
    if np.any(xi2 < xi1 - VIOLATION_TOL):
        i = int(np.argmin(xi2 - xi1))
        raise PreconditionDominanceFailed("xi2 < xi1", {"state": i, "xi1": float(xi1[i]),
                                                        "xi2": float(xi2[i])})
    lo = min(float(np.min(s.Y)) for s in sols) - box_margin
    hi = max(float(np.max(s.Y)) for s in sols) + box_margin
    zlo = min(float(np.min(s.Z)) for s in sols) - box_margin
    zhi = max(float(np.max(s.Z)) for s in sols) + box_margin
    m = cond.m
    pts = qmc.Halton(d=2 + m, seed=seed).random(n_samples)
    t = pts[:, 0] * cond.grid.horizon
    y = lo + (hi - lo) * pts[:, 1]
    z = (zlo + (zhi - zlo) * pts[:, 2:]).T
    # add the realised driver inputs of both solutions
    nodes = cond.grid.nodes
    for s in sols:
        for k in range(s.steps):
            t = np.concatenate([t, np.full(s.Yhat[k].size, nodes[k])])
            y = np.concatenate([y, s.Yhat[k]])
            z = np.concatenate([z, s.Z[k]], axis=1)
    g1, g2 = prob1.generator, prob2.generator
    df = g2.f(t, y, z) - g1.f(t, y, z)
    dk = g2.k(t, y) - g1.k(t, y)
    for name, d in (("f", df), ("k", dk)):
        d = np.broadcast_to(d, t.shape)
        if np.any(d < -VIOLATION_TOL):
            i = int(np.argmin(d))
            raise PreconditionDominanceFailed(
                f"{name}2 < {name}1", {"t": float(t[i]), "y": float(y[i]),
                                       "z": z[:, i].tolist(), "gap": float(d[i])})


def run_comparison(prob1: ProblemSpec, prob2: ProblemSpec, noise, cfg: SchemeConfig = SchemeConfig(),
                   tol: float = VIOLATION_TOL) -> ComparisonReport:
    """Solve both problems on common noise and count nodewise violations of ``Y2 >= Y1``."""
    cond = make_conditioner(noise, prob1.levy, cfg.degree)
    sol1 = solve_lipschitz(prob1, cond, cfg)
    sol2 = solve_lipschitz(prob2, cond, cfg)
    check_dominance(prob1, prob2, cond, (sol1, sol2))
    rep = compare_solutions(prob1.generator.f, sol1, sol2, cond.basis, cond.grid.nodes, tol)
    rep.extras.update({"y0_1": sol1.y0, "y0_2": sol2.y0, "engine": cond.kind})
    rep.extras["solutions"] = (sol1, sol2)
    return rep


# --- the Poisson counter-example ------------------------------------------------------

@dataclass
class CounterexampleReport:
    intensity: float
    margin: float
    satisfied: bool
    residual_max: float
    t_eval: float
    p_estimate: float
    p_stderr: float
    p_exact: float
    comparison: ComparisonReport

    def summary(self) -> dict:
        return {
            "lambda": self.intensity,
            "margin": self.margin,
            "satisfied": self.satisfied,
            "residual_max": self.residual_max,
            "t_eval": self.t_eval,
            "p_estimate": self.p_estimate,
            "p_stderr": self.p_stderr,
            "p_exact": self.p_exact,
            "violations": int(self.comparison.violations),
        }


def counterexample_problems(lam: float, horizon: float):
    spec = LevyJumpSpec.poisson(lam)
    gen = generator_catalog(f"counterexample:{lam}")
    p2 = ProblemSpec(terminal_catalog(f"counterexample:{lam}", spec), gen, spec, "zero", horizon,
                     name="counterexample_xi2")
    p1 = ProblemSpec(terminal_catalog("constant:0", spec), gen, spec, "zero", horizon,
                     name="counterexample_xi1")
    return p1, p2


def poisson_violation_probability(lam: float, horizon: float, t: float) -> float:
    """``P(N_t < sqrt(lambda) (T - t))`` for a Poisson process of intensity ``lambda``."""
    bound = math.sqrt(lam) * (horizon - t)
    n_max = math.ceil(bound) - 1  # largest integer strictly below the bound
    if n_max < 0:
        return 0.0
    return float(poisson.cdf(n_max, lam * t))


def counterexample(lam: float, grid: TimeGrid, engine: str = "regression", paths: int = 100_000,
                   seed: int = 0, cap: int = 4, t_eval: Optional[float] = None) -> CounterexampleReport:
    """Inject the closed-form pair and report the violated condition and violation odds.

    ``Y2 = N_t / sqrt(lambda) + t - T``, ``Z2 = 1`` solves the equation with
    ``f = -(1 + sqrt(lambda)) z`` and ``xi2 = N_T / sqrt(lambda)``; ``(0, 0)``
    solves it with ``xi1 = 0``.  A is identically zero.
    """
    if not lam > 0:
        raise ValueError("lambda must be positive")
    p1, p2 = counterexample_problems(lam, grid.horizon)
    if engine == "tree":
        noise = build_tree(p2.levy, grid, "zero", cap=cap)
    else:
        noise = simulate_paths(p2.levy, grid, "zero", P=paths, seed=seed)
    cond = make_conditioner(noise, p2.levy)
    N, S = grid.steps, cond.S
    cum = np.stack([cond.counts[:, :k, :].sum(axis=(1, 2)) for k in range(N + 1)]).astype(float)
    sq = math.sqrt(lam)
    Y2 = cum / sq + grid.nodes[:, None] - grid.horizon
    Z2 = np.ones((N, 1, S))
    sol2 = GridSolution(Y=Y2, Z=Z2, weights=cond.weights, dt=grid.dt, dA=cond.dA,
                        Yhat=Y2[:-1].copy(), engine=cond.kind)
    sol1 = GridSolution(Y=np.zeros((N + 1, S)), Z=np.zeros((N, 1, S)), weights=cond.weights,
                        dt=grid.dt, dA=cond.dA, Yhat=np.zeros((N, S)), engine=cond.kind)
    res = max(float(residual(p2, sol2, cond).max()), float(residual(p1, sol1, cond).max()))
    rep = compare_solutions(p1.generator.f, sol1, sol2, cond.basis, grid.nodes)
    if t_eval is None:
        t_eval = grid.horizon / 2
    k = grid.index_of(t_eval)
    return CounterexampleReport(
        intensity=lam, margin=float(np.min(rep.margins)), satisfied=rep.satisfied,
        residual_max=res, t_eval=t_eval, p_estimate=float(rep.p_violation[k]),
        p_stderr=float(rep.p_stderr[k]),
        p_exact=poisson_violation_probability(lam, grid.horizon, t_eval), comparison=rep)
