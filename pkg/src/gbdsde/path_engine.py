"""Driving noise: jump counts per interval, backward Brownian increments, and A.

Two sources are provided.  :func:`simulate_paths` draws a seeded Monte Carlo
bundle.  :func:`build_tree` enumerates every combination of truncated jump
count patterns and two-point Brownian increments, which gives exact
expectations for small grids and serves as the oracle for the regression
solver.
"""
from __future__ import annotations

import csv
import itertools
import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable

import numpy as np

from .errors import BudgetExceeded, NonmonotoneA
from .levy_teugels import LevyJumpSpec

DEFAULT_LEAF_BUDGET = 10**6


@dataclass(frozen=True)
class TimeGrid:
    horizon: float
    steps: int

    def __post_init__(self):
        if not self.horizon > 0:
            raise ValueError("horizon must be positive")
        if int(self.steps) != self.steps or self.steps < 1:
            raise ValueError("steps must be a positive integer")
        object.__setattr__(self, "steps", int(self.steps))

    @property
    def dt(self) -> float:
        return self.horizon / self.steps

    @property
    def nodes(self) -> np.ndarray:
        return np.arange(self.steps + 1) * self.dt

    def index_of(self, t: float) -> int:
        k = int(round(t / self.dt))
        if abs(k * self.dt - t) > 1e-12 * max(1.0, self.horizon) or not 0 <= k <= self.steps:
            raise ValueError(f"t={t} is not a grid node")
        return k


# --- the increasing process A --------------------------------------------------

@dataclass(frozen=True)
class AProcess:
    """Deterministic continuous increasing process with ``A(0) = 0``."""

    name: str
    func: Callable = field(compare=False)

    def __call__(self, t):
        return self.func(np.asarray(t, dtype=float))

    def increments(self, grid: TimeGrid) -> np.ndarray:
        vals = self(grid.nodes)
        dA = np.diff(vals)
        if np.any(dA < 0):
            k = int(np.argmin(dA))
            raise NonmonotoneA(f"A decreases on step {k}: dA = {dA[k]:.6g}")
        return dA


def a_process(desc="identity") -> AProcess:
    """Build A from a config string: ``identity``, ``scaled:<c>``, ``table:<csv path>``.

    A callable is wrapped as is.
    """
    if callable(desc) and not isinstance(desc, AProcess):
        return AProcess("custom", desc)
    if isinstance(desc, AProcess):
        return desc
    desc = str(desc).strip()
    if desc == "identity":
        return AProcess(desc, lambda t: t * 1.0)
    if desc == "zero":
        return AProcess(desc, lambda t: np.zeros_like(t))
    if desc.startswith("scaled:"):
        c = float(desc.split(":", 1)[1])
        return AProcess(desc, lambda t, c=c: c * t)
    if desc.startswith("table:"):
        path = desc.split(":", 1)[1]
        with open(path, newline="") as fh:
            rows = [r for r in csv.reader(fh) if r and not r[0].lstrip().startswith("#")]
        data = np.array([[float(x) for x in r[:2]] for r in rows if _is_number(r[0])])
        ts, vals = data[:, 0], data[:, 1]
        return AProcess(desc, lambda t, ts=ts, vals=vals: np.interp(t, ts, vals))
    raise ValueError(f"unknown a_process {desc!r}")


def _is_number(s):
    try:
        float(s)
    except ValueError:
        return False
    return True


# --- Monte Carlo ----------------------------------------------------------------

@dataclass(frozen=True)
class PathBundle:
    """Sampled noise. ``counts[p, k, j]`` jumps of size ``a_j`` in ``(t_k, t_{k+1}]``."""

    spec: LevyJumpSpec
    grid: TimeGrid
    counts: np.ndarray = field(repr=False)
    brownian: np.ndarray = field(repr=False)
    dA: np.ndarray = field(repr=False)
    seed: int

    @property
    def paths(self) -> int:
        return self.counts.shape[0]

    def cumulative_counts(self, k: int) -> np.ndarray:
        """Jumps per size on ``(0, t_k]``, shape (P, m)."""
        return self.counts[:, :k, :].sum(axis=1)

    def subset(self, idx) -> "PathBundle":
        """Bundle restricted to the paths ``idx`` (same grid, spec, and dA)."""
        return PathBundle(spec=self.spec, grid=self.grid, counts=self.counts[idx],
                          brownian=self.brownian[idx], dA=self.dA, seed=self.seed)

    def write_csv(self, path):
        P, N, m = self.counts.shape
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["path", "step"] + [f"count_{j}" for j in range(m)] + ["dB", "dA"])
            for p in range(P):
                for k in range(N):
                    w.writerow([p, k, *self.counts[p, k].tolist(),
                                f"{self.brownian[p, k]:.17g}", f"{self.dA[k]:.17g}"])


def simulate_paths(spec: LevyJumpSpec, grid: TimeGrid, a_spec="identity", P: int = 1000,
                   seed: int = 0) -> PathBundle:
    if P < 1:
        raise ValueError("P must be >= 1")
    dA = a_process(a_spec).increments(grid)
    rng = np.random.default_rng(np.uint64(seed))
    lam_dt = spec.rates * grid.dt
    counts = rng.poisson(lam_dt, size=(P, grid.steps, spec.m))
    brownian = rng.standard_normal((P, grid.steps)) * math.sqrt(grid.dt)
    for arr in (counts, brownian, dA):
        arr.setflags(write=False)
    return PathBundle(spec=spec, grid=grid, counts=counts, brownian=brownian, dA=dA, seed=int(seed))


# --- scenario tree ------------------------------------------------------------------

@dataclass(frozen=True)
class ScenarioTree:
    """Exhaustive enumeration of truncated count patterns and Brownian signs.

    Leaves are indexed in C order over the axes ``(n_0, ..., n_{N-1}, s_0, ..., s_{N-1})``
    where ``n_k`` is a flattened count pattern in ``{0..cap}^m`` and ``s_k``
    picks ``dB_k = -sqrt(dt)`` or ``+sqrt(dt)``.
    """

    spec: LevyJumpSpec
    grid: TimeGrid
    cap: int
    patterns: np.ndarray = field(repr=False)        # (K, m)
    pattern_probs: np.ndarray = field(repr=False)   # (N, K), rows sum to 1
    dA: np.ndarray = field(repr=False)
    truncated_mass: float = 0.0

    @property
    def n_patterns(self) -> int:
        return self.patterns.shape[0]

    @property
    def shape(self) -> tuple:
        N = self.grid.steps
        return (self.n_patterns,) * N + (2,) * N

    @property
    def n_leaves(self) -> int:
        return int(np.prod(self.shape, dtype=np.int64))

    @cached_property
    def leaf_probs(self) -> np.ndarray:
        N = self.grid.steps
        p = np.ones(())
        for k in range(N):
            p = np.multiply.outer(p, self.pattern_probs[k])
        p = np.multiply.outer(p, np.full((2,) * N, 0.5 ** N))
        return p.reshape(-1)

    @cached_property
    def history_counts(self) -> np.ndarray:
        """Count histories over the jump axes only, shape (K**N, N, m)."""
        N = self.grid.steps
        idx = np.indices((self.n_patterns,) * N).reshape(N, -1).T
        return self.patterns[idx]

    @cached_property
    def leaf_counts(self) -> np.ndarray:
        """Counts per leaf, shape (S, N, m)."""
        h = self.history_counts
        return np.repeat(h, 2 ** self.grid.steps, axis=0)

    @cached_property
    def leaf_brownian(self) -> np.ndarray:
        """Brownian increments per leaf, shape (S, N)."""
        N = self.grid.steps
        signs = np.indices((2,) * N).reshape(N, -1).T * 2.0 - 1.0
        inc = signs * math.sqrt(self.grid.dt)
        return np.tile(inc, (self.n_patterns ** N, 1))

    def count_moment(self, func) -> float:
        """Exact tree expectation of ``func(counts)`` for counts of shape (S, N, m)."""
        h = self.history_counts
        probs = np.ones(())
        for k in range(self.grid.steps):
            probs = np.multiply.outer(probs, self.pattern_probs[k])
        return float(np.sum(probs.reshape(-1) * func(h)))


def _poisson_pmf(n, mean):
    return math.exp(-mean) * mean**n / math.factorial(n)


def build_tree(spec: LevyJumpSpec, grid: TimeGrid, a_spec="identity", cap: int = 2,
               budget: int = DEFAULT_LEAF_BUDGET) -> ScenarioTree:
    if cap < 0:
        raise ValueError("cap must be >= 0")
    K = (cap + 1) ** spec.m
    leaves = (2 * K) ** grid.steps
    if leaves > budget:
        raise BudgetExceeded(leaves, budget)
    dA = a_process(a_spec).increments(grid)
    patterns = np.array(list(itertools.product(range(cap + 1), repeat=spec.m)), dtype=np.int64)
    # per size: truncated pmf; patterns are products across sizes
    per_size = np.array([[_poisson_pmf(n, lam * grid.dt) for n in range(cap + 1)]
                         for lam in spec.intensities])  # (m, cap+1)
    raw = np.prod(per_size[np.arange(spec.m)[None, :], patterns], axis=1)
    retained = raw.sum()
    probs = raw / retained
    truncated_mass = 1.0 - retained ** grid.steps
    pattern_probs = np.tile(probs, (grid.steps, 1))
    for arr in (patterns, pattern_probs, dA):
        arr.setflags(write=False)
    return ScenarioTree(spec=spec, grid=grid, cap=cap, patterns=patterns,
                        pattern_probs=pattern_probs, dA=dA, truncated_mass=float(truncated_mass))
