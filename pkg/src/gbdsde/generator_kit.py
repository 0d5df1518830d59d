"""Generator triples (f, k, g), their envelopes, and empirical assumption checks.

Conventions for vectorised callables used throughout the package:

* ``f(t, y, z)`` with ``y`` of shape ``(S,)`` and ``z`` of shape ``(m, S)``;
* ``k(t, y)``, ``g(t, y)``;
* envelopes ``h(y, z)`` and ``p(y)`` with the same shapes.

All of them return arrays broadcastable to ``(S,)``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable, Optional

import numpy as np
from scipy.stats import qmc

from .errors import CatalogMiss, EmptyGrid
from .levy_teugels import LevyJumpSpec

Y_CONTINUITY = ("lipschitz", "continuous", "left_continuous", "right_continuous")


def _zero_f(t, y, z):
    return np.zeros(np.broadcast(y, z[0]).shape)


def _zero_ty(t, y):
    return np.zeros(np.shape(y))


def _zero_h(y, z):
    return np.zeros(np.broadcast(y, z[0]).shape)


def _zero_p(y):
    return np.zeros(np.shape(y))


def znorm(z):
    return np.sqrt(np.sum(np.asarray(z) ** 2, axis=0))


@dataclass(frozen=True)
class GeneratorSpec:
    """Coefficients of the equation plus the structural constants used by the solvers.

    ``h``/``p`` are the lower monotonicity envelopes used by the minimal-solution
    iteration; ``h_max``/``p_max`` are the reversed envelopes for the maximal one
    and default to ``h``/``p``.
    """

    f: Callable = field(default=_zero_f, compare=False)
    k: Callable = field(default=_zero_ty, compare=False)
    g: Callable = field(default=_zero_ty, compare=False)
    K: float = 0.0
    f_bar: float = 1.0
    k_bar: float = 1.0
    g_bar: float = 1.0
    h: Callable = field(default=_zero_h, compare=False)
    p: Callable = field(default=_zero_p, compare=False)
    h_max: Optional[Callable] = field(default=None, compare=False)
    p_max: Optional[Callable] = field(default=None, compare=False)
    y_continuity: str = "lipschitz"
    name: str = "custom"

    def __post_init__(self):
        if self.y_continuity not in Y_CONTINUITY:
            raise ValueError(f"y_continuity must be one of {Y_CONTINUITY}")
        if min(self.K, self.f_bar, self.k_bar, self.g_bar) < 0:
            raise ValueError("K and the growth bounds must be nonnegative")

    @property
    def upper_h(self):
        return self.h if self.h_max is None else self.h_max

    @property
    def upper_p(self):
        return self.p if self.p_max is None else self.p_max

    def with_k(self, k_desc) -> "GeneratorSpec":
        k, K, bar = _k_catalog(k_desc)
        return replace(self, k=k, K=max(self.K, K), k_bar=max(self.k_bar, bar),
                       p=_p_for(k_desc), p_max=None if self.p_max is None else _p_for(k_desc))

    def with_g(self, g_desc) -> "GeneratorSpec":
        g, K = _g_catalog(g_desc)
        return replace(self, g=g, K=max(self.K, K))

    def shifted(self, c: float) -> "GeneratorSpec":
        """Same generator with ``f + c``; envelopes are unchanged."""
        if c == 0:
            return self
        f = self.f

        def f_shift(t, y, z):
            return f(t, y, z) + c
        return replace(self, f=f_shift, f_bar=self.f_bar + abs(c), name=f"{self.name}+{c:g}")


@dataclass(frozen=True)
class ProblemSpec:
    """Terminal value, generator, jump alphabet, A, and horizon.

    ``terminal`` maps jump-count histories of shape ``(S, N, m)`` to ``(S,)``.
    """

    terminal: Callable = field(compare=False)
    generator: GeneratorSpec
    levy: LevyJumpSpec
    a_spec: object = "identity"
    horizon: float = 1.0
    name: str = "problem"

    def terminal_values(self, counts) -> np.ndarray:
        xi = np.asarray(self.terminal(np.asarray(counts)), dtype=float)
        if xi.shape != (np.shape(counts)[0],):
            raise ValueError("terminal must return one value per history")
        if not np.all(np.isfinite(xi)):
            raise ValueError("terminal value is not finite")
        return xi


# --- catalogs ------------------------------------------------------------------------

def generator_catalog(desc: str, m: int = 1) -> GeneratorSpec:
    """Look up a generator by config name.

    Names: ``zero``, ``constant:<c>``, ``linear:<a>,<b1>,...``,
    ``indicator_plus_linear``, ``indicator_plus_linear_right``, ``sine_plus_linear``,
    ``counterexample:<lambda>``.
    """
    desc = desc.strip()
    name, _, arg = desc.partition(":")
    if name == "zero":
        return GeneratorSpec(name=desc)
    if name == "constant":
        c = float(arg)
        return GeneratorSpec(f=lambda t, y, z: np.full(np.broadcast(y, z[0]).shape, c),
                             K=0.0, f_bar=max(1.0, abs(c)), name=desc)
    if name == "linear":
        vals = [float(v) for v in arg.split(",") if v.strip()]
        if not vals:
            raise CatalogMiss(f"linear needs coefficients: {desc!r}")
        a = vals[0]
        b = np.zeros(m)
        b[: len(vals) - 1] = vals[1 : m + 1]
        if len(vals) - 1 > m:
            raise CatalogMiss(f"{desc!r} has more z-coefficients than jump sizes ({m})")

        def f(t, y, z, a=a, b=b):
            return a * y + np.tensordot(b, z, axes=1)

        def h(y, z, a=a, b=b):
            return a * y + np.tensordot(b, z, axes=1)

        return GeneratorSpec(f=f, K=abs(a) + float(np.linalg.norm(b)), h=h, name=desc)
    if name == "indicator_plus_linear":
        return GeneratorSpec(f=lambda t, y, z: y * (y > 1.0) + z[0], K=1.0,
                             h=lambda y, z: z[0] + 0.0 * y, h_max=lambda y, z: z[0] + 0.0 * y,
                             y_continuity="left_continuous", name=desc)
    if name == "indicator_plus_linear_right":
        return GeneratorSpec(f=lambda t, y, z: y * (y >= 1.0) + z[0], K=1.0,
                             h=lambda y, z: z[0] + 0.0 * y, h_max=lambda y, z: z[0] + 0.0 * y,
                             y_continuity="right_continuous", name=desc)
    if name == "sine_plus_linear":
        return GeneratorSpec(f=lambda t, y, z: np.sin(y) + z[0], K=1.0,
                             h=lambda y, z: -y + z[0], h_max=lambda y, z: -y + z[0],
                             y_continuity="lipschitz", name=desc)
    if name == "counterexample":
        lam = float(arg)
        c = 1.0 + math.sqrt(lam)
        return GeneratorSpec(f=lambda t, y, z: -c * z[0] + 0.0 * y, K=c,
                             h=lambda y, z: -c * z[0] + 0.0 * y, name=desc)
    raise CatalogMiss(f"unknown generator {desc!r}")


def _k_catalog(desc):
    desc = str(desc).strip()
    name, _, arg = desc.partition(":")
    if name == "zero":
        return _zero_ty, 0.0, 0.0
    if name == "constant":
        c = float(arg)
        return (lambda t, y, c=c: np.full(np.shape(y), c)), 0.0, abs(c)
    if name == "linear":
        a = float(arg)
        return (lambda t, y, a=a: a * y), abs(a), 0.0
    raise CatalogMiss(f"unknown k coefficient {desc!r}")


def _p_for(desc):
    name, _, arg = str(desc).strip().partition(":")
    if name == "linear":
        a = float(arg)
        return lambda y, a=a: a * y
    return _zero_p


def _g_catalog(desc):
    desc = str(desc).strip()
    name, _, arg = desc.partition(":")
    if name == "zero":
        return _zero_ty, 0.0
    if name == "linear":
        a = float(arg)
        return (lambda t, y, a=a: a * y), max(abs(a), a * a)
    raise CatalogMiss(f"unknown g coefficient {desc!r}")


def terminal_catalog(desc: str, levy: LevyJumpSpec) -> Callable:
    """Terminal values as functions of the count history ``(S, N, m)``.

    ``count`` (total jumps), ``levy`` (L_T), ``constant:<c>``, ``scaled_count:<c>``,
    ``count_plus:<c>``, ``counterexample:<lambda>`` (N_T / sqrt(lambda)).
    """
    desc = desc.strip()
    name, _, arg = desc.partition(":")
    sizes = levy.sizes
    if name == "count":
        return lambda c: c.sum(axis=(1, 2)).astype(float)
    if name == "levy":
        return lambda c: c.sum(axis=1) @ sizes
    if name == "constant":
        v = float(arg)
        return lambda c: np.full(c.shape[0], v)
    if name == "scaled_count":
        s = float(arg)
        return lambda c: s * c.sum(axis=(1, 2))
    if name == "count_plus":
        s = float(arg)
        return lambda c: c.sum(axis=(1, 2)) + s
    if name == "counterexample":
        s = 1.0 / math.sqrt(float(arg))
        return lambda c: s * c.sum(axis=(1, 2))
    raise CatalogMiss(f"unknown terminal {desc!r}")


# --- inf-convolution -------------------------------------------------------------------

def inf_convolution(phi: Callable, n: float, u_grid) -> Callable:
    """Lipschitz lower envelope ``phi_n(y) = min_u phi(u) + n |y - u|`` over a finite grid.

    The minimum splits into ``u <= y`` and ``u >= y``; each half is a running
    minimum over the sorted grid, so evaluation costs one ``searchsorted``.
    The result is ``n``-Lipschitz and never exceeds ``phi`` at grid points.
    """
    u = np.unique(np.asarray(u_grid, dtype=float).ravel())
    if u.size == 0:
        raise EmptyGrid("u_grid is empty")
    vals = np.asarray(phi(u), dtype=float)
    left = np.minimum.accumulate(vals - n * u)               # min over u_i <= u_j
    right = np.minimum.accumulate((vals + n * u)[::-1])[::-1]  # min over u_i >= u_j

    def phi_n(y):
        y = np.asarray(y, dtype=float)
        i = np.searchsorted(u, y, side="right")  # u[:i] <= y < u[i:]
        out = np.full(y.shape, np.inf)
        has_left = i > 0
        out[has_left] = n * y[has_left] + left[i[has_left] - 1]
        has_right = i < u.size
        out[has_right] = np.minimum(out[has_right], right[i[has_right]] - n * y[has_right])
        return out

    phi_n.n = n
    phi_n.grid = u
    return phi_n


# --- empirical assumption checks ----------------------------------------------------

@dataclass
class ValidationReport:
    passed: bool
    margins: dict
    worst: dict

    def __str__(self):
        verdict = "PASS" if self.passed else "FAIL"
        parts = ", ".join(f"{k}={v:.4g}" for k, v in self.margins.items())
        return f"{verdict} ({parts})"


def box_sampler(m: int, n: int = 10_000, y_box=(-10.0, 10.0), z_box=(-10.0, 10.0),
                horizon: float = 1.0, seed: int = 0):
    """Quasi-random samples ``(t, y, y', z, z')`` with ``y >= y'`` on the working box."""
    d = 3 + 2 * m
    pts = qmc.Halton(d=d, seed=seed).random(n)
    t = pts[:, 0] * horizon
    ys = y_box[0] + (y_box[1] - y_box[0]) * pts[:, 1:3]
    y, y2 = ys.max(axis=1), ys.min(axis=1)
    z = (z_box[0] + (z_box[1] - z_box[0]) * pts[:, 3 : 3 + m]).T
    z2 = (z_box[0] + (z_box[1] - z_box[0]) * pts[:, 3 + m :]).T
    return t, y, y2, z, z2


def _worst(margin, t, y, y2, z, z2):
    i = int(np.argmin(margin))
    return {"t": float(t[i]), "y": float(y[i]), "y_prime": float(y2[i]),
            "z": z[:, i].tolist(), "z_prime": z2[:, i].tolist(), "margin": float(margin[i])}


def validate_envelope(spec: GeneratorSpec, sampler, tol: float = 1e-12, reversed_: bool = False):
    """Check ``f(t,y,z) - f(t,y',z') >= h(y-y', z-z')`` and the ``k``/``p`` analogue.

    With ``reversed_`` the maximal-solution envelopes are checked in the form the
    decreasing iteration uses, ``f(t,y',z') - f(t,y,z) <= h_max(y'-y, z'-z)``
    with the smaller ``y'`` first.
    ``sampler`` is a tuple ``(t, y, y', z, z')`` (see :func:`box_sampler`) or a
    zero-argument callable returning one.
    """
    t, y, y2, z, z2 = sampler() if callable(sampler) else sampler
    df = spec.f(t, y, z) - spec.f(t, y2, z2)
    dk = spec.k(t, y) - spec.k(t, y2)
    if reversed_:
        mf = spec.upper_h(y2 - y, z2 - z) + df
        mk = spec.upper_p(y2 - y) + dk
    else:
        mf = df - spec.h(y - y2, z - z2)
        mk = dk - spec.p(y - y2)
    mf = np.broadcast_to(mf, t.shape)
    mk = np.broadcast_to(mk, t.shape)
    margins = {"f": float(mf.min()), "k": float(mk.min())}
    worst = {"f": _worst(mf, t, y, y2, z, z2), "k": _worst(mk, t, y, y2, z, z2)}
    return ValidationReport(passed=min(margins.values()) >= -tol, margins=margins, worst=worst)


def validate_growth(spec: GeneratorSpec, sampler, tol: float = 1e-9,
                    lipschitz_y: Optional[bool] = None):
    """Sampled check of the growth, z-Lipschitz, and g bounds.

    When ``lipschitz_y`` is true (default: ``spec.y_continuity == "lipschitz"``)
    the y-Lipschitz bounds on ``f`` and ``k`` are checked as well.
    """
    t, y, y2, z, z2 = sampler() if callable(sampler) else sampler
    K = spec.K
    if lipschitz_y is None:
        lipschitz_y = spec.y_continuity == "lipschitz"
    checks = {}
    fy = spec.f(t, y, z)
    checks["f_growth"] = spec.f_bar + K * (np.abs(y) + znorm(z)) - np.abs(fy)
    checks["k_growth"] = spec.k_bar + K * np.abs(y) - np.abs(spec.k(t, y))
    gy = spec.g(t, y)
    checks["g_growth"] = spec.g_bar + K * np.abs(y) - np.abs(gy)
    checks["f_lip_z"] = K * znorm(z - z2) - np.abs(fy - spec.f(t, y, z2))
    checks["g_lip_y"] = K * (y - y2) ** 2 - (gy - spec.g(t, y2)) ** 2
    checks["g_zero"] = -np.abs(spec.g(t, np.zeros_like(y)))
    if lipschitz_y:
        checks["f_lip_y"] = K * np.abs(y - y2) - np.abs(fy - spec.f(t, y2, z))
        checks["k_lip_y"] = K * np.abs(y - y2) - np.abs(spec.k(t, y) - spec.k(t, y2))
    margins, worst = {}, {}
    for name, m in checks.items():
        m = np.broadcast_to(np.asarray(m, dtype=float), t.shape)
        # relative slack: equality cases (e.g. g = sqrt(K) y) must not fail on rounding
        scale = 1.0 + np.abs(y) ** 2 + znorm(z) ** 2
        rel = m / scale
        margins[name] = float(rel.min())
        worst[name] = _worst(rel, t, y, y2, z, z2)
    return ValidationReport(passed=min(margins.values()) >= -tol, margins=margins, worst=worst)
