"""Self-convergence of the scheme under grid refinement.

Two problems are refined by doubling N:

* g-linear: g(t, y) = y/2, f = k = 0, xi = 1 on a jump-free tree.  E[Y_0] = 1 for
  every N, so the second moment E[Y_0^2] = (1 + dt/4)^N is tracked instead; it
  increases towards exp(T/4).
* Poisson-linear: f = y/2 + z, xi = N_T with lambda = 1 on a cap-3 tree.

Writes a CSV to stdout (N, metric, increment).
"""
import argparse
import math

import numpy as np

from gbdsde import (LevyJumpSpec, ProblemSpec, TimeGrid, build_tree, generator_catalog,
                    solve_lipschitz, terminal_catalog)


def g_linear_second_moment(steps, horizon=1.0):
    levy = LevyJumpSpec.poisson(1.0)
    prob = ProblemSpec(terminal_catalog("constant:1", levy),
                       generator_catalog("zero").with_g("linear:0.5"), levy, "identity", horizon)
    tree = build_tree(levy, TimeGrid(horizon, steps), cap=0)
    sol = solve_lipschitz(prob, tree)
    return float(np.sum(sol.weights * sol.Y[0] ** 2))


def poisson_linear_y0(steps, horizon=0.4, cap=3):
    levy = LevyJumpSpec.poisson(1.0)
    prob = ProblemSpec(terminal_catalog("count", levy), generator_catalog("linear:0.5,1"), levy,
                       "identity", horizon)
    return solve_lipschitz(prob, build_tree(levy, TimeGrid(horizon, steps), cap=cap)).y0


def main():
    ap = argparse.ArgumentParser(description="grid refinement study")
    ap.add_argument("--max-steps", type=int, default=16)
    args = ap.parse_args()
    print("problem,N,metric,increment,limit")
    prev = None
    n = 1
    while n <= args.max_steps:
        v = g_linear_second_moment(n)
        inc = "" if prev is None else f"{v - prev:.17g}"
        print(f"g_linear,{n},{v:.17g},{inc},{math.exp(0.25):.17g}")
        prev, n = v, 2 * n
    prev = None
    for n in (1, 2, 4):
        v = poisson_linear_y0(n)
        inc = "" if prev is None else f"{v - prev:.17g}"
        print(f"poisson_linear,{n},{v:.17g},{inc},")
        prev = v


if __name__ == "__main__":
    main()
