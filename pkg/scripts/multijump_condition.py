"""Empirical check: does f nondecreasing in z imply the jump condition when m >= 2?

For linear f = b . z with b >= 0 componentwise, beta = b and the margins are
1 + sum_i b_i a_j q_i(a_j).  With a single jump size the sign of a q_1(a) is
fixed, so the question is decided by that sign alone.  For m >= 2 the values
q_i(a_j) mix signs; this script samples specs and coefficient vectors and
records how often the margin goes negative.

Usage: python scripts/multijump_condition.py [--specs 500] [--seed 0] [--out multijump_condition.csv]
"""
import argparse
import sys

import numpy as np

from gbdsde.comparison_lab import jump_condition
from gbdsde.experiments import random_spec
from gbdsde.levy_teugels import orthonormalize
from gbdsde.reporting import write_csv


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--specs", type=int, default=500)
    ap.add_argument("--draws", type=int, default=200, help="coefficient vectors per spec")
    ap.add_argument("--scale", type=float, default=3.0, help="b_i ~ U(0, scale)")
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--out", default="multijump_condition.csv")
    args = ap.parse_args()
    rng = np.random.default_rng(args.seed)
    rows = []
    for s in range(args.specs):
        spec = random_spec(rng, max_m=4)
        basis = orthonormalize(spec)
        b = rng.uniform(0, args.scale, size=(basis.m, args.draws))
        margins = jump_condition(b, basis).margins.min(axis=0)
        sign = ("positive" if np.all(spec.sizes > 0) else
                "negative" if np.all(spec.sizes < 0) else "mixed")
        rows.append([s, spec.m, sign, float(np.mean(margins <= 0)), float(margins.min())])
    write_csv(args.out, ["spec", "m", "sizes", "fraction_violated", "worst_margin"], rows)
    print("m,sizes,specs,specs_with_violation,mean_fraction_violated")
    for m in range(1, 5):
        for sign in ("positive", "negative", "mixed"):
            sel = [r for r in rows if r[1] == m and r[2] == sign]
            if sel:
                frac = np.array([r[3] for r in sel])
                print(f"{m},{sign},{len(sel)},{int(np.sum(frac > 0))},{frac.mean():.4f}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
