#!/usr/bin/env python3
"""Compliance/volume trade-off of the mid cantilever at tree depth 6.

Runs the benchmark across a list of allowed volume fractions and prints the
resulting front; compliance should fall as more material is allowed.
"""

import argparse

from csgtopo.problem import ProblemSpec, optimize


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--volume-fractions", default="0.3,0.4,0.5,0.6")
    parser.add_argument("--mesh", default="100x50")
    parser.add_argument("--depth", type=int, default=6)
    parser.add_argument("--seed", type=int, default=2)
    args = parser.parse_args()

    nx, ny = (int(tok) for tok in args.mesh.lower().split("x"))
    print(f"{'vf*':>5} {'J_relaxed':>10} {'J_snapped':>10} {'g_v':>10} {'iters':>6}")
    for vf in (float(tok) for tok in args.volume_fractions.split(",")):
        spec = ProblemSpec(nx=nx, ny=ny, tree_depth=args.depth, vf_star=vf,
                           seed=args.seed, benchmark="mid_cantilever")
        res = optimize(spec)
        print(f"{vf:>5.2f} {res.J:>10.3f} {res.J_snapped:>10.3f} "
              f"{res.g_v:>10.2e} {res.iterations:>6}")


if __name__ == "__main__":
    main()
