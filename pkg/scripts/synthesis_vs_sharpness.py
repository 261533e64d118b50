"""Divergence of the constructed DBN as the sharpness K grows.

For each K the same random targets are synthesised and the worst and mean
excess over the partition-model divergence are printed (CSV on stdout).

    python scripts/synthesis_vs_sharpness.py --cards 3 2 2 --L 6
"""

import argparse
import csv
import sys

import numpy as np

from dbnlab.dbn import choose_m_s, synth_dbn
from dbnlab.distributions import sample_dirichlet
from dbnlab.state_space import StateSpace


def main(argv=None) -> int:
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--cards", type=int, nargs="+", default=[2, 2, 2])
    p.add_argument("--L", type=int, default=5)
    p.add_argument("--m", type=int, default=None)
    p.add_argument("--K", type=float, nargs="+", default=[2, 4, 6, 8, 10, 15, 20, 30, 40, 50])
    p.add_argument("--targets", type=int, default=20)
    p.add_argument("--a", type=float, default=1.0)
    p.add_argument("--seed", type=int, default=0)
    args = p.parse_args(argv)

    space = StateSpace(tuple(args.cards))
    plan = choose_m_s(space.cards, args.L, args.m)
    rng = np.random.default_rng(args.seed)
    targets = [sample_dirichlet(space, args.a, rng) for _ in range(args.targets)]
    w = csv.writer(sys.stdout, lineterminator="\n")
    w.writerow(["K", "bound", "mean_excess", "max_excess", "max_divergence"])
    for K in args.K:
        res = [synth_dbn(t, plan, K=K) for t in targets]
        excess = np.array([r.divergence - r.ideal_divergence for r in res])
        w.writerow([K, repr(plan.bound), repr(float(excess.mean())), repr(float(excess.max())), repr(max(r.divergence for r in res))])
    return 0


if __name__ == "__main__":
    sys.exit(main())
