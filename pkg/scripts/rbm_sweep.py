"""Randomised approximation sweep over binary RBMs with a growing hidden layer.

Writes per-trial divergences (CSV) and the aggregated result with bounds and
histograms (JSON) for plotting.

    python scripts/rbm_sweep.py --visible 3 --T 200 --jobs 4 --out results/rbm3
"""

import argparse
import sys
from pathlib import Path

from dbnlab.harness import Architecture, ExperimentConfig, emit_results, format_summary, run_experiment
from dbnlab.training import TrainConfig


def main(argv=None) -> int:
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--visible", type=int, default=3, help="number of binary visible units")
    p.add_argument("--max-hidden", type=int, default=None, help="largest hidden layer (default 2^(n-1) - 1)")
    p.add_argument("--T", type=int, default=200)
    p.add_argument("--N", type=int, default=1000)
    p.add_argument("--a", type=float, default=0.5)
    p.add_argument("--restarts", type=int, default=5)
    p.add_argument("--init-scale", type=float, default=0.01, help="std of the Gaussian initialisation")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--out", default="results/rbm_sweep")
    args = p.parse_args(argv)

    n = args.visible
    top = args.max_hidden if args.max_hidden is not None else 2 ** (n - 1) - 1
    cfg = ExperimentConfig(
        visible=(2,) * n,
        sweep=[Architecture("rbm", (2,) * m) for m in range(top + 1)],
        T=args.T,
        N=args.N,
        a=args.a,
        train=TrainConfig(restarts=args.restarts, init_scale=args.init_scale),
        seed=args.seed,
    )
    res = run_experiment(cfg, jobs=args.jobs)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    emit_results(res, out.with_suffix(".csv"), "csv")
    emit_results(res, out.with_suffix(".json"), "json")
    sys.stdout.write(format_summary(res) + "\n")
    return 0


if __name__ == "__main__":
    sys.exit(main())
