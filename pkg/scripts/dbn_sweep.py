"""Randomised approximation sweep over constant-width binary DBNs of growing depth.

    python scripts/dbn_sweep.py --width 4 --depths 2 3 4 5 --T 100 --jobs 4
"""

import argparse
import sys
from pathlib import Path

from dbnlab.harness import Architecture, ExperimentConfig, emit_results, format_summary, run_experiment
from dbnlab.training import TrainConfig


def main(argv=None) -> int:
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--width", type=int, default=4)
    p.add_argument("--depths", type=int, nargs="+", default=[2, 3, 4, 5])
    p.add_argument("--T", type=int, default=100)
    p.add_argument("--N", type=int, default=1000)
    p.add_argument("--a", type=float, default=0.5)
    p.add_argument("--restarts", type=int, default=3)
    p.add_argument("--pretrain", action="store_true", help="greedy layer-wise warm start before the exact fine-tune")
    p.add_argument("--init-scale", type=float, default=0.01, help="std of the Gaussian initialisation")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--out", default="results/dbn_sweep")
    args = p.parse_args(argv)

    cfg = ExperimentConfig(
        visible=(2,) * args.width,
        sweep=[Architecture("dbn", L=L) for L in args.depths],
        T=args.T,
        N=args.N,
        a=args.a,
        train=TrainConfig(restarts=args.restarts, pretrain=args.pretrain, init_scale=args.init_scale),
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
