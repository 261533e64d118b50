"""Command-line interface: ``dbnlab <command> ...``.

Exit codes: 0 success, 1 validation error, 2 enumeration cap exceeded, 3 I/O error.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from dbnlab import bounds
from dbnlab.dbn import DbnParams, choose_m_s, dbn_visible_marginal, synth_dbn
from dbnlab.distributions import kl
from dbnlab.errors import DbnLabError, ResourceError, StorageError
from dbnlab.harness import format_summary, load_config, result_to_csv, result_to_json, run_experiment
from dbnlab.io import dist_to_dict, load_dist, load_json, load_model, save_model
from dbnlab.rbm import RbmParams
from dbnlab.sharing_schedule import build_schedule, format_schedule, validate_schedule
from dbnlab.state_space import StateSpace
from dbnlab.training import TrainConfig, train

EXIT_OK, EXIT_VALIDATION, EXIT_RESOURCE, EXIT_IO = 0, 1, 2, 3


def _emit(text: str, out: str | None) -> None:
    if out:
        try:
            Path(out).write_text(text)
        except OSError as exc:
            raise StorageError(f"cannot write {out}: {exc}") from exc
    else:
        sys.stdout.write(text)


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--seed", type=int, default=None, help="master random seed")
    p.add_argument("--config", default=None, help="JSON config file")
    p.add_argument("--out", default=None, help="output path (stdout if omitted)")
    p.add_argument("--format", choices=("csv", "json", "text"), default=None)
    p.add_argument("--log-base", choices=("e", "2", "q"), default="e", help="display base for divergences")


def _shown(nats: float, base: str, cards) -> float:
    return bounds.to_base(nats, base, max(cards))


def cmd_bounds(args) -> int:
    rep = bounds.bounds_report(args.cards, args.L, args.hidden, args.a)
    if args.format == "json":
        _emit(json.dumps(rep.to_dict(), indent=2) + "\n", args.out)
    else:
        _emit(rep.to_text(args.log_base) + "\n", args.out)
    return EXIT_OK


def cmd_schedule(args) -> int:
    sp = StateSpace(tuple(args.cards))
    sched = build_schedule(sp, args.m, args.S)
    rep = validate_schedule(sched)
    text = format_schedule(sched) + (f"# valid: {rep.ok}\n" if rep.ok else f"# INVALID: {rep.first}\n")
    _emit(text, args.out)
    return EXIT_OK if rep.ok else EXIT_VALIDATION


def cmd_synthesize(args) -> int:
    target = load_dist(args.target)
    plan = choose_m_s(target.space.cards, args.L, args.m, args.K)
    res = synth_dbn(target, plan, tol=args.tol)
    if args.out:
        save_model(res.params, args.out)
    report = {
        "m": plan.m,
        "S": plan.S,
        "K": res.K,
        "bound": _shown(plan.bound, args.log_base, target.space.cards),
        "ideal_divergence": _shown(res.ideal_divergence, args.log_base, target.space.cards),
        "divergence": _shown(res.divergence, args.log_base, target.space.cards),
        "log_base": args.log_base,
    }
    sys.stdout.write(json.dumps(report) + "\n")
    return EXIT_OK


def cmd_evaluate(args) -> int:
    model = load_model(args.model)
    marg = dbn_visible_marginal(model, args.method)
    out = {"marginal": dist_to_dict(marg)}
    if args.target:
        t = load_dist(args.target)
        out["divergence"] = _shown(kl(t, marg), args.log_base, t.space.cards)
        out["log_base"] = args.log_base
    _emit(json.dumps(out) + "\n", args.out)
    return EXIT_OK


def cmd_train(args) -> int:
    data = load_dist(args.data)
    cfg_d = load_json(args.config) if args.config else {}
    if args.seed is not None:
        cfg_d["seed"] = args.seed
    cfg = TrainConfig.from_dict(cfg_d)
    if args.L and args.L > 2:
        model = DbnParams.zeros([data.space] * args.L)
    else:
        hidden = StateSpace(tuple(args.hidden)) if args.hidden is not None else data.space
        model = RbmParams.zeros(data.space, hidden)
    res = train(model, data, cfg)
    if args.out:
        save_model(res.params, args.out)
    sys.stdout.write(
        json.dumps({"divergence": _shown(res.divergence, args.log_base, data.space.cards), "runs": res.run_divergences}) + "\n"
    )
    return EXIT_OK


def cmd_experiment(args) -> int:
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg.seed = args.seed
    res = run_experiment(cfg, jobs=args.jobs)
    fmt = args.format or "csv"
    out = args.out or cfg.out
    _emit(result_to_json(res) if fmt == "json" else result_to_csv(res), out)
    if out:
        sys.stderr.write(format_summary(res) + "\n")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="dbnlab", description="Exact evaluation, synthesis and training of small DBNs and RBMs.")
    sub = p.add_subparsers(dest="command", required=True)

    b = sub.add_parser("bounds", help="print every applicable error bound")
    b.add_argument("--cards", type=int, nargs="+", required=True, help="cardinalities of one layer")
    b.add_argument("--L", type=int, default=2, help="number of layers")
    b.add_argument("--hidden", type=int, nargs="*", default=None, help="top hidden layer for the RBM bound")
    b.add_argument("--a", type=float, default=None, help="Dirichlet concentration for the expectation bound")
    _common(b)
    b.set_defaults(func=cmd_bounds)

    s = sub.add_parser("schedule", help="print the sharing sequences")
    s.add_argument("--cards", type=int, nargs="+", required=True)
    s.add_argument("--m", type=int, required=True)
    s.add_argument("--S", type=int, default=None)
    _common(s)
    s.set_defaults(func=cmd_schedule)

    y = sub.add_parser("synthesize", help="build a DBN approximating a target distribution")
    y.add_argument("--target", required=True, help="distribution JSON {cards, mass}")
    y.add_argument("--L", type=int, required=True)
    y.add_argument("--m", type=int, default=None, help="force the sharing prefix length")
    y.add_argument("--K", type=float, default=50.0, help="sharpness")
    y.add_argument("--tol", type=float, default=None, help="double K until the excess divergence is below this")
    _common(y)
    y.set_defaults(func=cmd_synthesize)

    e = sub.add_parser("evaluate", help="visible marginal of a model file")
    e.add_argument("--model", required=True)
    e.add_argument("--target", default=None)
    e.add_argument("--method", choices=("auto", "joint", "compose"), default="auto")
    _common(e)
    e.set_defaults(func=cmd_evaluate)

    t = sub.add_parser("train", help="fit an RBM or DBN to data")
    t.add_argument("--data", required=True, help="distribution JSON with 'mass' or 'samples'")
    t.add_argument("--hidden", type=int, nargs="*", default=None, help="RBM hidden cardinalities")
    t.add_argument("--L", type=int, default=None, help="train a DBN with this many layers")
    _common(t)
    t.set_defaults(func=cmd_train)

    x = sub.add_parser("experiment", help="run a randomised approximation sweep")
    _common(x)
    x.add_argument("--jobs", type=int, default=1)
    x.set_defaults(func=cmd_experiment)
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "experiment" and not args.config:
        sys.stderr.write("dbnlab experiment: --config is required\n")
        return EXIT_VALIDATION
    try:
        return args.func(args)
    except ResourceError as exc:
        sys.stderr.write(f"dbnlab: {exc}\n")
        return EXIT_RESOURCE
    except (StorageError, OSError) as exc:
        sys.stderr.write(f"dbnlab: {exc}\n")
        return EXIT_IO
    except (DbnLabError, ValueError) as exc:
        sys.stderr.write(f"dbnlab: {exc}\n")
        return EXIT_VALIDATION


if __name__ == "__main__":
    sys.exit(main())
