"""Randomised approximation experiments: sample targets, train architectures, compare with bounds.

For each trial a target ``p ~ Dir(a)`` on the visible space is drawn, ``N``
samples form the empirical distribution ``P``, and every architecture of the
sweep is trained on ``P``.  The recorded value is ``D(P || p_theta)``.
"""

from __future__ import annotations

import csv
import io
import json
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from dbnlab import bounds
from dbnlab.dbn import DbnParams
from dbnlab.distributions import empirical_from_samples, sample_dirichlet, sample_states
from dbnlab.errors import DomainError, ResourceError, SchemaError, StorageError
from dbnlab.rbm import RbmParams
from dbnlab.state_space import StateSpace
from dbnlab.training import TrainConfig, train

CONFIG_VERSION = 1
RESULT_VERSION = 1
HIST_BINS = 40
HIST_MARGIN = 0.2
CSV_COLUMNS = ("arch_id", "trial", "seed", "divergence_nats", "divergence_bits")


@dataclass(frozen=True)
class Architecture:
    """``kind="rbm"`` with hidden cardinalities, or ``kind="dbn"`` with depth ``L`` at the visible width."""

    kind: str
    hidden: tuple[int, ...] = ()
    L: int = 2
    name: str | None = None

    def __post_init__(self) -> None:
        if self.kind not in ("rbm", "dbn"):
            raise SchemaError(f"architecture kind must be 'rbm' or 'dbn', got {self.kind!r}")
        object.__setattr__(self, "hidden", tuple(int(q) for q in self.hidden))
        if self.kind == "dbn" and self.L < 2:
            raise DomainError(f"a DBN needs L >= 2, got {self.L}")
        StateSpace(self.hidden)

    @property
    def id(self) -> str:
        if self.name:
            return self.name
        if self.kind == "rbm":
            return f"rbm-h{len(self.hidden)}" if set(self.hidden) <= {2} else "rbm-h" + "x".join(map(str, self.hidden))
        return f"dbn-L{self.L}"

    def build(self, visible: StateSpace):
        if self.kind == "rbm":
            return RbmParams.zeros(visible, StateSpace(self.hidden))
        return DbnParams.zeros([visible] * self.L)

    def coarseness(self, visible: StateSpace) -> int:
        """Coarseness of the partition model the constructive bound uses.

        A DBN takes the better of its sharing route and its top RBM, since copy
        layers let the lower layers pass the RBM's marginal through.
        """
        if self.kind == "rbm":
            return bounds.best_lambda(visible.cards, bounds.hidden_capacity(self.hidden))[1]
        top = bounds.best_lambda(visible.cards, bounds.hidden_capacity(visible.cards))[1]
        choice = bounds.sharing_choice(visible.cards, self.L)
        return min(choice.coarseness, top) if choice else top

    def max_bound(self, visible: StateSpace) -> float:
        return math.log(self.coarseness(visible))

    def mean_bound(self, visible: StateSpace, a: float) -> float:
        return bounds.dirichlet_expectation_bound(a, self.coarseness(visible))

    def to_dict(self) -> dict:
        d = {"kind": self.kind}
        if self.kind == "rbm":
            d["hidden"] = list(self.hidden)
        else:
            d["L"] = self.L
        if self.name:
            d["name"] = self.name
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "Architecture":
        if not isinstance(d, dict) or "kind" not in d:
            raise SchemaError(f"architecture entry {d!r} needs a 'kind'")
        unknown = set(d) - {"kind", "hidden", "L", "name"}
        if unknown:
            raise SchemaError(f"unknown architecture fields {sorted(unknown)}")
        return cls(d["kind"], tuple(d.get("hidden", ())), int(d.get("L", 2)), d.get("name"))


@dataclass
class ExperimentConfig:
    visible: tuple[int, ...]
    sweep: list[Architecture]
    T: int = 200
    N: int = 1000
    a: float = 0.5
    train: TrainConfig = field(default_factory=TrainConfig)
    seed: int = 0
    slack: float = 0.1
    out: str | None = None
    version: int = CONFIG_VERSION

    def validate(self) -> None:
        if self.version != CONFIG_VERSION:
            raise SchemaError(f"config version {self.version} is not supported (expected {CONFIG_VERSION})")
        if not self.sweep:
            raise SchemaError("the architecture sweep is empty")
        ids = [arch.id for arch in self.sweep]
        if len(set(ids)) != len(ids):
            raise SchemaError(f"architecture ids must be unique, got {ids}")
        if self.T < 1 or self.N < 1:
            raise DomainError(f"T and N must be positive, got T={self.T}, N={self.N}")
        if not self.a > 0:
            raise DomainError(f"Dirichlet concentration must be positive, got {self.a}")
        if self.slack < 0:
            raise DomainError("slack must be non-negative")
        StateSpace(tuple(self.visible))
        self.train.validate()

    @property
    def space(self) -> StateSpace:
        return StateSpace(tuple(self.visible))

    def to_dict(self) -> dict:
        return {
            "version": self.version,
            "visible": list(self.visible),
            "sweep": [a.to_dict() for a in self.sweep],
            "T": self.T,
            "N": self.N,
            "a": self.a,
            "train": self.train.to_dict(),
            "seed": self.seed,
            "slack": self.slack,
            "out": self.out,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        if not isinstance(d, dict):
            raise SchemaError("experiment config must be a JSON object")
        allowed = {"version", "visible", "sweep", "T", "N", "a", "train", "seed", "slack", "out"}
        unknown = set(d) - allowed
        if unknown:
            raise SchemaError(f"unknown config fields {sorted(unknown)}")
        for key in ("visible", "sweep"):
            if key not in d:
                raise SchemaError(f"config is missing '{key}'")
        cfg = cls(
            visible=tuple(int(q) for q in d["visible"]),
            sweep=[Architecture.from_dict(x) for x in d["sweep"]],
            T=int(d.get("T", 200)),
            N=int(d.get("N", 1000)),
            a=float(d.get("a", 0.5)),
            train=TrainConfig.from_dict(d.get("train", {})),
            seed=int(d.get("seed", 0)),
            slack=float(d.get("slack", 0.1)),
            out=d.get("out"),
            version=int(d.get("version", CONFIG_VERSION)),
        )
        cfg.validate()
        return cfg


@dataclass
class ArchSummary:
    arch_id: str
    max: float
    mean: float
    max_bound: float
    mean_bound: float
    hist_edges: list[float]
    hist_counts: list[int]
    n_ok: int
    max_exceeds_bound: bool
    mean_within_bound: bool
    errors: list[str] = field(default_factory=list)


@dataclass
class TrialRecord:
    arch_id: str
    trial: int
    seed: int
    divergence: float


@dataclass
class ExperimentResult:
    config: ExperimentConfig
    trials: list[TrialRecord]
    summaries: list[ArchSummary]
    runtime: dict = field(default_factory=dict)
    version: int = RESULT_VERSION

    def summary(self, arch_id: str) -> ArchSummary:
        for s in self.summaries:
            if s.arch_id == arch_id:
                return s
        raise KeyError(arch_id)

    def divergences(self, arch_id: str) -> np.ndarray:
        return np.array([t.divergence for t in self.trials if t.arch_id == arch_id])

    def to_dict(self, include_runtime: bool = True) -> dict:
        d = {
            "version": self.version,
            "config": self.config.to_dict(),
            "trials": [asdict(t) for t in self.trials],
            "summaries": [asdict(s) for s in self.summaries],
        }
        if include_runtime:
            d["runtime"] = self.runtime
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentResult":
        if d.get("version") != RESULT_VERSION:
            raise SchemaError(f"result version {d.get('version')} is not supported")
        return cls(
            ExperimentConfig.from_dict(d["config"]),
            [TrialRecord(**t) for t in d["trials"]],
            [ArchSummary(**s) for s in d["summaries"]],
            d.get("runtime", {}),
        )


def trial_seed(master: int, trial: int) -> int:
    """Seed of trial ``trial``, derived from the master seed alone."""
    return int(np.random.SeedSequence([master, trial]).generate_state(1, dtype=np.uint32)[0])


def _run_trial(cfg: ExperimentConfig, trial: int) -> tuple[list[TrialRecord], list[tuple[str, str]]]:
    seed = trial_seed(cfg.seed, trial)
    rng = np.random.default_rng(seed)
    space = cfg.space
    p = sample_dirichlet(space, cfg.a, rng)
    data = empirical_from_samples(space, sample_states(p, cfg.N, rng))
    records, errors = [], []
    for j, arch in enumerate(cfg.sweep):
        tcfg = TrainConfig(**{**cfg.train.to_dict(), "seed": trial_seed(seed, j)})
        try:
            res = train(arch.build(space), data, tcfg)
            records.append(TrialRecord(arch.id, trial, seed, float(res.divergence)))
        except ResourceError as exc:
            records.append(TrialRecord(arch.id, trial, seed, float("nan")))
            errors.append((arch.id, f"trial {trial}: {exc}"))
    return records, errors


def _run_trial_star(args):
    return _run_trial(*args)


def _summarise(cfg: ExperimentConfig, trials: list[TrialRecord], errors: list[tuple[str, str]]) -> list[ArchSummary]:
    space = cfg.space
    out = []
    for arch in cfg.sweep:
        vals = np.array([t.divergence for t in trials if t.arch_id == arch.id])
        ok = vals[np.isfinite(vals)]
        mb = arch.max_bound(space)
        edges = np.linspace(0.0, mb + HIST_MARGIN, HIST_BINS + 1)
        counts = np.histogram(np.clip(ok, edges[0], edges[-1]), bins=edges)[0] if ok.size else np.zeros(HIST_BINS, int)
        mx = float(ok.max()) if ok.size else float("nan")
        mean = float(ok.mean()) if ok.size else float("nan")
        meanb = arch.mean_bound(space, cfg.a)
        out.append(
            ArchSummary(
                arch.id,
                mx,
                mean,
                mb,
                meanb,
                [float(e) for e in edges],
                [int(c) for c in counts],
                int(ok.size),
                bool(ok.size and mx > mb + cfg.slack),
                bool(ok.size and mean <= meanb),
                [msg for a_id, msg in errors if a_id == arch.id],
            )
        )
    return out


def run_experiment(cfg: ExperimentConfig, jobs: int = 1) -> ExperimentResult:
    """Run every trial; results depend only on the config (not on ``jobs``)."""
    cfg.validate()
    for arch in cfg.sweep:
        arch.build(cfg.space)
    t0 = time.perf_counter()
    if jobs > 1 and cfg.T > 1:
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            parts = list(ex.map(_run_trial_star, [(cfg, i) for i in range(cfg.T)]))
    else:
        parts = [_run_trial(cfg, i) for i in range(cfg.T)]
    records = [r for recs, _ in parts for r in recs]
    errors = [e for _, errs in parts for e in errs]
    summaries = _summarise(cfg, records, errors)
    runtime = {"seconds": time.perf_counter() - t0, "jobs": jobs}
    return ExperimentResult(cfg, records, summaries, runtime)


# --- emission ---------------------------------------------------------------------------


def result_to_csv(result: ExperimentResult) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    for t in result.trials:
        w.writerow([t.arch_id, t.trial, t.seed, repr(t.divergence), repr(t.divergence / math.log(2))])
    return buf.getvalue()


def result_to_json(result: ExperimentResult, include_runtime: bool = True) -> str:
    return json.dumps(result.to_dict(include_runtime), indent=2, sort_keys=True) + "\n"


def result_from_json(text: str) -> ExperimentResult:
    try:
        return ExperimentResult.from_dict(json.loads(text))
    except (KeyError, TypeError) as exc:
        raise SchemaError(f"malformed result JSON: {exc}") from exc


def emit_results(result: ExperimentResult, path: str | Path, fmt: str = "csv") -> Path:
    """Write CSV (one row per architecture and trial) or the full JSON result."""
    if fmt not in ("csv", "json"):
        raise SchemaError(f"unknown output format {fmt!r}")
    result.config.validate()
    text = result_to_csv(result) if fmt == "csv" else result_to_json(result)
    path = Path(path)
    try:
        path.write_text(text)
    except OSError as exc:
        raise StorageError(f"cannot write results to {path}: {exc}") from exc
    return path


def load_config(path: str | Path) -> ExperimentConfig:
    path = Path(path)
    try:
        raw = json.loads(path.read_text())
    except OSError as exc:
        raise StorageError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise SchemaError(f"config {path} is not valid JSON: {exc}") from exc
    return ExperimentConfig.from_dict(raw)


def format_summary(result: ExperimentResult) -> str:
    lines = [f"{'arch':<12} {'mean':>10} {'mean bound':>11} {'max':>10} {'max bound':>10}  flags"]
    for s in result.summaries:
        flags = []
        if s.max_exceeds_bound:
            flags.append("max>bound+slack")
        if not s.mean_within_bound:
            flags.append("mean>bound")
        if s.errors:
            flags.append(f"{len(s.errors)} errors")
        lines.append(f"{s.arch_id:<12} {s.mean:>10.5f} {s.mean_bound:>11.5f} {s.max:>10.5f} {s.max_bound:>10.5f}  {' '.join(flags)}")
    return "\n".join(lines)
