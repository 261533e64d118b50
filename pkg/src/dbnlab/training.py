"""Maximum-likelihood training by exact enumeration, and contrastive divergence.

The objective is ``D(data || model)`` in nats, which differs from the negative
mean log-likelihood of the data only by the data entropy.  Exact gradients
enumerate every joint state; they are meant for small models.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from functools import lru_cache
from typing import Union

import numpy as np
from scipy.optimize import minimize
from scipy.special import logsumexp

from dbnlab.conditional_layers import LayerParams, unit_log_probs
from dbnlab.dbn import DbnParams, chain_messages, dbn_visible_marginal
from dbnlab.distributions import Dist, kl
from dbnlab.errors import DomainError, SchemaError
from dbnlab.rbm import RbmParams, rbm_log_joint, rbm_visible_marginal
from dbnlab.state_space import StateSpace

Model = Union[RbmParams, DbnParams]

METHODS = ("cd", "exact_ml", "cd_then_ml")


@dataclass
class TrainConfig:
    """Training protocol.  One CD epoch is one parameter update on a fresh batch."""

    method: str = "cd_then_ml"
    cd_k: int = 1
    lr: float = 0.05
    lr_decay: float = 0.0
    epochs: int = 200
    batch_size: int = 500
    restarts: int = 5
    init_scale: float = 0.01
    seed: int = 0
    ml_max_iter: int = 5000
    ml_gtol: float = 1e-7
    pretrain: bool = False

    def __post_init__(self) -> None:
        self.validate()

    def validate(self) -> None:
        if self.method not in METHODS:
            raise SchemaError(f"unknown training method {self.method!r}; choose from {METHODS}")
        if self.cd_k < 1:
            raise DomainError(f"cd_k must be at least 1, got {self.cd_k}")
        if not self.lr > 0:
            raise DomainError(f"learning rate must be positive, got {self.lr}")
        if self.lr_decay < 0:
            raise DomainError(f"learning-rate decay must be non-negative, got {self.lr_decay}")
        if self.restarts < 1:
            raise DomainError(f"restarts must be at least 1, got {self.restarts}")
        if self.epochs < 0 or self.batch_size < 1 or self.ml_max_iter < 0:
            raise DomainError("epochs, batch size and iteration limits must be non-negative (batch size positive)")
        if not self.init_scale >= 0:
            raise DomainError(f"init scale must be non-negative, got {self.init_scale}")

    def learning_rate(self, epoch: int) -> float:
        return self.lr / (1.0 + self.lr_decay * epoch)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise SchemaError(f"unknown training fields {sorted(unknown)}")
        return cls(**d)


# --- exact gradients -----------------------------------------------------------------


@dataclass
class Gradient:
    """Gradient of the mean data log-likelihood, in the model's flat parameter order."""

    loglik: float
    kl: float
    flat: np.ndarray


def _entropy(data: Dist) -> float:
    s = data.mass > 0
    return float(-np.sum(data.mass[s] * np.log(data.mass[s])))


def _log_data(data: Dist) -> np.ndarray:
    with np.errstate(divide="ignore"):
        return np.log(data.mass)


def _loglik(data: Dist, log_model: np.ndarray) -> float:
    s = data.mass > 0
    return float(np.sum(data.mass[s] * log_model[s]))


def _rbm_grad(params: RbmParams, P: np.ndarray, Q: np.ndarray) -> np.ndarray:
    """Flat ``(W, b, c)`` gradient from data-weighted ``Q`` and model ``P`` joints on ``X x Y``."""
    D = Q - P
    xs, ys = params.visible.stats, params.hidden.stats
    gW = xs.T @ D @ ys
    gb = xs.T @ D.sum(axis=1)
    gc = ys.T @ D.sum(axis=0)
    return np.concatenate([gW.ravel(), gb, gc])


def _layer_grad(lp: LayerParams, post: np.ndarray) -> np.ndarray:
    """Flat ``(Theta, theta)`` gradient from the expected pair frequencies ``post[y, x]``."""
    xs, ys = lp.output.stats, lp.input.stats
    mean = np.concatenate([np.exp(lpu)[:, 1:] for lpu in unit_log_probs(lp, ys)], axis=1)
    G = post @ xs - post.sum(axis=1)[:, None] * mean
    return np.concatenate([(G.T @ ys).ravel(), G.sum(axis=0)])


def exact_ml_gradient(params: Model, data: Dist) -> Gradient:
    """Data expectation minus model expectation of every sufficient statistic, by enumeration.

    Everything is carried in the log domain so that extreme parameters give
    large but finite objective values.
    """
    if isinstance(params, RbmParams):
        if data.space != params.visible:
            raise DomainError("data lives on a different space than the visible layer")
        lj = rbm_log_joint(params)
        rmax = lj.max(axis=1, keepdims=True)
        log_marg = np.log(np.exp(lj - rmax).sum(axis=1)) + rmax[:, 0]
        lz = log_marg.max() + np.log(np.exp(log_marg - log_marg.max()).sum())
        lj, log_marg = lj - lz, log_marg - lz
        P = np.exp(lj)
        Q = np.exp(lj - log_marg[:, None] + _log_data(data)[:, None])
        g = _rbm_grad(params, P, Q)
        ll = _loglik(data, log_marg)
    elif isinstance(params, DbnParams):
        msg = chain_messages(params, data)
        parts = [_layer_grad(lp, post) for lp, post in zip(params.layers, msg.layer_posteriors)]
        parts.append(_rbm_grad(params.rbm, msg.top_joint, msg.top_posterior))
        g = np.concatenate(parts)
        ll = _loglik(data, msg.log_model)
    else:
        raise SchemaError(f"cannot differentiate a {type(params).__name__}")
    return Gradient(ll, max(0.0, -_entropy(data) - ll), g)


def model_marginal(params: Model) -> Dist:
    return rbm_visible_marginal(params) if isinstance(params, RbmParams) else dbn_visible_marginal(params)


def divergence(data: Dist, params: Model) -> float:
    return kl(data, model_marginal(params))


# --- Gibbs sampling and CD --------------------------------------------------------------


@lru_cache(maxsize=None)
def _layout(space: StateSpace) -> tuple[np.ndarray, np.ndarray, int]:
    """Unit and value of every one-hot column, plus the largest cardinality."""
    unit = np.concatenate([np.full(q - 1, i) for i, q in enumerate(space.cards)]) if space.n else np.zeros(0, int)
    val = np.concatenate([np.arange(1, q) for q in space.cards]) if space.n else np.zeros(0, int)
    return unit.astype(np.int64), val.astype(np.int64), max(space.cards, default=1)


def _unit_probs(act: np.ndarray, space: StateSpace) -> np.ndarray:
    """Per-unit softmax over states, padded to the largest cardinality: shape ``(N, n, q_max)``."""
    unit, val, qmax = _layout(space)
    logits = np.full((act.shape[0], space.n, qmax), -np.inf)
    logits[:, :, 0] = 0.0
    logits[:, unit, val] = act
    logits -= logits.max(axis=2, keepdims=True)
    p = np.exp(logits)
    return p / p.sum(axis=2, keepdims=True)


def _sample_units(p: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    u = rng.random(p.shape[:2])
    out = (np.cumsum(p, axis=2) < u[:, :, None]).sum(axis=2)
    return np.minimum(out, p.shape[2] - 1)


def _stats(states: np.ndarray, space: StateSpace) -> np.ndarray:
    unit, val, _ = _layout(space)
    return (states[:, unit] == val).astype(float)


def _expected_stats(p: np.ndarray, space: StateSpace) -> np.ndarray:
    unit, val, _ = _layout(space)
    return p[:, unit, val]


def sample_categorical(logits: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """One draw per row of unnormalised log-weights ``logits`` (shape ``(N, q)``)."""
    p = np.exp(logits - logsumexp(logits, axis=1, keepdims=True))
    u = rng.random(p.shape[0])
    out = (np.cumsum(p, axis=1) < u[:, None]).sum(axis=1)
    return np.minimum(out, p.shape[1] - 1)


def sample_hidden(params: RbmParams, x: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    act = _stats(np.asarray(x), params.visible) @ params.W + params.c
    return _sample_units(_unit_probs(act, params.hidden), rng)


def sample_visible(params: RbmParams, y: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    act = _stats(np.asarray(y), params.hidden) @ params.W.T + params.b
    return _sample_units(_unit_probs(act, params.visible), rng)


def gibbs_sweep(params: RbmParams, x: np.ndarray, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Hidden given visible, then visible given hidden.  Returns ``(x_new, y)``."""
    y = sample_hidden(params, x, rng)
    return sample_visible(params, y, rng), y


def _cd_stats(W, b, c, vis, hid, batch, k, rng):
    xs0 = _stats(batch, vis)
    ph0 = _expected_stats(_unit_probs(xs0 @ W + c, hid), hid)
    xs = xs0
    for _ in range(k):
        y = _sample_units(_unit_probs(xs @ W + c, hid), rng)
        x = _sample_units(_unit_probs(_stats(y, hid) @ W.T + b, vis), rng)
        xs = _stats(x, vis)
    phk = _expected_stats(_unit_probs(xs @ W + c, hid), hid)
    N = batch.shape[0]
    pos = (xs0.T @ ph0 / N, xs0.mean(axis=0), ph0.mean(axis=0))
    neg = (xs.T @ phk / N, xs.mean(axis=0), phk.mean(axis=0))
    return pos, neg


def cd_statistics(params: RbmParams, batch: np.ndarray, k: int, rng: np.random.Generator):
    """Positive- and negative-phase mean statistics ``(xy, x, y)`` for CD-``k``.

    The positive phase uses exact hidden expectations given the data; the
    negative phase runs ``k`` blocked Gibbs sweeps started at the data.
    """
    if k < 1:
        raise DomainError(f"CD needs at least one Gibbs step, got k={k}")
    batch = np.asarray(batch, dtype=np.int64)
    return _cd_stats(params.W, params.b, params.c, params.visible, params.hidden, batch, k, rng)


def cd_update(params: RbmParams, batch: np.ndarray, k: int, lr: float, rng: np.random.Generator) -> RbmParams:
    """One CD-``k`` step: ``lr * (positive - negative)`` on every parameter."""
    pos, neg = cd_statistics(params, batch, k, rng)
    return RbmParams(
        params.visible,
        params.hidden,
        params.W + lr * (pos[0] - neg[0]),
        params.b + lr * (pos[1] - neg[1]),
        params.c + lr * (pos[2] - neg[2]),
    )


#: Joint sizes up to which CD runs on state counts instead of individual chains.
COUNT_CD_LIMIT = 4096


def _conditional_tables(W, b, c, vis, hid):
    E = vis.stats @ W @ hid.stats.T + (vis.stats @ b)[:, None] + (hid.stats @ c)[None, :]
    py = np.exp(E - E.max(axis=1, keepdims=True))
    py /= py.sum(axis=1, keepdims=True)
    px = np.exp(E - E.max(axis=0, keepdims=True))
    px /= px.sum(axis=0, keepdims=True)
    return py, px.T


def _cd_stats_counts(W, b, c, vis, hid, counts, k, rng):
    """CD-``k`` on a batch given as counts per visible state.

    Each Gibbs half-step draws, for every state, multinomial counts of the
    next layer's states from the exact conditional table, which is the same
    chain as running one sampler per batch element.
    """
    py, px = _conditional_tables(W, b, c, vis, hid)
    Xs, Ys = vis.stats, hid.stats
    N = counts.sum()
    nx = counts
    for _ in range(k):
        ny = rng.multinomial(nx, py).sum(axis=0)
        nx = rng.multinomial(ny, px).sum(axis=0)
    ey = py @ Ys

    def moments(n):
        w = n / N
        return (Xs.T @ (w[:, None] * ey), w @ Xs, w @ ey)

    return moments(counts), moments(nx)


def train_cd(params: RbmParams, data: Dist, cfg: TrainConfig, rng: np.random.Generator) -> RbmParams:
    """``cfg.epochs`` CD updates, each on a fresh batch drawn from ``data``."""
    vis, hid = params.visible, params.hidden
    W, b, c = params.W.copy(), params.b.copy(), params.c.copy()
    by_counts = vis.size * hid.size <= COUNT_CD_LIMIT
    states = vis.states
    for epoch in range(cfg.epochs):
        if by_counts:
            counts = rng.multinomial(cfg.batch_size, data.mass)
            pos, neg = _cd_stats_counts(W, b, c, vis, hid, counts, cfg.cd_k, rng)
        else:
            batch = states[rng.choice(vis.size, size=cfg.batch_size, p=data.mass)]
            pos, neg = _cd_stats(W, b, c, vis, hid, batch, cfg.cd_k, rng)
        lr = cfg.learning_rate(epoch)
        W += lr * (pos[0] - neg[0])
        b += lr * (pos[1] - neg[1])
        c += lr * (pos[2] - neg[2])
    return RbmParams(vis, hid, W, b, c)


# --- exact ML ---------------------------------------------------------------------------


@dataclass
class MLRun:
    params: Model
    kl: float
    history: list[float]
    iterations: int
    converged: bool


def train_exact_ml(params: Model, data: Dist, max_iter: int = 5000, gtol: float = 1e-7) -> MLRun:
    """Minimise ``D(data || model)`` with L-BFGS; its line search keeps every accepted step non-increasing."""

    def fun(v: np.ndarray):
        g = exact_ml_gradient(params.with_flat(v), data)
        return g.kl, -g.flat

    x0 = params.flat()
    f0 = fun(x0)[0]
    history = [f0]

    def callback(intermediate_result):
        history.append(float(intermediate_result.fun))

    if max_iter == 0:
        return MLRun(params, f0, history, 0, False)
    res = minimize(
        fun,
        x0,
        jac=True,
        method="L-BFGS-B",
        callback=callback,
        options={"maxiter": max_iter, "gtol": gtol, "ftol": 1e-15, "maxcor": 20},
    )
    best = params.with_flat(res.x)
    final = divergence(data, best)
    if final > f0:
        best, final = params, f0
    return MLRun(best, final, history, int(res.nit), bool(res.success))


# --- greedy pretraining -------------------------------------------------------------------


def _hidden_aggregate(rbm: RbmParams, data: Dist) -> Dist:
    """``sum_x data(x) p(y | x)`` on the hidden space."""
    lj = rbm_log_joint(rbm)
    post = np.exp(lj - logsumexp(lj, axis=1, keepdims=True))
    return Dist.normalized(rbm.hidden, data.mass @ post)


def greedy_pretrain(model: DbnParams, data: Dist, cfg: TrainConfig, rng: np.random.Generator) -> DbnParams:
    """Stack RBMs bottom-up, each trained on the previous one's aggregated hidden posterior."""
    layers = []
    cur = data
    sp = model.spaces
    for i in range(model.L - 2):
        rbm = RbmParams.random(sp[i], sp[i + 1], rng, cfg.init_scale)
        rbm = _fit_rbm(rbm, cur, cfg, rng)
        layers.append(LayerParams(sp[i + 1], sp[i], rbm.W, rbm.b))
        cur = _hidden_aggregate(rbm, cur)
    top = _fit_rbm(RbmParams.random(sp[-2], sp[-1], rng, cfg.init_scale), cur, cfg, rng)
    return DbnParams(sp, top, tuple(layers))


def _fit_rbm(rbm: RbmParams, data: Dist, cfg: TrainConfig, rng: np.random.Generator) -> RbmParams:
    if cfg.method in ("cd", "cd_then_ml"):
        rbm = train_cd(rbm, data, cfg, rng)
    if cfg.method in ("exact_ml", "cd_then_ml"):
        rbm = train_exact_ml(rbm, data, cfg.ml_max_iter, cfg.ml_gtol).params
    return rbm


# --- driver -----------------------------------------------------------------------------


@dataclass
class TrainResult:
    params: Model
    divergence: float
    run_divergences: list[float] = field(default_factory=list)
    history: list[float] = field(default_factory=list)
    best_run: int = 0


def _random_like(model: Model, rng: np.random.Generator, scale: float) -> Model:
    if isinstance(model, RbmParams):
        return RbmParams.random(model.visible, model.hidden, rng, scale)
    return DbnParams.random(model.spaces, rng, scale)


def train(model: Model, data: Dist, cfg: TrainConfig | None = None) -> TrainResult:
    """Best of ``cfg.restarts`` seeded runs: optional CD warm start (or greedy pretraining) then exact ML.

    ``model`` only fixes the architecture; every run starts from its own
    Gaussian initialisation.
    """
    cfg = cfg or TrainConfig()
    cfg.validate()
    visible = model.visible if isinstance(model, RbmParams) else model.spaces[0]
    if data.space != visible:
        raise DomainError(f"data lives on {data.space.cards}, model's visible layer is {visible.cards}")
    streams = np.random.SeedSequence(cfg.seed).spawn(cfg.restarts)
    best: TrainResult | None = None
    divs = []
    for r, ss in enumerate(streams):
        rng = np.random.default_rng(ss)
        p = _random_like(model, rng, cfg.init_scale)
        history: list[float] = []
        if isinstance(p, DbnParams) and cfg.pretrain:
            p = greedy_pretrain(p, data, cfg, rng)
        elif isinstance(p, RbmParams) and cfg.method in ("cd", "cd_then_ml"):
            p = train_cd(p, data, cfg, rng)
        if cfg.method in ("exact_ml", "cd_then_ml") or isinstance(p, DbnParams):
            run = train_exact_ml(p, data, cfg.ml_max_iter, cfg.ml_gtol)
            p, d, history = run.params, run.kl, run.history
        else:
            d = divergence(data, p)
        divs.append(d)
        if best is None or d < best.divergence:
            best = TrainResult(p, d, [], history, r)
    assert best is not None
    best.run_divergences = divs
    return best

