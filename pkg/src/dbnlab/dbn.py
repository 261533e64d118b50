"""Deep belief networks: exact evaluation and constructive synthesis.

Layers are numbered from the visible layer: ``spaces[0]`` is visible and
``spaces[-1]`` is the top hidden layer.  The top two layers form an RBM and
``layers[i]`` is the directed conditional from ``spaces[i+1]`` down to
``spaces[i]``.

Synthesis follows a probability-sharing plan: the top RBM seeds mass on a small
set of states, and each directed layer spreads it along one coordinate per
parallel sequence, so that the visible marginal approaches the projection of
the target onto a cylinder partition model.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.special import logsumexp

from dbnlab import bounds
from dbnlab.conditional_layers import (
    LayerParams,
    StarTask,
    apply_stochastic_map,
    ideal_star_matrix,
    layer_log_matrix,
    permute_layer,
    synth_copy_layer,
    synth_sharing_layer,
)
from dbnlab.distributions import Dist, MixtureOfProducts, PartitionModel, kl, project_to_partition
from dbnlab.errors import ConstraintError, DomainError, ResourceError, SchemaError
from dbnlab.rbm import RbmParams, permute_rbm, rbm_log_joint, rbm_visible_marginal, synth_rbm_mixture
from dbnlab.sharing_schedule import SharingSchedule, build_schedule
from dbnlab.state_space import ENUMERATION_CAP, StateSpace


@dataclass(frozen=True, eq=False)
class DbnParams:
    spaces: tuple[StateSpace, ...]
    rbm: RbmParams
    layers: tuple[LayerParams, ...] = ()

    def __post_init__(self) -> None:
        spaces = tuple(self.spaces)
        layers = tuple(self.layers)
        L = len(spaces)
        if L < 2:
            raise SchemaError(f"a DBN needs at least 2 layers, got {L}")
        if self.rbm.visible != spaces[-2] or self.rbm.hidden != spaces[-1]:
            raise SchemaError("top RBM spaces do not match the two top layers")
        if len(layers) != L - 2:
            raise SchemaError(f"{L} layers need {L - 2} directed conditionals, got {len(layers)}")
        for i, lp in enumerate(layers):
            if lp.input != spaces[i + 1] or lp.output != spaces[i]:
                raise SchemaError(f"directed layer {i} maps {lp.input.cards} -> {lp.output.cards}, expected {spaces[i + 1].cards} -> {spaces[i].cards}")
        object.__setattr__(self, "spaces", spaces)
        object.__setattr__(self, "layers", layers)

    @property
    def L(self) -> int:
        return len(self.spaces)

    @classmethod
    def zeros(cls, spaces: Sequence[StateSpace]) -> "DbnParams":
        spaces = tuple(spaces)
        rbm = RbmParams.zeros(spaces[-2], spaces[-1])
        return cls(spaces, rbm, tuple(LayerParams.zeros(spaces[i + 1], spaces[i]) for i in range(len(spaces) - 2)))

    @classmethod
    def random(cls, spaces: Sequence[StateSpace], rng: np.random.Generator, scale: float = 1.0) -> "DbnParams":
        spaces = tuple(spaces)
        layers = tuple(LayerParams.random(spaces[i + 1], spaces[i], rng, scale) for i in range(len(spaces) - 2))
        return cls(spaces, RbmParams.random(spaces[-2], spaces[-1], rng, scale), layers)

    @classmethod
    def uniform_width(cls, cards: Sequence[int], L: int) -> "DbnParams":
        return cls.zeros([StateSpace(tuple(cards))] * L)

    @property
    def n_params(self) -> int:
        return self.rbm.n_params + sum(lp.n_params for lp in self.layers)

    def flat(self) -> np.ndarray:
        return np.concatenate([lp.flat() for lp in self.layers] + [self.rbm.flat()])

    def with_flat(self, v: np.ndarray) -> "DbnParams":
        v = np.asarray(v, dtype=float)
        if v.size != self.n_params:
            raise DomainError(f"flat vector has {v.size} entries, model has {self.n_params}")
        out, pos = [], 0
        for lp in self.layers:
            out.append(lp.with_flat(v[pos : pos + lp.n_params]))
            pos += lp.n_params
        return DbnParams(self.spaces, self.rbm.with_flat(v[pos:]), tuple(out))


def param_count(architecture: Sequence) -> int:
    """Closed-form parameter count for per-layer cardinalities (visible layer first)."""
    return bounds.param_count(architecture)


def permute_dbn(params: DbnParams, perm: Sequence[int]) -> DbnParams:
    """Apply the same unit permutation to every layer (layers must share a width)."""
    return DbnParams(
        tuple(s.permuted(perm) for s in params.spaces),
        permute_rbm(params.rbm, perm),
        tuple(permute_layer(lp, perm) for lp in params.layers),
    )


# --- evaluation --------------------------------------------------------------------


def _joint_size(params: DbnParams) -> int:
    return int(np.prod([s.size for s in params.spaces], dtype=object))


def dbn_log_joint(params: DbnParams) -> np.ndarray:
    """Normalised log-probability of every joint state, axes ordered visible layer first."""
    if _joint_size(params) > ENUMERATION_CAP:
        raise ResourceError(f"joint state space has {_joint_size(params)} states, above the enumeration cap")
    L = params.L
    top = rbm_log_joint(params.rbm)
    top = top - logsumexp(top)
    out = top.reshape((1,) * (L - 2) + top.shape)
    for i, lp in enumerate(params.layers):
        T = layer_log_matrix(lp).T  # (|X_i|, |X_{i+1}|)
        shape = [1] * L
        shape[i], shape[i + 1] = T.shape
        out = out + T.reshape(shape)
    return out


def dbn_visible_marginal(params: DbnParams, method: str = "auto") -> Dist:
    """Visible marginal by full joint enumeration (``"joint"``) or layer composition (``"compose"``)."""
    if method == "auto":
        method = "compose"
    if method == "joint":
        lj = dbn_log_joint(params)
        return Dist.from_log(params.spaces[0], logsumexp(lj.reshape(lj.shape[0], -1), axis=1))
    if method == "compose":
        q = rbm_visible_marginal(params.rbm)
        for lp in reversed(params.layers):
            q = apply_stochastic_map(lp, q)
        return q
    raise DomainError(f"unknown evaluation method {method!r}")


@dataclass
class ChainMessages:
    """Quantities for exact gradients: top joint, layer matrices and data-weighted posteriors."""

    top_joint: np.ndarray
    log_model: np.ndarray
    top_posterior: np.ndarray
    layer_posteriors: list[np.ndarray]


def chain_messages(params: DbnParams, data: Dist) -> ChainMessages:
    """Exact top-down priors and data-weighted bottom-up posteriors along the layer chain.

    ``layer_posteriors[i][y, x]`` is the expected joint frequency of
    ``(x^{i+1} = y, x^i = x)`` when the visible layer is drawn from ``data`` and
    the rest from the model posterior.  Computed in the log domain.
    """
    if data.space != params.spaces[0]:
        raise DomainError("data lives on a different space than the visible layer")
    lj = rbm_log_joint(params.rbm)
    lj = lj - logsumexp(lj)
    logT = [layer_log_matrix(lp) for lp in params.layers]
    prior = [None] * (params.L - 1)
    prior[-1] = logsumexp(lj, axis=1)
    for i in reversed(range(len(logT))):
        prior[i] = logsumexp(prior[i + 1][:, None] + logT[i], axis=0)
    with np.errstate(divide="ignore"):
        log_beta = np.log(data.mass) - prior[0]
    posts = []
    with np.errstate(invalid="ignore"):
        for i in range(len(logT)):
            lp = prior[i + 1][:, None] + logT[i] + log_beta[None, :]
            posts.append(np.exp(lp))
            log_beta = logsumexp(logT[i] + log_beta[None, :], axis=1)
        top_post = np.exp(lj + log_beta[:, None])
    return ChainMessages(np.exp(lj), prior[0], top_post, posts)


# --- synthesis plan ----------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class SynthesisPlan:
    cards: tuple[int, ...]
    L: int
    choice: bounds.SharingChoice
    schedule: SharingSchedule
    K: float = 50.0

    @property
    def m(self) -> int:
        return self.choice.m

    @property
    def S(self) -> int:
        return self.choice.S

    @property
    def perm(self) -> tuple[int, ...]:
        return self.choice.perm

    @property
    def inverse_perm(self) -> tuple[int, ...]:
        return tuple(int(i) for i in np.argsort(self.perm))

    @property
    def space(self) -> StateSpace:
        return StateSpace(self.cards)

    @property
    def canonical_space(self) -> StateSpace:
        return self.schedule.space

    @property
    def bound(self) -> float:
        return self.choice.bound

    @property
    def depth(self) -> int:
        return self.schedule.depth


def choose_m_s(cards: Sequence[int], L: int, m: int | None = None, K: float = 50.0) -> SynthesisPlan:
    """Best ``(m, S)`` for width-``n`` layers of the given cardinalities and depth ``L``."""
    cards = tuple(int(q) for q in cards)
    choice = bounds.sharing_choice(cards, L, m)
    if choice is None:
        raise ConstraintError(f"no feasible sharing prefix for cards {cards} (m={m}); need n >= m >= k")
    sched = build_schedule(StateSpace(choice.canonical_cards), choice.m, choice.S)
    return SynthesisPlan(cards, L, choice, sched, K)


def schedule_partition(schedule: SharingSchedule) -> PartitionModel:
    """Blocks distinguishable by the schedule: passive coordinates of each sequence are merged."""
    sp = schedule.space
    st = sp.states
    if schedule.k == 1:
        return PartitionModel.cylinders(sp, schedule.block_fixed_coords(0))
    seq_of = np.zeros(sp.size, dtype=np.int64)
    for s in range(schedule.k):
        seq_of[_suffix_mask(schedule, s)] = s
    keys = np.zeros(sp.size, dtype=np.int64)
    for s in range(schedule.k):
        sel = seq_of == s
        kept = list(schedule.block_fixed_coords(s))
        sub = StateSpace(tuple(sp.cards[j] for j in kept))
        keys[sel] = s * sub.size + sub.indices_of(st[sel][:, kept])
    order = np.argsort(keys, kind="stable")
    splits = np.flatnonzero(np.diff(keys[order])) + 1
    return PartitionModel(sp, tuple(np.split(order, splits)))


def _suffix_mask(schedule: SharingSchedule, s: int) -> np.ndarray:
    sp = schedule.space
    m = np.ones(sp.size, dtype=bool)
    for i, v in enumerate(schedule.suffixes[s]):
        m &= sp.states[:, schedule.m + 1 + i] == v
    return m


@dataclass
class MassFlow:
    """Star tasks per sharing depth plus the distribution the top RBM must seed."""

    plan: SynthesisPlan
    projected: Dist
    tasks: list[list[StarTask]]
    top_target: Dist
    top_mixture: MixtureOfProducts
    residual_outside_seeds: float = 0.0


def _row_targets(P: np.ndarray, schedule: SharingSchedule, row) -> np.ndarray:
    """Conditional split along ``row.unit`` of the mass on ``row.cover``, per target value."""
    sp = schedule.space
    idx = list(row.cover.tensor_index(sp))
    sub = P[tuple(idx)]
    # remaining axes are the free coordinates of the cover, in increasing order
    free = sorted(row.cover.free)
    f = row.target_coord
    keep = [row.unit] + ([f] if f is not None else [])
    summed = sub.sum(axis=tuple(t for t, j in enumerate(free) if j not in keep))
    kept_sorted = [j for j in free if j in keep]
    if f is not None and kept_sorted[0] != row.unit:
        summed = summed.T  # -> (unit, f)
    if f is None:
        summed = summed[:, None]
    tot = summed.sum(axis=0)
    r = sp.cards[row.unit]
    out = np.zeros((summed.shape[1], r))
    for a in range(summed.shape[1]):
        if tot[a] > 0:
            out[a] = summed[:, a] / tot[a]
        else:
            out[a, 0] = 1.0
    return out


def _collapse(P: np.ndarray, schedule: SharingSchedule, row) -> None:
    """Move all mass on ``row.cover`` onto its source (``unit`` = 0), in place."""
    sp = schedule.space
    idx = list(row.cover.tensor_index(sp))
    free = sorted(row.cover.free)
    ax = free.index(row.unit)
    sub = P[tuple(idx)]
    col = sub.sum(axis=ax)
    new = np.zeros_like(sub)
    sl = [slice(None)] * sub.ndim
    sl[ax] = 0
    new[tuple(sl)] = col
    P[tuple(idx)] = new


def plan_mass_flow(target: Dist, plan: SynthesisPlan) -> MassFlow:
    """Backward pass: undo each sharing step from the deepest row up, recording its split."""
    if target.space != plan.space:
        raise DomainError(f"target lives on {target.space.cards}, plan expects {plan.cards}")
    sched = plan.schedule
    sp = sched.space
    canon = target.permuted(plan.perm)
    pm = schedule_partition(sched)
    projected = project_to_partition(canon, pm)
    P = projected.tensor().copy()
    tasks: list[list[StarTask]] = [[] for _ in range(sched.depth)]
    for d in range(sched.depth, 0, -1):
        for row in sched.rows_at(d):
            tg = _row_targets(P, sched, row)
            tasks[d - 1].append(StarTask(row.unit, row.source, tg, row.target_coord))
            _collapse(P, sched, row)
    flat = P.reshape(-1)
    outside = float(flat[~sched.seeds_mask].sum())
    if outside > 1e-12:
        bad = [sp.unindex(int(i)) for i in np.flatnonzero((~sched.seeds_mask) & (flat > 1e-12))[:5]]
        raise ConstraintError(f"mass {outside:.3g} left outside the seed cylinders, e.g. at {bad}")
    flat = np.where(sched.seeds_mask, np.clip(flat, 0, None), 0.0)
    top = Dist.normalized(sp, flat)
    return MassFlow(plan, projected, tasks, top, _seed_mixture(top, sched), outside)


def _seed_mixture(top: Dist, sched: SharingSchedule) -> MixtureOfProducts:
    """The seed distribution as one product per sequence."""
    sp = sched.space
    T = top.tensor()
    weights, factors = [], []
    for s in range(sched.k):
        seed = sched.seed(s)
        w = float(top.mass[seed.mask(sp)].sum())
        sub = T[seed.tensor_index(sp)]
        free = sorted(seed.free)
        f = sched.target_coord
        comp = []
        for j in range(sp.n):
            if j in seed.fixed:
                e = np.zeros(sp.cards[j])
                e[seed.fixed[j]] = 1.0
                comp.append(e)
            elif j == f:
                lam = sub.sum(axis=tuple(t for t, jj in enumerate(free) if jj != f)) if sub.ndim else np.ones(1)
                comp.append(lam / lam.sum() if lam.sum() > 0 else np.full(sp.cards[j], 1.0 / sp.cards[j]))
            else:
                comp.append(np.full(sp.cards[j], 1.0 / sp.cards[j]))
        weights.append(w)
        factors.append(tuple(comp))
    weights = np.asarray(weights)
    return MixtureOfProducts(sp, weights / weights.sum(), tuple(factors))


def ideal_forward(flow: MassFlow) -> Dist:
    """Compose the exact sharing maps on the exact seed distribution (no finite-K error).

    Returned in the plan's original coordinate order.
    """
    sched = flow.plan.schedule
    q = flow.top_target.mass.copy()
    for tasks in flow.tasks:
        q = q @ ideal_star_matrix(sched.space, tasks)
    return Dist.normalized(sched.space, np.clip(q, 0, None)).permuted(flow.plan.inverse_perm)


@dataclass
class SynthesisResult:
    params: DbnParams
    divergence: float
    ideal_divergence: float
    K: float
    flow: MassFlow
    attempts: list[tuple[float, float]] = field(default_factory=list)


def _materialise(flow: MassFlow, K: float) -> DbnParams:
    plan = flow.plan
    sp = plan.canonical_space
    L = plan.L
    weights = flow.top_mixture.weights
    rbm = synth_rbm_mixture(flow.top_mixture, sp, K, base=int(np.argmax(weights)))
    layers: list[LayerParams] = [synth_copy_layer(sp, K) for _ in range(L - 2)]
    for d, tasks in enumerate(flow.tasks, start=1):
        layers[L - 2 - d] = synth_sharing_layer(sp, tasks, K)
    canon = DbnParams((sp,) * L, rbm, tuple(layers))
    return permute_dbn(canon, plan.inverse_perm)


def synth_dbn(
    target: Dist, plan: SynthesisPlan, K: float | None = None, tol: float | None = None, max_doublings: int = 4
) -> SynthesisResult:
    """Parameters realising ``plan`` for ``target`` and the measured divergence.

    With ``tol`` set, ``K`` is doubled (at most ``max_doublings`` times) while the
    measured divergence exceeds the ideal partition-model divergence by more
    than ``tol``.
    """
    if plan.L < 2 + plan.depth:
        raise ConstraintError(f"plan needs {2 + plan.depth} layers, architecture has {plan.L}")
    K = plan.K if K is None else float(K)
    flow = plan_mass_flow(target, plan)
    ideal = kl(target, flow.projected.permuted(plan.inverse_perm))
    attempts = []
    for _ in range(max_doublings + 1):
        params = _materialise(flow, K)
        div = kl(target, dbn_visible_marginal(params))
        attempts.append((K, div))
        if tol is None or div - ideal <= tol:
            break
        K *= 2
    return SynthesisResult(params, div, ideal, K, flow, attempts)
