"""Discrete restricted Boltzmann machines: exact evaluation and constructive synthesis.

An RBM with visible space ``X`` and hidden space ``Y`` assigns
``p(x, y) ∝ exp(x·W·y + b·x + c·y)`` where bold ``x``, ``y`` are the one-hot
statistics of :class:`~dbnlab.state_space.StateSpace`.

Synthesis replaces limits by a sharpness ``K``: probabilities that should be
zero become ``exp(-K)`` (or smaller, see :func:`synth_rbm_mixture`).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.special import logsumexp

from dbnlab.bounds import best_lambda, hidden_capacity
from dbnlab.distributions import (
    Dist,
    MixtureOfProducts,
    PartitionModel,
    project_to_partition,
    supports_overlap,
)
from dbnlab.errors import CapacityError, ConstraintError, DomainError, SchemaError
from dbnlab.state_space import StateSpace, check_cap


@dataclass(frozen=True, eq=False)
class RbmParams:
    visible: StateSpace
    hidden: StateSpace
    W: np.ndarray
    b: np.ndarray
    c: np.ndarray

    def __post_init__(self) -> None:
        W = _shaped(self.W, (self.visible.dim, self.hidden.dim), "W")
        b = _shaped(self.b, (self.visible.dim,), "b")
        c = _shaped(self.c, (self.hidden.dim,), "c")
        for name, arr in (("W", W), ("b", b), ("c", c)):
            if not np.all(np.isfinite(arr)):
                raise DomainError(f"RBM parameter {name} has non-finite entries")
            arr.setflags(write=False)
        object.__setattr__(self, "W", W)
        object.__setattr__(self, "b", b)
        object.__setattr__(self, "c", c)

    @classmethod
    def zeros(cls, visible: StateSpace, hidden: StateSpace) -> "RbmParams":
        return cls(visible, hidden, np.zeros((visible.dim, hidden.dim)), np.zeros(visible.dim), np.zeros(hidden.dim))

    @classmethod
    def random(cls, visible: StateSpace, hidden: StateSpace, rng: np.random.Generator, scale: float = 1.0) -> "RbmParams":
        return cls(
            visible,
            hidden,
            rng.normal(0, scale, (visible.dim, hidden.dim)),
            rng.normal(0, scale, visible.dim),
            rng.normal(0, scale, hidden.dim),
        )

    @property
    def n_params(self) -> int:
        return self.W.size + self.b.size + self.c.size

    def flat(self) -> np.ndarray:
        return np.concatenate([self.W.ravel(), self.b, self.c])

    def with_flat(self, theta: np.ndarray) -> "RbmParams":
        nw = self.W.size
        nb = self.b.size
        return RbmParams(self.visible, self.hidden, theta[:nw], theta[nw : nw + nb], theta[nw + nb :])

    @property
    def joint_space(self) -> StateSpace:
        return StateSpace(self.visible.cards + self.hidden.cards)


def rbm_log_joint(params: RbmParams) -> np.ndarray:
    """Unnormalised log-weights, shape ``(|X|, |Y|)``."""
    check_cap(params.visible.size * params.hidden.size, "RBM joint")
    xs, ys = params.visible.stats, params.hidden.stats
    return xs @ params.W @ ys.T + (xs @ params.b)[:, None] + (ys @ params.c)[None, :]


def rbm_joint(params: RbmParams) -> Dist:
    """Exact joint distribution on ``X × Y``, visible coordinates first."""
    return Dist.from_log(params.joint_space, rbm_log_joint(params).reshape(-1))


def hidden_unit_logits(params: RbmParams, xstats: np.ndarray) -> list[np.ndarray]:
    """Per hidden unit, log-weights of its states given visible statistics, shape ``(N, q_j)``.

    State 0 always has log-weight 0.
    """
    act = xstats @ params.W + params.c
    out = []
    for j in range(params.hidden.n):
        blk = act[:, params.hidden.block(j)]
        out.append(np.concatenate([np.zeros((blk.shape[0], 1)), blk], axis=1))
    return out


def visible_unit_logits(params: RbmParams, ystats: np.ndarray) -> list[np.ndarray]:
    act = ystats @ params.W.T + params.b
    out = []
    for i in range(params.visible.n):
        blk = act[:, params.visible.block(i)]
        out.append(np.concatenate([np.zeros((blk.shape[0], 1)), blk], axis=1))
    return out


def rbm_log_marginal_unnormalized(params: RbmParams, xstats: np.ndarray | None = None) -> np.ndarray:
    """``log sum_y exp(E(x, y))`` per visible state, using the product over hidden units."""
    if xstats is None:
        xstats = params.visible.stats
    out = xstats @ params.b
    for logits in hidden_unit_logits(params, xstats):
        out = out + logsumexp(logits, axis=1)
    return out


def rbm_visible_marginal(params: RbmParams, method: str = "factorized") -> Dist:
    """Visible marginal, either by summing hidden units out one at a time or from the full joint."""
    check_cap(params.visible.size, "RBM visible space")
    if method == "factorized":
        return Dist.from_log(params.visible, rbm_log_marginal_unnormalized(params))
    if method == "joint":
        lj = rbm_log_joint(params)
        return Dist.from_log(params.visible, logsumexp(lj, axis=1))
    raise DomainError(f"unknown marginalisation method {method!r}")


def permute_rbm(params: RbmParams, perm: Sequence[int]) -> RbmParams:
    """Reorder visible and hidden units alike: new unit ``t`` is old unit ``perm[t]``."""
    vi = _block_perm(params.visible, perm)
    hi = _block_perm(params.hidden, perm)
    return RbmParams(
        params.visible.permuted(perm), params.hidden.permuted(perm), params.W[np.ix_(vi, hi)], params.b[vi], params.c[hi]
    )


def _block_perm(space: StateSpace, perm: Sequence[int]) -> np.ndarray:
    return np.concatenate([np.arange(space.dim)[space.block(p)] for p in perm]) if perm else np.zeros(0, dtype=int)


def _shaped(arr, shape: tuple[int, ...], name: str) -> np.ndarray:
    out = np.array(arr, dtype=float)
    if out.size != int(np.prod(shape)):
        raise SchemaError(f"RBM parameter {name} has shape {out.shape}, expected {shape}")
    return out.reshape(shape)


# --- synthesis -----------------------------------------------------------------------


def _log_factor(f: np.ndarray, log_floor: float) -> np.ndarray:
    """Log of a factor with zeros replaced by ``exp(log_floor)``, renormalised."""
    with np.errstate(divide="ignore"):
        lf = np.where(f > 0, np.log(np.where(f > 0, f, 1.0)), log_floor)
    return lf - logsumexp(lf)


def _natural(space: StateSpace, log_factors: Sequence[np.ndarray]) -> tuple[np.ndarray, float]:
    """Natural parameter ``eta`` and offset ``kappa`` with ``log r(x) = kappa + eta·x``."""
    eta = np.zeros(space.dim)
    kappa = 0.0
    for i, lf in enumerate(log_factors):
        eta[space.block(i)] = lf[1:] - lf[0]
        kappa += lf[0]
    return eta, kappa


def _overlap_clusters(target: MixtureOfProducts, comps: list[int]) -> list[list[int]]:
    parent = {i: i for i in comps}

    def find(i):
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    sup = {i: target.support(i) for i in comps}
    for a_pos, a in enumerate(comps):
        for bb in comps[a_pos + 1 :]:
            if supports_overlap(sup[a], sup[bb]):
                parent[find(a)] = find(bb)
    clusters: dict[int, list[int]] = {}
    for i in comps:
        clusters.setdefault(find(i), []).append(i)
    return list(clusters.values())


def _pack(target: MixtureOfProducts, comps: list[int], hidden: StateSpace) -> list[list[int]]:
    """Assign components to hidden units; overlapping components share a unit."""
    clusters = _overlap_clusters(target, comps)
    clusters.sort(key=lambda cl: (-len(cl), -float(target.weights[cl].sum()), cl[0]))
    units = sorted(range(hidden.n), key=lambda j: (-hidden.cards[j], j))
    free = {j: hidden.cards[j] - 1 for j in units}
    groups: list[list[int]] = [[] for _ in range(hidden.n)]
    for cl in clusters:
        for j in units:
            if free[j] >= len(cl):
                groups[j].extend(cl)
                free[j] -= len(cl)
                break
        else:
            raise CapacityError(
                f"cannot place {len(comps)} mixture components (overlap clusters of sizes "
                f"{sorted(len(c) for c in clusters)}) into hidden units {hidden.cards}"
            )
    return groups


def synth_rbm_mixture(
    target: MixtureOfProducts,
    hidden: StateSpace,
    K: float,
    base: int | None = 0,
    groups: Sequence[Sequence[int]] | None = None,
) -> RbmParams:
    """RBM parameters whose visible marginal approaches a structured mixture of products.

    Component ``base`` is carried by the visible bias.  Every other component
    with positive weight occupies one non-zero state of one hidden unit;
    components assigned to different hidden units must have disjoint supports,
    components sharing a unit may overlap.  ``groups[j]`` lists the components
    for hidden unit ``j``; by default overlap clusters are packed first-fit,
    largest first.  ``base=None`` uses a uniform base of negligible weight.

    Zeros in the base factors become ``exp(-K)``.  The base weight is floored at
    ``exp(-K/2)``.  Zeros in the other components are pushed far enough below the
    base (``exp(-10K)`` relative to its smallest value) that products between
    terms of different hidden units stay negligible.
    """
    if not K > 0:
        raise DomainError(f"sharpness K must be positive, got {K}")
    vis = target.space
    w = target.weights
    if base is None:
        base_lf = [np.full(q, -np.log(q)) for q in vis.cards]
        lam0 = 0.0
    else:
        base_lf = [_log_factor(f, -K) for f in target.factors[base]]
        lam0 = float(w[base])
    log_lam0 = np.log(max(lam0, np.exp(-K / 2)))
    log_floor = -10.0 * K + log_lam0 + sum(lf.min() for lf in base_lf)
    eta0, kappa0 = _natural(vis, base_lf)

    comps = [i for i in range(len(w)) if i != base and w[i] > 0]
    if groups is None:
        groups = _pack(target, comps, hidden)
    else:
        groups = [list(g) for g in groups]
        if len(groups) != hidden.n:
            raise CapacityError(f"{len(groups)} groups given for {hidden.n} hidden units")
        for j, g in enumerate(groups):
            if len(g) > hidden.cards[j] - 1:
                raise CapacityError(f"hidden unit {j} holds {hidden.cards[j] - 1} components, {len(g)} given")
        placed = sorted(i for g in groups for i in g)
        if placed != sorted(set(placed)) or not set(comps) <= set(placed) or base in placed:
            raise ConstraintError("groups must list every positive non-base component exactly once")
    for ja, ga in enumerate(groups):
        for gb in groups[ja + 1 :]:
            for a in ga:
                for bb in gb:
                    if supports_overlap(target.support(a), target.support(bb)):
                        raise ConstraintError(f"components {a} and {bb} overlap but sit on different hidden units")

    W = np.zeros((vis.dim, hidden.dim))
    c = np.full(hidden.dim, -100.0 * K)
    for j, g in enumerate(groups):
        off = hidden.offsets[j]
        for slot, i in enumerate(g):
            if w[i] <= 0:
                continue
            lf = [_log_factor(f, log_floor) for f in target.factors[i]]
            eta, kappa = _natural(vis, lf)
            W[:, off + slot] = eta - eta0
            c[off + slot] = np.log(w[i]) - log_lam0 + kappa - kappa0
    return RbmParams(vis, hidden, W, eta0, c)


def partition_mixture(pm: PartitionModel, target: Dist) -> tuple[MixtureOfProducts, int]:
    """Write a block-constant distribution as products grouped along the largest fixed coordinate.

    Returns the mixture and the index of its heaviest component.
    """
    if pm.fixed_coords is None:
        raise ConstraintError("partition must consist of coordinate cylinders")
    space = pm.space
    proj = project_to_partition(target, pm)
    fixed = list(pm.fixed_coords)
    T = proj.tensor()
    if not fixed:
        factors = [tuple(np.full(q, 1.0 / q) for q in space.cards)]
        return MixtureOfProducts(space, np.ones(1), tuple(factors)), 0
    jstar = max(fixed, key=lambda i: (space.cards[i], -i))
    others = [i for i in fixed if i != jstar]
    free = [i for i in range(space.n) if i not in fixed]
    other_space = StateSpace(tuple(space.cards[i] for i in others))
    weights, factors = [], []
    for a in other_space:
        idx = [slice(None)] * space.n
        for i, v in zip(others, a):
            idx[i] = v
        sub = T[tuple(idx)]
        # remaining axes: jstar and free coords, in increasing coordinate order
        axes = [i for i in range(space.n) if i not in others]
        lam = sub.sum(axis=tuple(t for t, i in enumerate(axes) if i != jstar))
        tot = float(lam.sum())
        comp = []
        for i in range(space.n):
            if i == jstar:
                comp.append(lam / tot if tot > 0 else np.full(space.cards[i], 1.0 / space.cards[i]))
            elif i in free:
                comp.append(np.full(space.cards[i], 1.0 / space.cards[i]))
            else:
                e = np.zeros(space.cards[i])
                e[a[others.index(i)]] = 1.0
                comp.append(e)
        weights.append(tot)
        factors.append(tuple(comp))
    weights = np.asarray(weights)
    weights = weights / weights.sum()
    return MixtureOfProducts(space, weights, tuple(factors)), int(np.argmax(weights))


def synth_rbm_partition(pm: PartitionModel, target: Dist, hidden: StateSpace, K: float) -> RbmParams:
    """RBM approaching the projection of ``target`` onto a cylinder partition model."""
    if pm.fixed_coords is None:
        raise ConstraintError("partition must consist of coordinate cylinders")
    cards = [pm.space.cards[i] for i in pm.fixed_coords]
    needed = int(np.prod(cards)) // max(cards) if cards else 1
    if hidden_capacity(hidden) < needed:
        raise CapacityError(
            f"partition fixing {list(pm.fixed_coords)} needs capacity {needed}, hidden layer {hidden.cards} has {hidden_capacity(hidden)}"
        )
    mix, base = partition_mixture(pm, target)
    return synth_rbm_mixture(mix, hidden, K, base=base)


@dataclass(frozen=True)
class UniversalCondition:
    Lambda: tuple[int, ...]
    coarseness: int
    bound: float

    @property
    def universal(self) -> bool:
        return self.coarseness == 1


def rbm_universal_condition(visible: StateSpace, hidden: StateSpace) -> UniversalCondition:
    lam, leftover = best_lambda(visible.cards, hidden_capacity(hidden))
    return UniversalCondition(lam, leftover, float(np.log(leftover)))
