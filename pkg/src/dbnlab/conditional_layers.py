"""Directed DBN layers as stochastic maps, and the star construction that drives probability sharing.

A layer maps input states ``y`` to a product of per-unit softmax factors
``p(x_i | y) ∝ exp(x_i·(Theta_i y + theta_i))``.  The star construction sets one
output unit's parameters so that it emits prescribed distributions on a
cylinder ``Z`` of inputs and copies its own input coordinate everywhere else.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.special import logsumexp

from dbnlab.distributions import Dist
from dbnlab.errors import ConstraintError, DomainError, SchemaError
from dbnlab.state_space import CylinderSet, StateSpace, check_cap


@dataclass(frozen=True, eq=False)
class LayerParams:
    """Conditional ``p(x | y)`` from ``input`` (layer above) to ``output`` (layer below)."""

    input: StateSpace
    output: StateSpace
    Theta: np.ndarray
    theta: np.ndarray

    def __post_init__(self) -> None:
        Theta = np.array(self.Theta, dtype=float)
        theta = np.array(self.theta, dtype=float)
        if Theta.size != self.output.dim * self.input.dim or theta.size != self.output.dim:
            raise SchemaError(
                f"layer parameters have shapes {Theta.shape}, {theta.shape}; expected {(self.output.dim, self.input.dim)}, {(self.output.dim,)}"
            )
        Theta = Theta.reshape(self.output.dim, self.input.dim)
        theta = theta.reshape(self.output.dim)
        if not (np.all(np.isfinite(Theta)) and np.all(np.isfinite(theta))):
            raise DomainError("layer parameters must be finite")
        Theta.setflags(write=False)
        theta.setflags(write=False)
        object.__setattr__(self, "Theta", Theta)
        object.__setattr__(self, "theta", theta)

    @classmethod
    def zeros(cls, input: StateSpace, output: StateSpace) -> "LayerParams":
        return cls(input, output, np.zeros((output.dim, input.dim)), np.zeros(output.dim))

    @classmethod
    def random(cls, input: StateSpace, output: StateSpace, rng: np.random.Generator, scale: float = 1.0) -> "LayerParams":
        return cls(input, output, rng.normal(0, scale, (output.dim, input.dim)), rng.normal(0, scale, output.dim))

    @property
    def n_params(self) -> int:
        return self.Theta.size + self.theta.size

    def flat(self) -> np.ndarray:
        return np.concatenate([self.Theta.ravel(), self.theta])

    def with_flat(self, v: np.ndarray) -> "LayerParams":
        return LayerParams(self.input, self.output, v[: self.Theta.size], v[self.Theta.size :])


def unit_log_probs(params: LayerParams, ystats: np.ndarray) -> list[np.ndarray]:
    """Per output unit, ``log p(x_i | y)`` for every value of ``x_i``, shape ``(N, q_i)``."""
    act = ystats @ params.Theta.T + params.theta
    out = []
    for i in range(params.output.n):
        blk = act[:, params.output.block(i)]
        logits = np.concatenate([np.zeros((blk.shape[0], 1)), blk], axis=1)
        out.append(logits - logsumexp(logits, axis=1, keepdims=True))
    return out


def layer_log_matrix(params: LayerParams) -> np.ndarray:
    """``log p(x | y)`` as an ``(|Y|, |X|)`` array."""
    check_cap(params.input.size * params.output.size, "layer transition matrix")
    xs = params.output.states
    out = np.zeros((params.input.size, params.output.size))
    for i, lp in enumerate(unit_log_probs(params, params.input.stats)):
        out += lp[:, xs[:, i]]
    return out


def layer_matrix(params: LayerParams) -> np.ndarray:
    return np.exp(layer_log_matrix(params))


def layer_conditional(params: LayerParams, y: Sequence[int]) -> Dist:
    y = params.input.validate(y)
    ystats = params.input.one_hot(y)[None, :]
    logp = np.zeros(params.output.size)
    xs = params.output.states
    for i, lp in enumerate(unit_log_probs(params, ystats)):
        logp += lp[0, xs[:, i]]
    return Dist.from_log(params.output, logp)


def apply_stochastic_map(params: LayerParams, q: Dist) -> Dist:
    """Push ``q`` on the input space through the layer."""
    if q.space != params.input:
        raise DomainError(f"input distribution lives on {q.space.cards}, layer expects {params.input.cards}")
    return Dist.normalized(params.output, q.mass @ layer_matrix(params))


def permute_layer(params: LayerParams, perm: Sequence[int]) -> LayerParams:
    from dbnlab.rbm import _block_perm

    oi = _block_perm(params.output, perm)
    ii = _block_perm(params.input, perm)
    return LayerParams(params.input.permuted(perm), params.output.permuted(perm), params.Theta[np.ix_(oi, ii)], params.theta[oi])


# --- star construction ---------------------------------------------------------------

#: Default for ``target_coord``: the single free coordinate of ``Z``, if any.
AUTO = object()


def vertex_direction(r: int, v: int) -> np.ndarray:
    """Natural-parameter direction whose softmax has a unique maximum at ``v``.

    ``+1`` on ``v``'s one-hot entry and ``-1`` elsewhere; all ``-1`` for ``v = 0``.
    """
    out = -np.ones(r - 1)
    if v:
        out[v - 1] = 1.0
    return out


class _Affine:
    """Accumulates ``bias + M @ y_onehot`` for one output unit."""

    def __init__(self, space: StateSpace, d: int):
        self.space = space
        self.bias = np.zeros(d)
        self.M = np.zeros((d, space.dim))

    def add_indicator(self, j: int, v: int, vec: np.ndarray) -> None:
        """Add ``vec * [y_j == v]``."""
        blk = self.space.block(j)
        if v:
            self.M[:, blk.start + v - 1] += vec
        else:
            self.bias += vec
            self.M[:, blk] -= vec[:, None]

    def add_mismatch(self, j: int, v: int, vec: np.ndarray) -> None:
        """Add ``vec * [y_j != v]``."""
        self.bias += vec
        self.add_indicator(j, v, -vec)


@dataclass(frozen=True, eq=False)
class StarParams:
    """Parameters of one output unit: column 0 of ``matrix`` is the bias."""

    input: StateSpace
    unit: int
    matrix: np.ndarray
    Z: CylinderSet | None = None
    target_coord: int | None = None
    max_target_kl: float = 0.0
    max_copy_error: float = 0.0
    K0: float = 0.0
    K1: float = 0.0

    @property
    def output_card(self) -> int:
        return self.input.cards[self.unit]

    def log_probs(self, ystats: np.ndarray) -> np.ndarray:
        act = ystats @ self.matrix[:, 1:].T + self.matrix[:, 0]
        logits = np.concatenate([np.zeros((act.shape[0], 1)), act], axis=1)
        return logits - logsumexp(logits, axis=1, keepdims=True)

    def conditional(self, y: Sequence[int]) -> np.ndarray:
        return np.exp(self.log_probs(self.input.one_hot(y)[None, :])[0])

    @property
    def tol(self) -> float:
        return max(self.max_target_kl, self.max_copy_error)


def _clamped_log(q: np.ndarray, K: float) -> np.ndarray:
    with np.errstate(divide="ignore"):
        lq = np.where(q > 0, np.log(np.where(q > 0, q, 1.0)), -K)
    return lq - logsumexp(lq)


def synth_star(
    space: StateSpace,
    Z: CylinderSet,
    unit: int,
    targets: np.ndarray,
    K: float,
    target_coord: int | None | object = AUTO,
) -> StarParams:
    """Star parameters for output unit ``unit`` (whose states are those of input unit ``unit``).

    For inputs ``y`` in ``Z`` the unit emits ``targets[y[target_coord]]``; for
    every other input it copies ``y[unit]``.  ``unit`` must be fixed in ``Z``.
    Free coordinates of ``Z`` other than ``target_coord`` do not influence the
    output.  If ``target_coord`` is omitted it defaults to the only free
    coordinate of a one-dimensional ``Z``; ``None`` (or a zero-dimensional
    ``Z``) means a single target for all of ``Z``.

    Target entries equal to zero are clamped to ``exp(-K)``.  Dominance
    constants: ``K0 = K (1 + max|theta|)`` for the mismatch penalty and
    ``K1 = 10 K0 max(1, #penalised coordinates)`` for the copy term.
    """
    Z.check(space)
    if not 0 <= unit < space.n:
        raise SchemaError(f"output unit {unit} outside 0..{space.n - 1}")
    if unit not in Z.fixed:
        raise ConstraintError(f"output unit {unit} must be a fixed coordinate of Z (Z frees {sorted(Z.free)})")
    if target_coord is AUTO:
        if len(Z.free) > 1:
            raise SchemaError("Z has several free coordinates; name the one the targets depend on")
        target_coord = next(iter(Z.free)) if Z.free else None
    if target_coord is not None and target_coord not in Z.free:
        raise ConstraintError(f"target coordinate {target_coord} is not free in Z")
    r = space.cards[unit]
    n_t = space.cards[target_coord] if target_coord is not None else 1
    targets = np.asarray(targets, dtype=float).reshape(n_t, -1)
    if targets.shape[1] != r:
        raise ConstraintError(f"targets are distributions on {targets.shape[1]} values, unit {unit} has {r}")
    if np.any(targets < 0) or np.any(np.abs(targets.sum(axis=1) - 1) > 1e-10):
        raise DomainError("star targets must be probability vectors")
    if not K >= 0:
        raise DomainError(f"sharpness K must be non-negative, got {K}")

    logq = np.array([_clamped_log(t, K) for t in targets])
    thetas = logq[:, 1:] - logq[:, :1]
    M = float(np.abs(thetas).max()) if thetas.size else 0.0
    penalised = [j for j in Z.fixed if j != unit]
    K0 = K * (1.0 + M)
    K1 = 10.0 * K0 * max(1, len(penalised))
    zu = Z.fixed[unit]

    aff = _Affine(space, r - 1)
    aff.bias += thetas[0]
    if target_coord is not None:
        for a in range(1, n_t):
            aff.add_indicator(target_coord, a, thetas[a] - thetas[0])
    for j in penalised:
        aff.add_mismatch(j, Z.fixed[j], K0 * vertex_direction(r, zu))
    for v in range(r):
        if v != zu:
            aff.add_indicator(unit, v, K1 * vertex_direction(r, v))
    star = StarParams(space, unit, np.concatenate([aff.bias[:, None], aff.M], axis=1), Z, target_coord, K0=K0, K1=K1)
    kl_err, copy_err = star_errors(star, targets)
    return StarParams(space, unit, star.matrix, Z, target_coord, kl_err, copy_err, K0, K1)


def star_errors(star: StarParams, targets: np.ndarray) -> tuple[float, float]:
    """Exhaustive check: worst ``KL(target || output)`` on ``Z`` and worst ``1 - p(copy)`` off ``Z``."""
    space = star.input
    check_cap(space.size, "star input space")
    lp = star.log_probs(space.stats)
    inZ = star.Z.mask(space)
    st = space.states
    worst_kl = 0.0
    zi = np.flatnonzero(inZ)
    if zi.size:
        tv = st[zi, star.target_coord] if star.target_coord is not None else np.zeros(zi.size, dtype=int)
        t = np.asarray(targets).reshape(-1, star.output_card)[tv]
        with np.errstate(divide="ignore", invalid="ignore"):
            terms = np.where(t > 0, t * (np.log(np.where(t > 0, t, 1.0)) - lp[zi]), 0.0)
        worst_kl = float(max(0.0, terms.sum(axis=1).max()))
    oi = np.flatnonzero(~inZ)
    worst_copy = float((1.0 - np.exp(lp[oi, st[oi, star.unit]])).max()) if oi.size else 0.0
    return worst_kl, max(0.0, worst_copy)


# --- whole layers ----------------------------------------------------------------------


@dataclass(frozen=True)
class StarTask:
    """Sharing step for one output unit: emit ``targets[y[target_coord]]`` on ``Z``."""

    unit: int
    Z: CylinderSet
    targets: np.ndarray = field(compare=False)
    target_coord: int | None | object = AUTO


def _copy_block(space: StateSpace, i: int, K: float) -> tuple[np.ndarray, np.ndarray]:
    d = space.cards[i] - 1
    return 2.0 * K * np.eye(d), -K * np.ones(d)


def synth_copy_layer(space: StateSpace, K: float, output: StateSpace | None = None) -> LayerParams:
    """Layer whose unit ``i`` reproduces input coordinate ``i`` with gain ``K``."""
    if output is not None and output != space:
        raise DomainError(f"copy layer needs equal spaces, got {space.cards} and {output.cards}")
    return assemble_layer(space, [], K)


def assemble_layer(space: StateSpace, stars: Sequence[StarParams], K: float) -> LayerParams:
    """Square layer on ``space``: given stars for some units, copies elsewhere."""
    Theta = np.zeros((space.dim, space.dim))
    theta = np.zeros(space.dim)
    by_unit = {}
    for s in stars:
        if s.unit in by_unit:
            raise SchemaError(f"two star tasks target output unit {s.unit}")
        if s.input != space:
            raise DomainError("star input space does not match the layer")
        by_unit[s.unit] = s
    for i in range(space.n):
        blk = space.block(i)
        if i in by_unit:
            Theta[blk, :] = by_unit[i].matrix[:, 1:]
            theta[blk] = by_unit[i].matrix[:, 0]
        else:
            Theta[blk, blk], theta[blk] = _copy_block(space, i, K)
    return LayerParams(space, space, Theta, theta)


def synth_sharing_layer(
    space: StateSpace, tasks: Sequence[StarTask], K: float, return_stars: bool = False
):
    """One layer realising several sharing steps at once and copying every other unit."""
    units = [t.unit for t in tasks]
    dup = {u for u in units if units.count(u) > 1}
    if dup:
        raise SchemaError(f"more than one star task on output units {sorted(dup)}")
    for a in range(len(tasks)):
        for b in range(a + 1, len(tasks)):
            if not tasks[a].Z.disjoint(tasks[b].Z):
                raise ConstraintError(f"star cylinders of units {tasks[a].unit} and {tasks[b].unit} intersect")
    stars = [synth_star(space, t.Z, t.unit, t.targets, K, t.target_coord) for t in tasks]
    layer = assemble_layer(space, stars, K)
    return (layer, stars) if return_stars else layer


def ideal_star_matrix(space: StateSpace, tasks: Sequence[StarTask]) -> np.ndarray:
    """The exact stochastic matrix the star tasks describe (limit of infinite sharpness)."""
    check_cap(space.size * space.size, "ideal transition matrix")
    st = space.states
    T = np.eye(space.size)
    for t in tasks:
        inZ = np.flatnonzero(t.Z.mask(space))
        tc = t.target_coord
        if tc is AUTO:
            tc = next(iter(t.Z.free)) if len(t.Z.free) == 1 else None
        tg = np.asarray(t.targets, dtype=float).reshape(-1, space.cards[t.unit])
        for y in inZ:
            row = np.zeros(space.size)
            a = st[y, tc] if tc is not None else 0
            for v in range(space.cards[t.unit]):
                x = st[y].copy()
                x[t.unit] = v
                row[space.index(x)] += tg[a, v]
            T[y] = row
    return T
