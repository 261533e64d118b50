"""Dense distributions on finite state spaces, partition models and divergences.

All divergences are in nats.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from typing import Sequence

import numpy as np
from scipy.special import logsumexp

from dbnlab.errors import DomainError, SchemaError
from dbnlab.state_space import StateSpace, check_cap

NORMALIZATION_TOL = 1e-12


@dataclass(frozen=True, eq=False)
class Dist:
    """Probability mass on every state of ``space``, ordered by flat index."""

    space: StateSpace
    mass: np.ndarray

    def __post_init__(self) -> None:
        check_cap(self.space.size, "distribution")
        mass = np.array(self.mass, dtype=float).reshape(-1)
        if mass.shape[0] != self.space.size:
            raise DomainError(f"mass has {mass.shape[0]} entries, space has {self.space.size} states")
        if not np.all(np.isfinite(mass)) or np.any(mass < 0):
            raise DomainError("mass entries must be finite and non-negative")
        total = mass.sum()
        if abs(total - 1.0) > NORMALIZATION_TOL:
            raise DomainError(f"mass sums to {total!r}, not 1")
        mass.setflags(write=False)
        object.__setattr__(self, "mass", mass)

    @classmethod
    def normalized(cls, space: StateSpace, weights: np.ndarray) -> "Dist":
        w = np.asarray(weights, dtype=float).reshape(-1)
        return cls(space, w / w.sum())

    @classmethod
    def from_log(cls, space: StateSpace, logw: np.ndarray) -> "Dist":
        """Normalise unnormalised log-weights with a max-shift."""
        logw = np.asarray(logw, dtype=float).reshape(-1)
        p = np.exp(logw - logsumexp(logw))
        return cls(space, p / p.sum())

    @classmethod
    def uniform(cls, space: StateSpace) -> "Dist":
        return cls(space, np.full(space.size, 1.0 / space.size))

    @classmethod
    def point(cls, space: StateSpace, x: Sequence[int]) -> "Dist":
        m = np.zeros(space.size)
        m[space.index(x)] = 1.0
        return cls(space, m)

    def __call__(self, x: Sequence[int]) -> float:
        return float(self.mass[self.space.index(x)])

    @property
    def support(self) -> np.ndarray:
        return np.flatnonzero(self.mass > 0)

    def tensor(self) -> np.ndarray:
        """Mass reshaped to ``space.cards``."""
        return self.mass.reshape(self.space.cards) if self.space.n else self.mass.copy()

    def marginal(self, i: int) -> np.ndarray:
        axes = tuple(j for j in range(self.space.n) if j != i)
        return self.tensor().sum(axis=axes)

    def permuted(self, perm: Sequence[int]) -> "Dist":
        """Same distribution with coordinate ``t`` taken from coordinate ``perm[t]``."""
        return Dist(self.space.permuted(perm), np.transpose(self.tensor(), perm).reshape(-1))

    def __eq__(self, other: object) -> bool:
        return (
            isinstance(other, Dist)
            and self.space == other.space
            and np.array_equal(self.mass, other.mass)
        )

    __hash__ = None  # type: ignore[assignment]


def kl(p: Dist, q: Dist) -> float:
    """``D(p || q)`` in nats; ``inf`` when ``supp(p)`` is not inside ``supp(q)``."""
    if p.space != q.space:
        raise DomainError(f"spaces differ: {p.space.cards} vs {q.space.cards}")
    s = p.mass > 0
    if np.any(q.mass[s] == 0):
        return float("inf")
    ps, qs = p.mass[s], q.mass[s]
    return max(0.0, float(np.sum(ps * (np.log(ps) - np.log(qs)))))


@dataclass(frozen=True, eq=False)
class PartitionModel:
    """Distributions constant on each block of a partition of the states.

    ``fixed_coords`` is set when the blocks are the cylinder sets fixing exactly
    those coordinates (see :meth:`cylinders`).
    """

    space: StateSpace
    blocks: tuple[np.ndarray, ...]
    fixed_coords: tuple[int, ...] | None = None

    def __post_init__(self) -> None:
        blocks = tuple(np.asarray(b, dtype=np.int64).reshape(-1) for b in self.blocks)
        seen = np.zeros(self.space.size, dtype=np.int64)
        for b in blocks:
            if b.size == 0:
                raise SchemaError("partition blocks must be non-empty")
            if b.min() < 0 or b.max() >= self.space.size:
                raise SchemaError("partition block refers to a state outside the space")
            np.add.at(seen, b, 1)
        if np.any(seen != 1):
            raise SchemaError("partition blocks must be disjoint and cover every state")
        object.__setattr__(self, "blocks", blocks)

    @classmethod
    def cylinders(cls, space: StateSpace, fixed_coords: Sequence[int]) -> "PartitionModel":
        """Blocks ``{x_F} x prod_{i not in F} X_i`` for every assignment ``x_F``."""
        fixed = tuple(sorted(set(int(i) for i in fixed_coords)))
        st = space.states
        if fixed:
            sub = StateSpace(tuple(space.cards[i] for i in fixed))
            key = sub.indices_of(st[:, list(fixed)])
        else:
            key = np.zeros(space.size, dtype=np.int64)
        order = np.argsort(key, kind="stable")
        splits = np.flatnonzero(np.diff(key[order])) + 1
        return cls(space, tuple(np.split(order, splits)), fixed)

    @cached_property
    def labels(self) -> np.ndarray:
        lab = np.empty(self.space.size, dtype=np.int64)
        for i, b in enumerate(self.blocks):
            lab[b] = i
        return lab

    @property
    def coarseness(self) -> int:
        return max(b.size for b in self.blocks)

    def block_masses(self, p: Dist) -> np.ndarray:
        return np.bincount(self.labels, weights=p.mass, minlength=len(self.blocks))


def project_to_partition(p: Dist, pm: PartitionModel) -> Dist:
    """KL projection of ``p`` onto ``pm``: spread each block's mass uniformly."""
    if p.space != pm.space:
        raise DomainError(f"spaces differ: {p.space.cards} vs {pm.space.cards}")
    sizes = np.array([b.size for b in pm.blocks], dtype=float)
    per_state = pm.block_masses(p) / sizes
    return Dist.normalized(p.space, per_state[pm.labels])


def partition_max_kl(pm: PartitionModel) -> float:
    return float(np.log(pm.coarseness))


def sample_dirichlet(space: StateSpace, a: float, rng: np.random.Generator) -> Dist:
    """One draw from the symmetric Dirichlet ``Dir(a, ..., a)`` on ``space``.

    Gamma variates are drawn at shape ``a + 1`` and boosted by ``U**(1/a)``; the
    whole computation stays in log space so that tiny concentrations do not
    underflow to an all-zero vector.
    """
    return Dist(space, sample_dirichlet_batch(space, a, 1, rng)[0])


def sample_dirichlet_batch(space: StateSpace, a: float, size: int, rng: np.random.Generator) -> np.ndarray:
    """``size`` Dirichlet draws as rows of an array; one row consumes the stream like :func:`sample_dirichlet`."""
    if not a > 0:
        raise DomainError(f"Dirichlet concentration must be positive, got {a}")
    check_cap(space.size)
    log_g = np.log(rng.standard_gamma(a + 1.0, size=(size, space.size)))
    log_g += np.log(rng.random((size, space.size))) / a
    w = np.exp(log_g - log_g.max(axis=1, keepdims=True))
    return w / w.sum(axis=1, keepdims=True)


def partition_divergences(masses: np.ndarray, pm: PartitionModel) -> np.ndarray:
    """``D(p || pm)`` for every row ``p`` of ``masses`` (the divergence to its block average)."""
    masses = np.asarray(masses, dtype=float).reshape(-1, pm.space.size)
    sizes = np.array([b.size for b in pm.blocks], dtype=float)
    block = np.stack([masses[:, b].sum(axis=1) for b in pm.blocks], axis=1)
    with np.errstate(divide="ignore", invalid="ignore"):
        plogp = np.where(masses > 0, masses * np.log(np.where(masses > 0, masses, 1.0)), 0.0).sum(axis=1)
        blog = np.where(block > 0, block * np.log(np.where(block > 0, block / sizes, 1.0)), 0.0).sum(axis=1)
    return np.maximum(plogp - blog, 0.0)


def empirical_from_samples(space: StateSpace, samples: Sequence[Sequence[int]] | np.ndarray) -> Dist:
    samples = np.asarray(samples, dtype=np.int64)
    if samples.size == 0 or samples.shape[0] == 0:
        raise DomainError("cannot form an empirical distribution from zero samples")
    samples = samples.reshape(samples.shape[0], space.n)
    if np.any(samples < 0) or np.any(samples >= np.asarray(space.cards)):
        raise DomainError("sample outside the state space")
    counts = np.bincount(space.indices_of(samples), minlength=space.size)
    return Dist(space, counts / counts.sum())


def sample_states(p: Dist, n: int, rng: np.random.Generator) -> np.ndarray:
    """``n`` i.i.d. states from ``p`` as an ``(n, space.n)`` array."""
    idx = rng.choice(p.space.size, size=n, p=p.mass)
    return p.space.states[idx]


@dataclass(frozen=True, eq=False)
class MixtureOfProducts:
    """``sum_i weights[i] * prod_j factors[i][j](x_j)``.

    Each factor is a distribution over one coordinate's values.
    """

    space: StateSpace
    weights: np.ndarray
    factors: tuple[tuple[np.ndarray, ...], ...]

    def __post_init__(self) -> None:
        w = np.asarray(self.weights, dtype=float).reshape(-1)
        if len(self.factors) != w.size:
            raise SchemaError("one factor list per mixture weight is required")
        if np.any(w < 0) or abs(w.sum() - 1) > 1e-10:
            raise DomainError("mixture weights must be non-negative and sum to 1")
        comps = []
        for comp in self.factors:
            if len(comp) != self.space.n:
                raise SchemaError("each component needs one factor per coordinate")
            fs = []
            for j, f in enumerate(comp):
                f = np.asarray(f, dtype=float).reshape(-1)
                if f.size != self.space.cards[j] or np.any(f < 0) or abs(f.sum() - 1) > 1e-10:
                    raise DomainError(f"factor for coordinate {j} is not a distribution on {self.space.cards[j]} values")
                fs.append(f)
            comps.append(tuple(fs))
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "factors", tuple(comps))

    def component(self, i: int) -> np.ndarray:
        """Dense mass of component ``i``."""
        st = self.space.states
        out = np.ones(self.space.size)
        for j, f in enumerate(self.factors[i]):
            out *= f[st[:, j]]
        return out

    def support(self, i: int) -> list[np.ndarray]:
        """Per-coordinate supports of component ``i`` (its support is their product)."""
        return [np.flatnonzero(f > 0) for f in self.factors[i]]

    def evaluate(self, x: Sequence[int]) -> float:
        x = self.space.validate(x)
        return float(sum(w * np.prod([f[v] for f, v in zip(comp, x)]) for w, comp in zip(self.weights, self.factors)))

    def to_dist(self) -> Dist:
        dense = sum(w * self.component(i) for i, w in enumerate(self.weights))
        return Dist.normalized(self.space, dense)


def supports_overlap(a: Sequence[np.ndarray], b: Sequence[np.ndarray]) -> bool:
    """Whether two product supports (per-coordinate index sets) intersect."""
    return all(np.intersect1d(sa, sb).size > 0 for sa, sb in zip(a, b))
