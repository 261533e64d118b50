"""Mixed-radix state spaces, one-hot sufficient statistics and cylinder sets.

States are tuples ``(x_0, ..., x_{n-1})`` with ``0 <= x_i < cards[i]``.  Flat
indices rank states in mixed radix with coordinate 0 most significant, so the
enumeration order is lexicographic.  Coordinates are 0-based throughout.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterable, Mapping, Sequence

import numpy as np

from dbnlab.errors import DomainError, ResourceError, SchemaError

#: Largest number of states any dense enumeration may touch.
ENUMERATION_CAP = 1 << 20


def check_cap(size: int, what: str = "state space", cap: int | None = None) -> None:
    limit = ENUMERATION_CAP if cap is None else cap
    if size > limit:
        raise ResourceError(f"{what} has {size} states, above the enumeration cap {limit}")


@dataclass(frozen=True)
class StateSpace:
    """Joint state space of ``n`` discrete units with cardinalities ``cards``.

    An empty ``cards`` tuple is allowed and denotes the one-point space (used
    for an RBM without hidden units).
    """

    cards: tuple[int, ...]

    def __post_init__(self) -> None:
        cards = tuple(int(q) for q in self.cards)
        for i, q in enumerate(cards):
            if q < 2:
                raise DomainError(f"unit {i} has cardinality {q}; every unit needs at least 2 states")
        object.__setattr__(self, "cards", cards)

    @classmethod
    def uniform(cls, q: int, n: int) -> "StateSpace":
        return cls((q,) * n)

    @property
    def n(self) -> int:
        return len(self.cards)

    @cached_property
    def size(self) -> int:
        return int(np.prod(self.cards, dtype=object)) if self.cards else 1

    @cached_property
    def dim(self) -> int:
        """Length of the one-hot statistic, ``sum(q_i - 1)``."""
        return sum(q - 1 for q in self.cards)

    @cached_property
    def offsets(self) -> tuple[int, ...]:
        """Start of each unit's block inside the one-hot statistic."""
        out, acc = [], 0
        for q in self.cards:
            out.append(acc)
            acc += q - 1
        return tuple(out)

    def block(self, i: int) -> slice:
        return slice(self.offsets[i], self.offsets[i] + self.cards[i] - 1)

    @cached_property
    def strides(self) -> tuple[int, ...]:
        out, acc = [], 1
        for q in reversed(self.cards):
            out.append(acc)
            acc *= q
        return tuple(reversed(out))

    def validate(self, x: Sequence[int]) -> tuple[int, ...]:
        if len(x) != self.n:
            raise DomainError(f"state {tuple(x)} has {len(x)} coordinates, space has {self.n}")
        out = []
        for i, (v, q) in enumerate(zip(x, self.cards)):
            v = int(v)
            if not 0 <= v < q:
                raise DomainError(f"coordinate {i} has value {v}, outside 0..{q - 1}")
            out.append(v)
        return tuple(out)

    def index(self, x: Sequence[int]) -> int:
        x = self.validate(x)
        return sum(v * s for v, s in zip(x, self.strides))

    def unindex(self, i: int) -> tuple[int, ...]:
        if not 0 <= i < self.size:
            raise DomainError(f"flat index {i} outside 0..{self.size - 1}")
        out = []
        for s, q in zip(self.strides, self.cards):
            out.append((i // s) % q)
        return tuple(out)

    @cached_property
    def states(self) -> np.ndarray:
        """All states as an ``(size, n)`` integer array in flat-index order."""
        check_cap(self.size)
        if self.n == 0:
            return np.zeros((1, 0), dtype=np.int64)
        grids = np.indices(self.cards).reshape(self.n, -1).T
        grids.setflags(write=False)
        return grids

    def indices_of(self, states: np.ndarray) -> np.ndarray:
        """Vectorised :meth:`index` for an ``(N, n)`` array of valid states."""
        states = np.asarray(states, dtype=np.int64)
        return states @ np.asarray(self.strides, dtype=np.int64)

    def one_hot(self, x: Sequence[int]) -> np.ndarray:
        x = self.validate(x)
        out = np.zeros(self.dim)
        for i, v in enumerate(x):
            if v:
                out[self.offsets[i] + v - 1] = 1.0
        return out

    def one_hot_batch(self, states: np.ndarray) -> np.ndarray:
        """One-hot statistics for an ``(N, n)`` array of states, shape ``(N, dim)``."""
        states = np.asarray(states, dtype=np.int64)
        out = np.zeros((states.shape[0], self.dim))
        rows = np.arange(states.shape[0])
        for i, off in enumerate(self.offsets):
            v = states[:, i]
            nz = v > 0
            out[rows[nz], off + v[nz] - 1] = 1.0
        return out

    @cached_property
    def stats(self) -> np.ndarray:
        """One-hot statistics of every state, shape ``(size, dim)``."""
        out = self.one_hot_batch(self.states)
        out.setflags(write=False)
        return out

    def permuted(self, perm: Sequence[int]) -> "StateSpace":
        """Space whose coordinate ``t`` is this space's coordinate ``perm[t]``."""
        return StateSpace(tuple(self.cards[p] for p in perm))

    def __len__(self) -> int:
        return self.size

    def __iter__(self):
        for row in self.states:
            yield tuple(int(v) for v in row)


def index(space: StateSpace, x: Sequence[int]) -> int:
    return space.index(x)


def one_hot(space: StateSpace, x: Sequence[int]) -> np.ndarray:
    return space.one_hot(x)


@dataclass(frozen=True)
class CylinderSet:
    """States agreeing with ``fixed`` on its coordinates; ``free`` coordinates range freely."""

    fixed: Mapping[int, int]
    free: frozenset[int] = field(default_factory=frozenset)

    def __post_init__(self) -> None:
        fixed = {int(k): int(v) for k, v in dict(self.fixed).items()}
        free = frozenset(int(j) for j in self.free)
        both = free & fixed.keys()
        if both:
            raise SchemaError(f"coordinates {sorted(both)} are listed as both fixed and free")
        object.__setattr__(self, "fixed", dict(sorted(fixed.items())))
        object.__setattr__(self, "free", free)

    def __hash__(self) -> int:
        return hash((tuple(self.fixed.items()), self.free))

    @classmethod
    def around(cls, x: Sequence[int], free: Iterable[int]) -> "CylinderSet":
        """The cylinder ``x[free]``: every state equal to ``x`` outside ``free``."""
        free = frozenset(free)
        return cls({i: v for i, v in enumerate(x) if i not in free}, free)

    def check(self, space: StateSpace) -> None:
        coords = set(self.fixed) | set(self.free)
        if coords != set(range(space.n)):
            raise SchemaError(
                f"cylinder coordinates {sorted(coords)} do not partition 0..{space.n - 1}"
            )
        for i, v in self.fixed.items():
            if not 0 <= v < space.cards[i]:
                raise DomainError(f"cylinder fixes coordinate {i} to {v}, outside 0..{space.cards[i] - 1}")

    def count(self, space: StateSpace) -> int:
        return int(np.prod([space.cards[j] for j in self.free], dtype=object)) if self.free else 1

    def contains(self, x: Sequence[int]) -> bool:
        return all(x[i] == v for i, v in self.fixed.items())

    def mask(self, space: StateSpace) -> np.ndarray:
        """Boolean membership over all states of ``space``."""
        self.check(space)
        st = space.states
        m = np.ones(space.size, dtype=bool)
        for i, v in self.fixed.items():
            m &= st[:, i] == v
        return m

    def tensor_index(self, space: StateSpace) -> tuple:
        """Index tuple selecting this cylinder from a ``space.cards``-shaped array."""
        return tuple(self.fixed[i] if i in self.fixed else slice(None) for i in range(space.n))

    def disjoint(self, other: "CylinderSet") -> bool:
        return any(other.fixed.get(i, v) != v for i, v in self.fixed.items())


def enumerate_cylinder(space: StateSpace, c: CylinderSet) -> list[int]:
    """Flat indices of all members of ``c``, in increasing order."""
    return [int(i) for i in np.flatnonzero(c.mask(space))]
