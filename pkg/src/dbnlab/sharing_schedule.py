"""Sequences of one-dimensional cylinder sets that drive layer-by-layer probability sharing.

Coordinates are 0-based and assumed canonically ordered (non-increasing
cardinalities on the first ``m``).  With ``m`` sharing coordinates there are
``k = prod(cards[m+1:])`` parallel sequences, one per assignment ``y^(s)`` of the
suffix ``cards[m+1:]``; coordinate ``m`` (when it exists) is the target
coordinate, free in every row.  Sequence ``s`` visits the sharing coordinates in
the cyclically shifted order ``(s, s+1, ..., s+m-1) mod m``.

Only the first ``S`` coordinates of that order are *active*: row block ``κ < S``
has one row per assignment of the first ``κ`` active coordinates and shares
along the ``κ``-th one.  The remaining ``m - S`` coordinates are *passive*; they
stay free in every row and are never touched by a sharing step.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from itertools import product

import numpy as np

from dbnlab.errors import ConstraintError, DomainError
from dbnlab.state_space import CylinderSet, StateSpace


@dataclass(frozen=True)
class ScheduleRow:
    """One sharing step: mass on ``source`` spreads along ``unit`` to cover ``cover``."""

    sequence: int
    kappa: int
    unit: int
    prefix: tuple[int, ...]
    cover: CylinderSet
    source: CylinderSet
    target_coord: int | None
    passive: tuple[int, ...]
    repeat: bool = False


def shift_order(m: int, s: int) -> tuple[int, ...]:
    """Sharing order of sequence ``s``: ``(s, s+1, ..., s+m-1) mod m``."""
    return tuple((t + s) % m for t in range(m))


def sequence_count(cards: tuple[int, ...], m: int) -> int:
    return int(np.prod(cards[m + 1 :], dtype=np.int64)) if m + 1 < len(cards) else 1


def suffixes(cards: tuple[int, ...], m: int) -> list[tuple[int, ...]]:
    """Every assignment ``y^(s)`` of the coordinates after the target coordinate, lexicographically."""
    return [tuple(v) for v in product(*(range(q) for q in cards[m + 1 :]))]


def block_lengths(q: int, S: int) -> list[int]:
    return [q**kappa for kappa in range(S)]


def padded_depth(q: int, S: int) -> int:
    """``1 + q + ... + q^(S-1)``."""
    return sum(block_lengths(q, S))


def build_gs(
    space: StateSpace,
    m: int,
    shift: int,
    suffix: tuple[int, ...] = (),
    S: int | None = None,
    sequence: int = 0,
) -> list[ScheduleRow]:
    """Unpadded rows of the sequence with cyclic shift ``shift`` and suffix ``suffix``."""
    n = space.n
    if not 1 <= m <= n:
        raise DomainError(f"sharing prefix length m={m} must lie in 1..{n}")
    S = m if S is None else S
    if not 0 <= S <= m:
        raise DomainError(f"active length S={S} must lie in 0..{m}")
    if shift < 0:
        raise DomainError(f"cyclic shift must be non-negative, got {shift}")
    if len(suffix) != max(0, n - m - 1):
        raise DomainError(f"suffix {suffix} must assign the {max(0, n - m - 1)} coordinates after the target")
    order = shift_order(m, shift)
    active, passive = order[:S], tuple(sorted(order[S:]))
    f = m if m < n else None
    tail = {m + 1 + i: v for i, v in enumerate(suffix)}
    free_rest = set(passive) | ({f} if f is not None else set())
    rows = []
    for kappa in range(S):
        c = active[kappa]
        for prefix in product(*(range(space.cards[j]) for j in active[:kappa])):
            fixed = dict(zip(active[:kappa], prefix))
            fixed.update({j: 0 for j in active[kappa + 1 :]})
            fixed.update(tail)
            cover = CylinderSet(fixed, frozenset(free_rest | {c}))
            source = CylinderSet({**fixed, c: 0}, frozenset(free_rest))
            rows.append(ScheduleRow(sequence, kappa, c, tuple(prefix), cover, source, f, passive))
    return rows


def build_g1(space: StateSpace, m: int, suffix: tuple[int, ...] = (), S: int | None = None) -> list[ScheduleRow]:
    """The unshifted sequence: row 0 frees coordinate 0, then one row per prefix assignment."""
    return build_gs(space, m, 0, suffix, S)


def pad_to_gtilde(rows: list[ScheduleRow], q: int) -> list[ScheduleRow]:
    """Repeat each ``κ`` block cyclically until it holds ``q**κ`` rows."""
    out = []
    kappas = sorted({r.kappa for r in rows})
    for kappa in kappas:
        blk = [r for r in rows if r.kappa == kappa]
        want = q**kappa
        if len(blk) > want:
            raise ConstraintError(f"block {kappa} has {len(blk)} rows, more than q^{kappa} = {want}")
        for i in range(want):
            r = blk[i % len(blk)]
            out.append(r if i < len(blk) else ScheduleRow(**{**r.__dict__, "repeat": True}))
    return out


def kappa_of_row(l: int, q: int) -> int:
    """Minimal ``κ`` with ``l <= sum_{t<=κ} q^t`` for a 1-based row number ``l``."""
    acc, kappa = 0, 0
    while True:
        acc += q**kappa
        if l <= acc:
            return kappa
        kappa += 1


@dataclass(frozen=True, eq=False)
class SharingSchedule:
    space: StateSpace
    m: int
    S: int
    q: int
    suffixes: tuple[tuple[int, ...], ...]
    sequences: tuple[tuple[ScheduleRow, ...], ...]

    @property
    def k(self) -> int:
        return len(self.sequences)

    @property
    def depth(self) -> int:
        return padded_depth(self.q, self.S)

    @property
    def target_coord(self) -> int | None:
        return self.m if self.m < self.space.n else None

    def rows_at(self, depth: int) -> list[ScheduleRow]:
        """The ``k`` rows firing at 1-based ``depth`` (one per sequence)."""
        return [seq[depth - 1] for seq in self.sequences]

    def order(self, s: int) -> tuple[int, ...]:
        return shift_order(self.m, s)

    def passive(self, s: int) -> tuple[int, ...]:
        return tuple(sorted(self.order(s)[self.S :]))

    def active(self, s: int) -> tuple[int, ...]:
        return self.order(s)[: self.S]

    def seed(self, s: int) -> CylinderSet:
        """Cylinder holding sequence ``s``'s mass before any sharing step."""
        fixed = {j: 0 for j in self.active(s)}
        fixed.update({self.m + 1 + i: v for i, v in enumerate(self.suffixes[s])})
        free = set(self.passive(s)) | ({self.target_coord} if self.target_coord is not None else set())
        return CylinderSet(fixed, frozenset(free))

    @cached_property
    def seeds_mask(self) -> np.ndarray:
        m = np.zeros(self.space.size, dtype=bool)
        for s in range(self.k):
            m |= self.seed(s).mask(self.space)
        return m

    def coverage(self, depth: int) -> np.ndarray:
        """States reachable from the seeds after ``depth`` sharing layers."""
        m = self.seeds_mask.copy()
        for d in range(1, depth + 1):
            for r in self.rows_at(d):
                m |= r.cover.mask(self.space)
        return m

    def block_fixed_coords(self, s: int) -> tuple[int, ...]:
        """Coordinates fixed by the partition blocks this sequence can resolve."""
        return tuple(j for j in range(self.space.n) if j not in self.passive(s))


def build_schedule(space: StateSpace, m: int, S: int | None = None) -> SharingSchedule:
    """Padded sequences for every suffix, checking ``n >= m >= k``."""
    S = m if S is None else S
    if not 1 <= m <= space.n:
        raise DomainError(f"sharing prefix length m={m} must lie in 1..{space.n}")
    if not 0 <= S <= m:
        raise DomainError(f"active length S={S} must lie in 0..{m}")
    k = sequence_count(space.cards, m)
    if k > m:
        raise ConstraintError(f"m={m} is smaller than the number of sequences k={k}; need n >= m >= k")
    if list(space.cards[:m]) != sorted(space.cards[:m], reverse=True):
        raise ConstraintError(f"sharing coordinates must have non-increasing cardinalities, got {space.cards[:m]}")
    q = space.cards[0]
    sufs = suffixes(space.cards, m)
    seqs = tuple(tuple(pad_to_gtilde(build_gs(space, m, s, sfx, S, sequence=s), q)) for s, sfx in enumerate(sufs))
    return SharingSchedule(space, m, S, q, tuple(sufs), seqs)


@dataclass
class ScheduleReport:
    ok: bool
    failures: list[str] = field(default_factory=list)

    @property
    def first(self) -> str | None:
        return self.failures[0] if self.failures else None


def validate_schedule(schedule: SharingSchedule) -> ScheduleReport:
    """Check disjointness, distinct suffixes and units, the row-κ law, and terminal coverage."""
    sp = schedule.space
    fails = []
    if len(set(schedule.suffixes)) != len(schedule.suffixes):
        dup = next(x for x in schedule.suffixes if schedule.suffixes.count(x) > 1)
        fails.append(f"suffix {dup} used by more than one sequence")
    for seq in schedule.sequences:
        if len(seq) != schedule.depth:
            fails.append(f"sequence {seq[0].sequence if seq else '?'} has {len(seq)} rows, expected {schedule.depth}")
    for s, seq in enumerate(schedule.sequences):
        for l, r in enumerate(seq, start=1):
            if r.kappa != kappa_of_row(l, schedule.q):
                fails.append(f"sequence {s} row {l} has κ={r.kappa}, expected {kappa_of_row(l, schedule.q)}")
            elif r.unit != schedule.order(s)[r.kappa]:
                fails.append(f"sequence {s} row {l} frees coordinate {r.unit}, expected {schedule.order(s)[r.kappa]}")
    for d in range(1, schedule.depth + 1):
        rows = schedule.rows_at(d)
        units = [r.unit for r in rows]
        if len(set(units)) != len(units):
            fails.append(f"depth {d}: two sequences share on the same unit {units}")
        masks = [r.cover.mask(sp) for r in rows]
        for a in range(len(rows)):
            for b in range(a + 1, len(rows)):
                both = np.flatnonzero(masks[a] & masks[b])
                if both.size:
                    fails.append(
                        f"depth {d}: sequences {a} and {b} overlap at state {sp.unindex(int(both[0]))}"
                    )
    if schedule.S == schedule.m:
        cov = schedule.coverage(schedule.depth)
        if not cov.all():
            fails.append(f"terminal coverage misses state {sp.unindex(int(np.flatnonzero(~cov)[0]))}")
    return ScheduleReport(not fails, fails)


def format_schedule(schedule: SharingSchedule) -> str:
    """Text table: one line per row, free coordinate bracketed, ``*`` for free passive/target coordinates."""
    sp = schedule.space
    lines = [
        f"# cards={list(sp.cards)} m={schedule.m} S={schedule.S} q={schedule.q} k={schedule.k} depth={schedule.depth}"
    ]
    for s, seq in enumerate(schedule.sequences):
        lines.append(f"sequence {s} order={list(schedule.order(s))} suffix={list(schedule.suffixes[s])}")
        for l, r in enumerate(seq, start=1):
            cells = []
            for j in range(sp.n):
                if j == r.unit:
                    cells.append(f"[Y{j}]")
                elif j in r.cover.free:
                    cells.append(" * ")
                else:
                    cells.append(f" {r.cover.fixed[j]} ")
            tag = " (repeat)" if r.repeat else ""
            lines.append(f"  {l:3d}  κ={r.kappa}  " + " ".join(cells) + tag)
    return "\n".join(lines) + "\n"
