"""Closed-form approximation-error and depth formulas for discrete RBMs and DBNs.

Every divergence is returned in nats; :func:`to_base` converts for display.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Sequence

from scipy.special import digamma

from dbnlab.errors import DomainError


def to_base(nats: float, base: str | float = "e", q: int | None = None) -> float:
    """Convert a divergence from nats to ``base`` ('e', '2', 'q' or a number)."""
    if base in ("e", "nats", None):
        return nats
    if base in ("2", 2, "bits"):
        return nats / math.log(2)
    if base == "q":
        if q is None:
            raise DomainError("base 'q' needs a cardinality")
        return nats / math.log(q)
    return nats / math.log(float(base))


def _cards(x) -> tuple[int, ...]:
    return tuple(getattr(x, "cards", x))


# --- restricted Boltzmann machines -------------------------------------------------


def hidden_capacity(hidden) -> int:
    """``1 + sum_j (|Y_j| - 1)``: how many disjoint product groups a hidden layer can hold."""
    return 1 + sum(q - 1 for q in _cards(hidden))


def best_lambda(cards: Sequence[int], capacity: int) -> tuple[tuple[int, ...], int]:
    """Largest-product coordinate set ``L`` with ``prod_L q / max_L q <= capacity``.

    Returns ``(L, leftover)`` where ``leftover = prod_{i not in L} q_i`` is the
    coarseness of the resulting partition model.  Exact: the largest coordinate
    can always serve as the maximum of ``L``, which leaves a subset-product
    knapsack over the rest, solved by dynamic programming over reachable
    products (all bounded by ``capacity``).
    """
    cards = list(_cards(cards))
    n = len(cards)
    if n == 0:
        return (), 1
    top = max(range(n), key=lambda i: (cards[i], -i))
    reach: dict[int, tuple[int, ...]] = {1: ()}
    for i in range(n):
        if i == top:
            continue
        for prod, subset in list(reach.items()):
            p = prod * cards[i]
            if p <= capacity and p not in reach:
                reach[p] = subset + (i,)
    best = max(reach)
    lam = tuple(sorted(reach[best] + (top,)))
    leftover = math.prod(cards[i] for i in range(n) if i not in lam)
    return lam, leftover


def rbm_bound(visible, hidden) -> float:
    """Upper bound on the maximal divergence of the RBM with the given layers."""
    _, leftover = best_lambda(_cards(visible), hidden_capacity(hidden))
    return math.log(leftover)


# --- deep belief networks ----------------------------------------------------------


def canonical_order(cards: Sequence[int]) -> tuple[int, ...]:
    """Permutation listing coordinates by decreasing cardinality (stable)."""
    cards = _cards(cards)
    return tuple(sorted(range(len(cards)), key=lambda i: (-cards[i], i)))


def sharing_depth(q: int, s: int) -> int:
    """Number of sharing layers ``1 + q + ... + q^(s-1)``."""
    return sum(q**t for t in range(s))


@dataclass(frozen=True)
class SharingChoice:
    perm: tuple[int, ...]
    canonical_cards: tuple[int, ...]
    m: int
    S: int
    q: int
    k: int
    depth: int
    coarseness: int

    @property
    def bound(self) -> float:
        return math.log(self.coarseness)


def sequence_count(canonical_cards: Sequence[int], m: int) -> int:
    """``prod_{j=m+2}^{n} q_j`` (1-based), the empty product being 1."""
    return math.prod(canonical_cards[m + 1 :])


def sharing_choice(cards, L: int, m: int | None = None) -> SharingChoice | None:
    """Best feasible ``(m, S)`` for width-``n`` layers with the given cardinalities.

    Coordinates are first sorted by decreasing cardinality.  Minimises the
    partition coarseness ``prod_{j <= m-S} q_j``; ties go to the smaller ``m``.
    Passing ``m`` restricts the search to that value.  Returns ``None`` when no
    candidate is feasible.
    """
    if L < 2:
        raise DomainError(f"a DBN needs at least 2 layers, got {L}")
    cards = _cards(cards)
    perm = canonical_order(cards)
    cc = tuple(cards[i] for i in perm)
    n = len(cc)
    best: SharingChoice | None = None
    for mm in ([m] if m is not None else range(1, n + 1)):
        if not 1 <= mm <= n:
            raise DomainError(f"m={mm} outside 1..{n}")
        k = sequence_count(cc, mm)
        if mm < k:
            continue
        q = cc[0]
        S = max(s for s in range(mm + 1) if L >= 2 + sharing_depth(q, s))
        coarse = math.prod(cc[: mm - S])
        cand = SharingChoice(perm, cc, mm, S, q, k, sharing_depth(q, S), coarse)
        if best is None or cand.coarseness < best.coarseness:
            best = cand
    return best


def dbn_bound(cards, L: int) -> float:
    """Maximal-divergence bound for a constant-width DBN with ``L`` layers.

    Falls back to the top-RBM bound if no ``(m, S)`` is feasible (cannot happen
    for ``m = n``, kept for robustness).
    """
    choice = sharing_choice(cards, L)
    if choice is None:
        return rbm_bound(cards, cards)
    return choice.bound


@dataclass(frozen=True)
class Theorem1Depth:
    k: int
    n: int
    L_min: int
    lower: float
    middle: float
    upper: float

    @property
    def sandwich_holds(self) -> bool:
        return self.lower <= self.middle <= self.upper


def theorem1_depth(k: int) -> Theorem1Depth:
    """Binary width ``2^(k-1) + k`` and its universal depth ``1 + 2^(2^(k-1))``."""
    if k < 1:
        raise DomainError(f"k must be at least 1, got {k}")
    n = 2 ** (k - 1) + k
    middle = 2 ** (2 ** (k - 1))
    lg = math.log2(n)
    lower = 2.0**n / (2 * (n - lg))
    den = 2 * (n - lg - 1)
    upper = 2.0**n / den if den > 0 else math.inf
    out = Theorem1Depth(k, n, 1 + middle, lower, float(middle), upper)
    assert out.sandwich_holds, out
    return out


def qary_depth_sandwich(q: int, k: int) -> tuple[float, float, float]:
    """Width ``q^(k-1) + k``: the two bounds around ``(q^(q^(k-1)) - 1)/(q - 1)``."""
    n = q ** (k - 1) + k
    middle = (q ** (q ** (k - 1)) - 1) / (q - 1)
    lg = math.log(n, q)
    lower = (q**n - 1) / (q * (q - 1) * (n - lg))
    den = q * (q - 1) * (n - lg - 1)
    upper = (q**n - 1) / den if den > 0 else math.inf
    return lower, middle, upper


def param_count(layers: Sequence) -> int:
    """Number of weights and biases of a DBN with the given per-layer cardinalities."""
    dims = [sum(q - 1 for q in _cards(c)) for c in layers]
    if len(dims) < 2:
        raise DomainError("a DBN needs at least 2 layers")
    return sum(dims[l] * (1 + dims[l + 1]) for l in range(len(dims) - 1)) + dims[-1]


def param_count_uniform(q: int, n: int, L: int) -> int:
    d = n * (q - 1)
    return (L - 1) * (d + 1) * d + d


def depth_lower_bound(q: int, n: int) -> int:
    """Smallest ``L >= 2`` whose parameter count reaches ``q^n - 1``."""
    need = q**n - 1
    d = n * (q - 1)
    L = max(2, math.ceil((need - d) / (d * (d + 1))) + 1)
    while L > 2 and param_count_uniform(q, n, L - 1) >= need:
        L -= 1
    while param_count_uniform(q, n, L) < need:
        L += 1
    return L


def independence_max_kl(q: int, n: int) -> float:
    return (n - 1) * math.log(q)


def dirichlet_expectation_bound(a: float, c: int) -> float:
    """``psi(a+1) - psi(c a + 1) + ln c``: mean divergence of ``Dir(a)`` draws to a coarseness-``c`` partition model."""
    if not a > 0:
        raise DomainError(f"Dirichlet concentration must be positive, got {a}")
    if int(c) != c or c < 1:
        raise DomainError(f"coarseness must be a positive integer, got {c}")
    return max(0.0, float(digamma(a + 1) - digamma(c * a + 1) + math.log(c)))


# --- report ------------------------------------------------------------------------


@dataclass
class BoundEntry:
    name: str
    value: float | None
    inputs: dict
    feasible: bool = True
    unit: str = "nats"


@dataclass
class BoundsReport:
    cards: tuple[int, ...]
    L: int
    entries: list[BoundEntry] = field(default_factory=list)

    def get(self, name: str) -> BoundEntry:
        for e in self.entries:
            if e.name == name:
                return e
        raise KeyError(name)

    def to_dict(self) -> dict:
        return {"cards": list(self.cards), "L": self.L, "entries": [asdict(e) for e in self.entries]}

    def to_text(self, base: str = "e") -> str:
        q = max(self.cards) if self.cards else 2
        width = max(len(e.name) for e in self.entries)
        lines = [f"architecture: cards={list(self.cards)} L={self.L}  (divergences in base {base})"]
        for e in self.entries:
            if not e.feasible or e.value is None:
                shown = "n/a"
            elif e.unit == "nats":
                shown = f"{to_base(e.value, base, q):.6g}"
            else:
                shown = f"{e.value:.6g}" if isinstance(e.value, float) else str(e.value)
            lines.append(f"  {e.name:<{width}}  {shown:>14}  {e.unit if e.unit != 'nats' else ''}")
        return "\n".join(lines)


def bounds_report(cards, L: int, hidden=None, a: float | None = None) -> BoundsReport:
    """Evaluate every formula that applies to the architecture.

    ``hidden`` overrides the top hidden layer used for the RBM bound (defaults
    to the visible cardinalities, i.e. constant width).
    """
    cards = _cards(cards)
    hid = _cards(hidden) if hidden is not None else cards
    rep = BoundsReport(cards, L)
    n = len(cards)
    constant_q = len(set(cards)) == 1
    q = cards[0] if constant_q else None

    choice = sharing_choice(cards, L)
    rep.entries.append(
        BoundEntry(
            "dbn_bound",
            choice.bound if choice else rbm_bound(cards, cards),
            {"m": choice.m if choice else None, "S": choice.S if choice else None,
             "coarseness": choice.coarseness if choice else None},
            True,
        )
    )
    lam, left = best_lambda(cards, hidden_capacity(hid))
    rep.entries.append(BoundEntry("rbm_bound", math.log(left), {"hidden": list(hid), "Lambda": list(lam)}))

    rep.entries.append(BoundEntry("param_count", param_count([cards] * (L - 1) + [hid]), {}, True, "count"))
    if constant_q:
        rep.entries.append(BoundEntry("depth_lower_bound", depth_lower_bound(q, n), {"q": q, "n": n}, True, "layers"))
        rep.entries.append(BoundEntry("independence_max_kl", independence_max_kl(q, n), {"q": q, "n": n}))
    else:
        rep.entries.append(BoundEntry("depth_lower_bound", None, {}, False, "layers"))
        rep.entries.append(BoundEntry("independence_max_kl", None, {}, False))

    k1 = next((k for k in range(1, 8) if 2 ** (k - 1) + k == n), None)
    if q == 2 and k1 is not None:
        t1 = theorem1_depth(k1)
        rep.entries.append(BoundEntry("theorem1_depth", t1.L_min, {"k": k1, "n": n}, True, "layers"))
        rep.entries.append(BoundEntry("binary_sandwich_holds", float(t1.sandwich_holds), {"lower": t1.lower, "upper": t1.upper}, True, "flag"))
    else:
        rep.entries.append(BoundEntry("theorem1_depth", None, {}, False, "layers"))

    kq = next((k for k in range(1, 8) if q and q ** (k - 1) + k == n), None)
    if q and kq is not None:
        lo, mid, hi = qary_depth_sandwich(q, kq)
        rep.entries.append(BoundEntry("qary_sandwich_holds", float(lo <= mid <= hi), {"lower": lo, "middle": mid, "upper": hi}, True, "flag"))

    if a is not None:
        c = choice.coarseness if choice else left
        rep.entries.append(BoundEntry("dirichlet_expectation_bound", dirichlet_expectation_bound(a, c), {"a": a, "c": c}))
    return rep
