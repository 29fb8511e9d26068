"""Equal-weight configuration arrangements for one player and the switching
procedure that drives them to the worst case.

A configuration takes at most one item from each of the player's buckets.
With ``D`` equal-weight configurations, every (item, bucket) edge must be
used by about ``f_e * D`` of them.  Switching bucket-``l`` items so that the
pricier one lands in the configuration with the larger total never raises the
expected capped value ``E[V]``; the fixed point is the worst case.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .rounding import BucketGraph, MatchingDistribution

DEFAULT_D = 1000
TIE = 1e-12


class ArrangementError(RuntimeError):
    pass


@dataclass(frozen=True)
class Arrangement:
    """``slots[c, l]`` is the item index (into ``items``) that configuration
    ``c`` takes from bucket ``l``, or -1 for an empty slot."""

    player: str
    budget: float
    items: tuple[str, ...]
    item_prices: np.ndarray
    slots: np.ndarray
    history: tuple[float, ...] = field(default=(), compare=False)
    swaps: int = field(default=0, compare=False)

    @property
    def D(self) -> int:
        return self.slots.shape[0]

    @property
    def k(self) -> int:
        return self.slots.shape[1]

    @property
    def prices(self) -> np.ndarray:
        """Per-slot prices; empty slots count as zero-price items."""
        return np.where(self.slots >= 0, self.item_prices[np.maximum(self.slots, 0)], 0.0)

    @property
    def totals(self) -> np.ndarray:
        return self.prices.sum(axis=1)

    @property
    def V(self) -> np.ndarray:
        return np.minimum(self.totals, self.budget)

    @property
    def W(self) -> np.ndarray:
        return self.totals - self.V

    @property
    def expected_value(self) -> float:
        return float(self.V.mean())

    def configs(self) -> list[tuple[str | None, ...]]:
        return [tuple(self.items[s] if s >= 0 else None for s in row) for row in self.slots]

    def marginals(self) -> dict[tuple[str, int], float]:
        out: dict[tuple[str, int], float] = {}
        for l in range(self.k):
            vals, counts = np.unique(self.slots[:, l], return_counts=True)
            for s, c in zip(vals, counts):
                if s >= 0:
                    out[(self.items[s], l)] = c / self.D
        return out

    def slack(self) -> float:
        """Discretization allowance for comparisons against exact ST values."""
        pmax = float(self.item_prices.max(initial=0.0))
        return (self.k * pmax + self.budget) / self.D

    def is_fixed_point(self) -> bool:
        return _find_swaps(self.prices, self.totals).size == 0

    def to_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["config"] + [f"bucket_{l}" for l in range(self.k)] + ["total", "V", "W"])
            tot, V, W = self.totals, self.V, self.W
            for c, cfg in enumerate(self.configs()):
                w.writerow([c] + [j or "" for j in cfg] + [repr(float(tot[c])), repr(float(V[c])),
                                                            repr(float(W[c]))])


def _player_columns(g: BucketGraph, player: str):
    if player not in g.n_buckets:
        raise ArrangementError(f"player {player} not in bucket graph")
    inst = g.inst
    edges = g.player_edges(player)
    items = tuple(sorted({e.item for e in edges}, key=inst.item_index.get))
    pos = {j: n for n, j in enumerate(items)}
    prices = np.array([inst.prices[(player, j)] for j in items])
    return edges, items, pos, prices


def initial_arrangement(g: BucketGraph, player: str, D: int = DEFAULT_D,
                        dist: MatchingDistribution | None = None) -> Arrangement:
    """``D`` equal-weight configurations matching the player's edge fractions.

    Without ``dist``, configuration ``t`` takes from every bucket the item
    covering the point ``(t + 1/2)/D`` of that bucket's fill; every edge is
    then used ``f_e D`` times up to rounding, an error below ``1/D``.  With
    ``dist`` the player's restriction of each matching is repeated in
    proportion to its probability (largest-remainder rounding), which keeps
    the joint structure of that decomposition.
    """
    if D < 100:
        raise ValueError("D must be at least 100")
    edges, items, pos, prices = _player_columns(g, player)
    k = g.n_buckets[player]
    slots = np.full((D, k), -1, dtype=int)
    if dist is None:
        pts = (np.arange(D) + 0.5) / D
        for l in range(k):
            start = 0.0
            for e in (e for e in edges if e.bucket == l):
                hit = (pts >= start) & (pts < start + e.f)
                slots[hit, l] = pos[e.item]
                start += e.f
    else:
        rows = [{t: pos[j] for (p, t), j in m.items() if p == player} for m in dist.matchings]
        exact = dist.probs * D
        counts = np.floor(exact).astype(int)
        short = D - counts.sum()
        frac = exact - counts
        for m in sorted(range(len(rows)), key=lambda m: (-frac[m], m))[:short]:
            counts[m] += 1
        c = 0
        for m, n in enumerate(counts):
            for t, s in rows[m].items():
                slots[c:c + n, t] = s
            c += n
    arr = Arrangement(player, float(g.inst.budgets[player]), items, prices, slots)
    return Arrangement(arr.player, arr.budget, items, prices, slots, (arr.expected_value,), 0)


def _find_swaps(prices: np.ndarray, totals: np.ndarray, parity: int | None = None) -> np.ndarray:
    """Adjacent pairs (in (total, index) order) that admit a valid switch.

    Returns an (n, 2) array of (low, high) configuration indices where
    ``total[low] <= total[high]`` and some bucket of ``low`` is pricier.
    """
    D = len(totals)
    if D < 2:
        return np.empty((0, 2), dtype=int)
    order = np.lexsort((np.arange(D), totals))
    a, b = order[:-1], order[1:]
    tie = np.abs(totals[b] - totals[a]) <= TIE * max(1.0, float(np.abs(totals).max()))
    fwd = (prices[a] > prices[b]).any(axis=1)
    back = tie & (prices[b] > prices[a]).any(axis=1)
    ok = fwd | back
    r = np.flatnonzero(ok)
    if parity is not None:
        r = r[r % 2 == parity]
    low = np.where(fwd[r], a[r], b[r])
    high = np.where(fwd[r], b[r], a[r])
    return np.stack([low, high], axis=1)


def worsen_arrangement(arr: Arrangement) -> Arrangement:
    """Apply valid switches until none remains.

    Switches run in rounds over disjoint adjacent pairs of the (total, index)
    order, alternating even and odd positions.  Each switch moves weight
    ``d > 0`` from a configuration to one with at least the same total, so
    ``sum(total**2)`` strictly grows and the loop terminates.  ``history``
    records ``E[V]`` after every round.
    """
    slots = arr.slots.copy()
    item_prices = arr.item_prices
    prices = np.where(slots >= 0, item_prices[np.maximum(slots, 0)], 0.0)
    totals = prices.sum(axis=1)
    history = list(arr.history) or [float(np.minimum(totals, arr.budget).mean())]
    guard = arr.D ** 2 * max(arr.k, 1) ** 2
    swaps = 0
    parity = 0
    while True:
        pairs = _find_swaps(prices, totals, parity)
        parity ^= 1
        if pairs.size == 0:
            if _find_swaps(prices, totals).size == 0:
                break
            continue
        lo, hi = pairs[:, 0], pairs[:, 1]
        move = prices[lo] > prices[hi]
        tie = np.abs(totals[hi] - totals[lo]) <= TIE * max(1.0, float(np.abs(totals).max()))
        none_fwd = ~move.any(axis=1) & tie
        # tied pairs whose only descents point the other way: swap roles
        lo2 = np.where(none_fwd, hi, lo)
        hi2 = np.where(none_fwd, lo, hi)
        move = prices[lo2] > prices[hi2]
        r, l = np.nonzero(move)
        a, b = lo2[r], hi2[r]
        slots[a, l], slots[b, l] = slots[b, l], slots[a, l].copy()
        prices[a, l], prices[b, l] = prices[b, l], prices[a, l].copy()
        totals[lo2] = prices[lo2].sum(axis=1)
        totals[hi2] = prices[hi2].sum(axis=1)
        swaps += len(r)
        history.append(float(np.minimum(totals, arr.budget).mean()))
        if swaps > guard:
            raise ArrangementError(f"switching exceeded {guard} swaps without a fixed point")
    return Arrangement(arr.player, arr.budget, arr.items, item_prices, slots,
                       tuple(history), arr.swaps + swaps)


def sorted_arrangement(arr: Arrangement) -> Arrangement:
    """Co-monotone rearrangement: every bucket column sorted by price, so
    the c-th configuration takes the c-th cheapest item of every bucket.
    Switches keep each column's multiset, so this is the unique fixed point
    up to equal prices."""
    prices = arr.prices
    order = np.argsort(prices, axis=0, kind="stable")
    slots = np.take_along_axis(arr.slots, order, axis=0)
    return Arrangement(arr.player, arr.budget, arr.items, arr.item_prices, slots,
                       (arr.expected_value,), 0)


@dataclass(frozen=True)
class ArrangementStats:
    w: float
    v: float
    b_mass: float
    bw_mass: float
    L: float | None
    L_B: float | None
    L_S: float | None
    G: float | None
    expected_value: float


def arrangement_stats(arr: Arrangement, big_items: set[str] | frozenset[str]) -> ArrangementStats:
    """Masses and conditional averages over the over-budget set ``C_W``.

    ``L_B`` averages over big configurations inside ``C_W`` (``bw_mass``).
    """
    tot = arr.totals
    V, W = np.minimum(tot, arr.budget), np.maximum(tot - arr.budget, 0.0)
    is_big_item = np.array([j in big_items for j in arr.items] + [False])
    has_big = is_big_item[arr.slots].any(axis=1)
    inW = tot >= arr.budget * (1 - 1e-12)
    D = arr.D

    def avg(vals, sel):
        n = int(sel.sum())
        return float(vals[sel].sum() / n) if n else None

    return ArrangementStats(
        w=float(inW.sum() / D),
        v=float((inW & ~has_big).sum() / D),
        b_mass=float(has_big.sum() / D),
        bw_mass=float((inW & has_big).sum() / D),
        L=avg(W, inW),
        L_B=avg(W, inW & has_big),
        L_S=avg(W, inW & ~has_big),
        G=avg(V, ~inW),
        expected_value=float(V.mean()),
    )
