"""ST rounding: bucket graph, matching decomposition, sampling and exact evaluation.

Each player's fractional items are poured, most expensive first, into unit
buckets.  The resulting bucket/item fractional matching is written as a convex
combination of integral matchings; drawing one matching gives an allocation in
which item ``j`` goes to player ``i`` with probability exactly ``x_ij``.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import maximum_bipartite_matching

from .instance import Allocation, Instance, make_allocation
from .lp import FAKE, AssignmentSolution

ZERO = 1e-12
MARGINAL_TOL = 1e-9


class DecompositionError(ValueError):
    pass


@dataclass(frozen=True)
class Edge:
    item: str
    player: str
    bucket: int  # 0-based; bucket 0 holds the most expensive items
    f: float


@dataclass(frozen=True)
class BucketGraph:
    sol: AssignmentSolution
    edges: tuple[Edge, ...]
    n_buckets: dict  # player -> k_i

    @property
    def inst(self) -> Instance:
        return self.sol.inst

    @property
    def buckets(self) -> list[tuple[str, int]]:
        return [(p, t) for p in self.inst.players for t in range(self.n_buckets[p])]

    def bucket_edges(self, player: str, bucket: int) -> list[Edge]:
        """Edges of one bucket in fill order."""
        return [e for e in self.edges if e.player == player and e.bucket == bucket]

    def player_edges(self, player: str) -> list[Edge]:
        return [e for e in self.edges if e.player == player]

    def violations(self, tol: float = MARGINAL_TOL) -> list[str]:
        out = []
        load: dict[tuple[str, int], float] = {}
        item_load: dict[str, float] = {}
        for e in self.edges:
            if e.f <= 0:
                out.append(f"edge ({e.item}, {e.player}#{e.bucket}) has nonpositive fraction")
            load[(e.player, e.bucket)] = load.get((e.player, e.bucket), 0.0) + e.f
            item_load[e.item] = item_load.get(e.item, 0.0) + e.f
        for (p, t), v in load.items():
            if v > 1 + tol:
                out.append(f"bucket {p}#{t} holds {v:.12g} > 1")
            elif t < self.n_buckets[p] - 1 and v < 1 - tol:
                out.append(f"bucket {p}#{t} is not full ({v:.12g})")
        for j, v in item_load.items():
            if v > 1 + tol:
                out.append(f"item {j} has total fraction {v:.12g} > 1")
        return out

    def to_dot(self) -> str:
        lines = ["graph buckets {", "  rankdir=LR;"]
        for j in sorted({e.item for e in self.edges}):
            lines.append(f'  "item:{j}" [shape=box];')
        for p, t in self.buckets:
            lines.append(f'  "bucket:{p}#{t}" [shape=ellipse];')
        for e in self.edges:
            lines.append(f'  "item:{e.item}" -- "bucket:{e.player}#{e.bucket}" '
                         f'[label="{e.f:.6g}"];')
        lines.append("}")
        return "\n".join(lines) + "\n"


def build_bucket_graph(sol: AssignmentSolution) -> BucketGraph:
    inst = sol.inst
    P = inst.price_matrix
    edges = []
    n_buckets = {}
    for i, p in enumerate(inst.players):
        support = [k for k in np.flatnonzero(sol.x[i] > ZERO)]
        support.sort(key=lambda k: (-P[i, k], inst.items[k]))
        t, fill = 0, 0.0
        for k in support:
            mass = float(sol.x[i, k])
            while mass > ZERO:
                put = min(mass, 1.0 - fill)
                edges.append(Edge(inst.items[k], p, t, put))
                mass -= put
                fill += put
                if fill >= 1.0 - ZERO:
                    t, fill = t + 1, 0.0
        n_buckets[p] = t + (1 if fill > ZERO else 0)
    return BucketGraph(sol, tuple(edges), n_buckets)


@dataclass(frozen=True)
class MatchingDistribution:
    """``matchings[m]`` maps ``(player, bucket)`` to an item; the empty matching
    carries whatever probability the nonempty ones leave over."""

    graph: BucketGraph
    matchings: tuple[dict, ...]
    probs: np.ndarray

    def assignments(self) -> list[dict[str, str]]:
        return [{j: p for (p, _), j in m.items()} for m in self.matchings]

    def edge_marginals(self) -> dict[tuple[str, str, int], float]:
        out = {(e.item, e.player, e.bucket): 0.0 for e in self.graph.edges}
        for m, lam in zip(self.matchings, self.probs):
            for (p, t), j in m.items():
                out[(j, p, t)] += float(lam)
        return out

    def pair_marginals(self) -> np.ndarray:
        inst = self.graph.inst
        x = np.zeros(inst.shape)
        for m, lam in zip(self.matchings, self.probs):
            for (p, _), j in m.items():
                x[inst.player_index[p], inst.item_index[j]] += lam
        return x

    @property
    def support_size(self) -> int:
        return sum(1 for m in self.matchings if m)


def decompose_matchings(g: BucketGraph) -> MatchingDistribution:
    """Birkhoff peeling on the padded doubly stochastic matrix, followed by a
    Caratheodory reduction to at most ``|E|`` nonempty matchings."""
    bad = g.violations()
    if bad:
        raise DecompositionError("point outside the matching polytope: " + "; ".join(bad))
    buckets = g.buckets
    items = sorted({e.item for e in g.edges}, key=g.inst.item_index.get)
    R, C = len(buckets), len(items)
    if not g.edges:
        return MatchingDistribution(g, ({},), np.array([1.0]))
    r_of = {b: k for k, b in enumerate(buckets)}
    c_of = {j: k for k, j in enumerate(items)}
    M = np.zeros((R, C))
    for e in g.edges:
        M[r_of[(e.player, e.bucket)], c_of[e.item]] += e.f
    n = R + C
    D = np.zeros((n, n))
    D[:R, :C] = M
    D[:R, C:] = np.diag(np.clip(1.0 - M.sum(axis=1), 0.0, None))
    D[R:, :C] = np.diag(np.clip(1.0 - M.sum(axis=0), 0.0, None))
    D[R:, C:] = M.T

    found: dict[frozenset, float] = {}
    remaining = 1.0
    for _ in range(n * n + 1):
        D[D < ZERO] = 0.0
        if remaining <= MARGINAL_TOL:
            break
        match = maximum_bipartite_matching(csr_matrix(D > 0), perm_type="column")
        if (match < 0).any():
            raise DecompositionError(f"no perfect matching with {remaining:.3g} mass left")
        rows = np.arange(n)
        lam = float(D[rows, match].min())
        D[rows, match] -= lam
        remaining -= lam
        key = frozenset((r, int(match[r])) for r in range(R) if match[r] < C)
        found[key] = found.get(key, 0.0) + lam
    else:
        raise DecompositionError("peeling did not terminate")

    found.pop(frozenset(), None)
    keys = list(found)
    lam = np.array([found[k] for k in keys])
    keys, lam = _reduce_support(keys, lam, R, C)
    matchings = [{buckets[r]: items[c] for r, c in sorted(k)} for k in keys]
    probs = list(lam)
    rest = 1.0 - float(lam.sum())
    if rest > ZERO:
        matchings.append({})
        probs.append(rest)
    dist = MatchingDistribution(g, tuple(matchings), np.array(probs))
    _check_marginals(dist)
    return dist


def _reduce_support(keys, lam, R, C):
    """Drop matchings while their incidence vectors are linearly dependent,
    keeping the edge marginals and not increasing the total probability."""
    edge_ids = sorted({rc for k in keys for rc in k})
    pos = {rc: k for k, rc in enumerate(edge_ids)}
    V = np.zeros((len(edge_ids), len(keys)))
    for m, k in enumerate(keys):
        for rc in k:
            V[pos[rc], m] = 1.0
    alive = list(range(len(keys)))
    while len(alive) > 1:
        sub = V[:, alive]
        _, s, vt = np.linalg.svd(sub)
        rank = int((s > 1e-9 * max(s[0], 1.0)).sum())
        if rank == len(alive):
            break
        c = vt[-1]
        if c.sum() < 0:
            c = -c
        if not (c > 1e-12).any():
            c = -c
        posc = c > 1e-12
        ratios = lam[alive][posc] / c[posc]
        t = ratios.min()
        lam[alive] = lam[alive] - t * c
        killed = np.array(alive)[posc][int(np.argmin(ratios))]
        lam[killed] = 0.0
        alive = [m for m in alive if lam[m] > ZERO]
    lam = np.clip(lam, 0.0, None)
    return [keys[m] for m in alive], lam[alive]


def _check_marginals(dist: MatchingDistribution) -> None:
    got = dist.edge_marginals()
    want: dict[tuple[str, str, int], float] = {}
    for e in dist.graph.edges:
        want[(e.item, e.player, e.bucket)] = want.get((e.item, e.player, e.bucket), 0.0) + e.f
    worst = max((abs(got[k] - want[k]) for k in want), default=0.0)
    if worst > MARGINAL_TOL or abs(dist.probs.sum() - 1.0) > MARGINAL_TOL:
        raise DecompositionError(f"decomposition drifted from the marginals by {worst:.3g}")


@dataclass(frozen=True)
class ExpectedValue:
    total: float
    per_player: dict[str, float]
    real_total: float
    real_per_player: dict[str, float]

    def __iter__(self):
        # allows ``total, per_player = exact_expected_value(...)``
        return iter((self.total, self.per_player))


def _matching_values(dist: MatchingDistribution, inst: Instance):
    """Per-matching arrays (n_matchings x n_players) of capped value and of the
    fake value inside that cap."""
    origin = dist.graph.sol.origin
    B = inst.budget_vector
    tot = np.zeros((len(dist.matchings), len(inst.players)))
    fake = np.zeros_like(tot)
    for m, match in enumerate(dist.matchings):
        for (p, _), j in match.items():
            i = inst.player_index[p]
            tot[m, i] += inst.prices[(p, j)]
            if origin.get(j) == FAKE:
                fake[m, i] += inst.prices[(p, j)]
    capped = np.minimum(tot, B)
    real = np.clip(capped - fake, 0.0, None)
    return capped, real


def exact_expected_value(dist: MatchingDistribution, inst: Instance | None = None) -> ExpectedValue:
    """Expected objective of the sampled allocation.

    The ``real`` variant charges fake items inside the budget cap and then
    removes their value: ``max(0, min(B, all) - fake)`` per player.
    """
    inst = inst or dist.graph.inst
    capped, real = _matching_values(dist, inst)
    e_tot = dist.probs @ capped
    e_real = dist.probs @ real
    return ExpectedValue(float(e_tot.sum()), dict(zip(inst.players, map(float, e_tot))),
                         float(e_real.sum()), dict(zip(inst.players, map(float, e_real))))


def _to_allocation(dist: MatchingDistribution, m: int) -> Allocation:
    origin = dist.graph.sol.origin
    real, fake = {}, {}
    for (p, _), j in dist.matchings[m].items():
        (fake if origin.get(j) == FAKE else real)[j] = p
    inst = dist.graph.inst
    return make_allocation(inst, real, fake)


def sample_allocation(dist: MatchingDistribution, rng_seed: int) -> Allocation:
    rng = np.random.default_rng(rng_seed)
    m = int(rng.choice(len(dist.matchings), p=dist.probs / dist.probs.sum()))
    return _to_allocation(dist, m)


def best_of_support(dist: MatchingDistribution) -> Allocation:
    """Highest-value allocation among the support; at least the expectation."""
    allocs = [_to_allocation(dist, m) for m in range(len(dist.matchings))]
    return max(allocs, key=lambda a: a.value)


def st_round(sol: AssignmentSolution) -> tuple[MatchingDistribution, ExpectedValue]:
    dist = decompose_matchings(build_bucket_graph(sol))
    return dist, exact_expected_value(dist)


def write_distribution_csv(dist: MatchingDistribution, path: str | Path) -> None:
    inst = dist.graph.inst
    capped, _ = _matching_values(dist, inst)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["matching", "lambda"] + [f"value_{p}" for p in inst.players])
        for m, lam in enumerate(dist.probs):
            w.writerow([m, repr(float(lam))] + [repr(float(v)) for v in capped[m]])


def bucket_count(mass: float) -> int:
    """``ceil`` with float hygiene: 2.0000000000001 counts as 2 buckets."""
    return max(0, math.ceil(mass - 1e-9))
