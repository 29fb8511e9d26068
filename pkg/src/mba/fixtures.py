"""Constructed (instance, fractional solution) pairs with prescribed structure.

LP optima of random instances rarely have saturated budgets or canonical
shape, so the transforms and the worst-case analysis are exercised on
solutions built directly.
"""
from __future__ import annotations

import numpy as np
from scipy.optimize import linprog

from .instance import Instance
from .lp import AssignmentSolution


class FixtureError(RuntimeError):
    pass


def gen_saturated(seed: int, n_players: int | None = None, n_items: int | None = None,
                  price_low: float = 0.3) -> AssignmentSolution:
    """Random fractional solution with every budget exactly saturated.

    Each item is spread over two or three players with Dirichlet weights and
    total mass in [0.9, 1]; prices are independent per pair; budgets are then
    set to ``B_i = sum_j x_ij p_ij``.  Pairs whose price would exceed the
    budget are dropped and the draw is repeated.
    """
    rng = np.random.default_rng(seed)
    for _ in range(100):
        n = n_players or int(rng.integers(3, 6))
        m = n_items or int(rng.integers(4, 9))
        X = np.zeros((n, m))
        for k in range(m):
            deg = int(rng.integers(2, min(3, n) + 1))
            who = rng.choice(n, size=deg, replace=False)
            X[who, k] = rng.dirichlet(np.ones(deg)) * rng.uniform(0.9, 1.0)
        P = np.where(X > 0, np.round(rng.uniform(price_low, 1.0, size=(n, m)), 6), 0.0)
        B = (X * P).sum(axis=1)
        if (B <= 0).any() or (P > B[:, None]).any():
            continue
        players = tuple(f"p{i}" for i in range(n))
        items = tuple(f"j{k}" for k in range(m))
        prices = {(players[i], items[k]): float(P[i, k]) for i, k in zip(*np.nonzero(X))}
        inst = Instance(players, {p: float(b) for p, b in zip(players, B)}, items, prices)
        return AssignmentSolution(inst, X)
    raise FixtureError(f"could not draw a saturated instance for seed {seed}")


def gen_canonical(seed: int, levels: tuple[float, ...] = (1.0, 2.0, 4.0),
                  mixed_share: float = 0.25, n_tries: int = 50,
                  split: bool = True, min_item_mass: float = 0.9) -> AssignmentSolution:
    """Random canonical solution with unique item prices.

    Players sit on budget levels; an item priced at a level ``B`` is big for
    players with budget ``B`` and small for players with budget ``>= 2B``, so
    every small price is at most half the budget.  The solution is an
    average of random vertices of the polytope

        sum_big x_ij = 1/2,  sum_small x_ij p_j = B_i/2   (every player)
        min_item_mass <= x_j <= 1                           (every item)
        0 <= x_ij <= 1/2

    with some items forced to be split between big and small use (at least
    ``mixed_share`` of their mass on each side).  With ``split=False`` every
    mid-level item is instead offered on one side only, so no item is used
    both as big and as small.
    """
    rng = np.random.default_rng(seed)
    for _ in range(n_tries):
        # the top level has nobody to pass its items to as small ones, so its
        # big items must be used up exactly: each pair of players shares one item
        counts = [int(rng.integers(2, 4)) for _ in levels[:-1]] + [2 * int(rng.integers(1, 3))]
        budgets = [b for b, c in zip(levels, counts) for _ in range(c)]
        n = len(budgets)
        item_prices: list[float] = []
        for b, c in zip(levels[:-1], counts[:-1]):
            item_prices += [b] * (c // 2 + 1 + int(rng.integers(0, 2)))
        item_prices += [levels[-1]] * (counts[-1] // 2)
        cheap = [levels[0] / 2, levels[0] / 4]
        demand = sum(budgets) - 0.95 * sum(item_prices)
        n_cheap = max(0, int(round(demand / (0.95 * np.mean(cheap)))))
        item_prices += [cheap[int(rng.integers(2))] for _ in range(n_cheap)]
        m = len(item_prices)
        side_of = [int(rng.integers(2)) if split is False and p in levels[:-1] else -1
                   for p in item_prices]
        pairs, kind = [], []
        for i, b in enumerate(budgets):
            for k, p in enumerate(item_prices):
                if side_of[k] >= 0 and side_of[k] != (p == b):
                    continue
                if p == b:
                    pairs.append((i, k)); kind.append(1)
                elif p <= b / 2:
                    pairs.append((i, k)); kind.append(0)
        kind = np.array(kind)
        E = len(pairs)
        A_eq = np.zeros((2 * n, E)); b_eq = np.zeros(2 * n)
        A_ub = np.zeros((2 * m, E)); b_ub = np.zeros(2 * m)
        for e, (i, k) in enumerate(pairs):
            if kind[e]:
                A_eq[i, e] = 1.0
            else:
                A_eq[n + i, e] = item_prices[k]
            A_ub[k, e] = 1.0
            A_ub[m + k, e] = -1.0
        b_eq[:n] = 0.5
        b_eq[n:] = np.array(budgets) / 2
        b_ub[:m] = 1.0
        b_ub[m:] = -min_item_mass
        mixed = [k for k, p in enumerate(item_prices) if p in levels[:-1]]
        extra_A, extra_b = [], []
        for k in mixed:
            if not split or rng.random() < 0.5:
                continue
            for side in (0, 1):
                row = np.zeros(E)
                for e, (_, kk) in enumerate(pairs):
                    if kk == k:
                        row[e] = mixed_share - (kind[e] == side)
                extra_A.append(row); extra_b.append(0.0)
        if extra_A:
            A_ub = np.vstack([A_ub, extra_A]); b_ub = np.concatenate([b_ub, extra_b])
        pts = []
        for _ in range(4):
            res = linprog(rng.normal(size=E), A_ub=A_ub, b_ub=b_ub, A_eq=A_eq, b_eq=b_eq,
                          bounds=(0.0, 0.5), method="highs")
            if res.status != 0:
                break
            pts.append(res.x)
        if len(pts) < 4:
            continue
        x = np.mean(pts, axis=0)
        x[x < 1e-12] = 0.0
        players = tuple(f"p{i}" for i in range(n))
        items = tuple(f"j{k}" for k in range(m))
        X = np.zeros((n, m))
        prices = {}
        for e, (i, k) in enumerate(pairs):
            X[i, k] = x[e]
            prices[(players[i], items[k])] = float(item_prices[k])
        inst = Instance(players, dict(zip(players, map(float, budgets))), items, prices)
        return AssignmentSolution(inst, X)
    raise FixtureError(f"could not build a canonical solution for seed {seed}")


def gen_valuable_small(seed: int, n_pairs: int | None = None) -> AssignmentSolution:
    """Saturated, well-structured solution whose small value comes from items
    priced above ``0.55 B``.

    Players come in pairs sharing one big item priced at the common budget
    (half each); each player also holds one private small item priced in
    ``[0.55 B, 0.65 B]`` with ``x = (B/2) / p``.
    """
    rng = np.random.default_rng(seed)
    n_pairs = n_pairs or int(rng.integers(1, 4))
    players, budgets, items, prices, cells = [], {}, [], {}, []
    for q in range(n_pairs):
        B = float(rng.choice([1.0, 2.0, 3.0]))
        big = f"j{len(items)}"
        items.append(big)
        for side in range(2):
            p = f"p{len(players)}"
            players.append(p)
            budgets[p] = B
            prices[(p, big)] = B
            cells.append((p, big, 0.5))
            j = f"j{len(items)}"
            items.append(j)
            price = round(B * float(rng.uniform(0.55, 0.65)), 6)
            prices[(p, j)] = price
            cells.append((p, j, B / 2 / price))
    inst = Instance(tuple(players), budgets, tuple(items), prices)
    return AssignmentSolution.from_pairs(inst, {(p, j): v for p, j, v in cells})


def gen_no_big(seed: int, n_players: int | None = None) -> AssignmentSolution:
    """Saturated solution using small items only (every ``b_i = 0``)."""
    rng = np.random.default_rng(seed)
    n = n_players or int(rng.integers(2, 5))
    players = tuple(f"p{i}" for i in range(n))
    items, prices, cells, budgets = [], {}, {}, {}
    for p in players:
        k = int(rng.integers(3, 6))
        ps = rng.uniform(0.1, 0.3, size=k).round(6)
        for v in ps:
            j = f"j{len(items)}"
            items.append(j)
            prices[(p, j)] = float(v)
            cells[(p, j)] = 1.0
        budgets[p] = float(ps.sum())
    inst = Instance(players, budgets, tuple(items), prices)
    return AssignmentSolution.from_pairs(inst, cells)
