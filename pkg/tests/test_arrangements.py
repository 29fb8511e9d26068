import csv

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mba.arrangements import (Arrangement, ArrangementError, arrangement_stats, initial_arrangement,
                              sorted_arrangement, worsen_arrangement)
from mba.analysis import bound_intermediate
from mba.instance import Instance, gen_random_instance
from mba.lp import AssignmentSolution, solve_assignment_lp
from mba.rounding import build_bucket_graph, decompose_matchings, exact_expected_value


def graph_for(prices_x, B=2.0):
    items = tuple(f"j{k}" for k in range(len(prices_x)))
    inst = Instance(("i",), {"i": B}, items, {("i", j): p for j, (p, _) in zip(items, prices_x)})
    return build_bucket_graph(AssignmentSolution(inst, np.array([[x for _, x in prices_x]])))


def column_counts(arr, bucket=0):
    vals, counts = np.unique(arr.slots[:, bucket], return_counts=True)
    return {arr.items[v] if v >= 0 else None: int(c) for v, c in zip(vals, counts)}


def test_single_item_copies():
    arr = initial_arrangement(graph_for([(0.5, 1.0)]), "i", D=100)
    assert column_counts(arr) == {"j0": 100}


@pytest.mark.parametrize("use_dist", [False, True])
def test_two_halves(use_dist):
    g = graph_for([(0.5, 0.5), (0.4, 0.5)])
    dist = decompose_matchings(g) if use_dist else None
    arr = initial_arrangement(g, "i", D=100, dist=dist)
    assert column_counts(arr) == {"j0": 50, "j1": 50}


@pytest.mark.parametrize("use_dist", [False, True])
def test_thirds(use_dist):
    g = graph_for([(0.5, 2 / 3), (0.4, 1 / 3)])
    dist = decompose_matchings(g) if use_dist else None
    arr = initial_arrangement(g, "i", D=300, dist=dist)
    assert column_counts(arr) == {"j0": 200, "j1": 100}


def test_small_D_rejected():
    with pytest.raises(ValueError):
        initial_arrangement(graph_for([(0.5, 1.0)]), "i", D=99)


def test_unknown_player():
    with pytest.raises(ArrangementError):
        initial_arrangement(graph_for([(0.5, 1.0)]), "nobody")


@pytest.mark.parametrize("seed", range(8))
@pytest.mark.parametrize("use_dist", [False, True])
def test_marginals_within_one_over_D(seed, use_dist):
    inst = gen_random_instance(seed, 3, 9)
    g = build_bucket_graph(solve_assignment_lp(inst))
    dist = decompose_matchings(g) if use_dist else None
    for p in inst.players:
        if not g.player_edges(p):
            continue
        arr = initial_arrangement(g, p, D=1000, dist=dist)
        marg = arr.marginals()
        for e in g.player_edges(p):
            got = marg.get((e.item, e.bucket), 0.0)
            assert abs(got - e.f) <= 1 / arr.D + 1e-9
        filled = (arr.slots >= 0).sum(axis=1)
        k = g.n_buckets[p]
        assert set(filled) <= {k, k - 1}


def crossing():
    # (big, small) and (small', big') with crossing prices
    return Arrangement("i", 1.0, ("a", "b", "c", "d"), np.array([0.9, 0.2, 0.3, 0.8]),
                       np.array([[0, 1], [2, 3]]))


def test_one_swap_sorts_crossing_pair():
    arr = crossing()
    out = worsen_arrangement(arr)
    assert out.is_fixed_point()
    assert out.expected_value <= arr.expected_value + 1e-12
    assert sorted(map(tuple, out.slots)) == [(0, 3), (2, 1)]


def test_sorted_is_fixed_point_and_unchanged():
    arr = sorted_arrangement(crossing())
    assert arr.is_fixed_point()
    again = worsen_arrangement(arr)
    assert np.array_equal(again.slots, arr.slots) and again.swaps == 0


@given(seed=st.integers(0, 10 ** 6), D=st.integers(2, 40), k=st.integers(1, 4))
@settings(max_examples=60, deadline=None)
def test_worsening_properties(seed, D, k):
    rng = np.random.default_rng(seed)
    n_items = int(rng.integers(1, 6))
    prices = np.round(rng.uniform(0.05, 1.0, n_items), 3)
    slots = rng.integers(-1, n_items, size=(D, k))
    arr = Arrangement("i", float(rng.uniform(0.5, 2.0)), tuple(f"j{t}" for t in range(n_items)),
                      prices, slots)
    out = worsen_arrangement(arr)
    h = np.array(out.history)
    assert (np.diff(h) <= 1e-12).all()
    assert out.is_fixed_point()
    # every column keeps its multiset of prices, so the result matches the sorted arrangement
    assert np.allclose(np.sort(out.prices, axis=0), np.sort(arr.prices, axis=0))
    assert out.expected_value == pytest.approx(sorted_arrangement(arr).expected_value, abs=1e-12)


def test_stats_under_budget():
    arr = initial_arrangement(graph_for([(0.3, 1.0), (0.2, 1.0)], B=5.0), "i", D=100)
    s = arrangement_stats(arr, set())
    assert s.w == 0 and s.L is None and s.G == pytest.approx(s.expected_value)


@pytest.mark.parametrize("seed", range(6))
def test_stats_identities(seed):
    inst = gen_random_instance(seed, 2, 8)
    sol = solve_assignment_lp(inst)
    g = build_bucket_graph(sol)
    dist = decompose_matchings(g)
    ev = exact_expected_value(dist)
    for p in inst.players:
        if not g.player_edges(p):
            continue
        arr = worsen_arrangement(initial_arrangement(g, p, dist=dist))
        big = {j for j in arr.items if inst.prices[(p, j)] >= (1 - inst.beta) * inst.budgets[p]}
        s = arrangement_stats(arr, big)
        V = arr.V
        inW = arr.totals >= arr.budget * (1 - 1e-12)
        avgVW = V[inW].mean() if inW.any() else 0.0
        assert s.expected_value == pytest.approx(s.w * avgVW + (1 - s.w) * (s.G or 0.0))
        alpha = sol.player_values[inst.player_index[p]] / inst.budgets[p]
        if alpha <= 1:
            assert s.expected_value >= bound_intermediate(arr.budget, alpha, s.w) - arr.slack()
        assert ev.per_player[p] >= s.expected_value - arr.slack()


def test_arrangement_csv(tmp_path):
    arr = crossing()
    path = tmp_path / "a.csv"
    arr.to_csv(path)
    rows = list(csv.reader(open(path)))
    assert rows[0] == ["config", "bucket_0", "bucket_1", "total", "V", "W"]
    assert rows[1][:3] == ["0", "a", "b"]
