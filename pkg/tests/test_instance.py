import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mba.instance import (Instance, InstanceError, ItemClass, allocation_value, brute_force_opt,
                          cap_prices, classify_item, gen_gap_instance, gen_random_instance,
                          instance_from_dict, instance_to_dict, load_instance, make_allocation,
                          save_instance, validate_instance)


def two_player():
    return Instance(("a", "b"), {"a": 1.0, "b": 2.0}, ("x", "y"),
                    {("a", "x"): 0.5, ("b", "x"): 0.7, ("b", "y"): 1.5})


def test_valid_instance_has_no_violations():
    assert validate_instance(two_player()) == []


def test_zero_budget_is_reported():
    inst = Instance(("1", "2"), {"1": 0.0, "2": 1.0}, ("h",), {("1", "h"): 1.0})
    assert validate_instance(inst) == ["budget of player 1 must be positive"]


def test_undeclared_item_is_named():
    inst = Instance(("1",), {"1": 1.0}, ("h",), {("1", "h"): 1.0, ("1", "ghost"): 0.2})
    bad = validate_instance(inst)
    assert len(bad) == 1 and "ghost" in bad[0]


@pytest.mark.parametrize("beta,B,p,expected", [
    (1 / 3, 1.0, 0.7, ItemClass.BIG),
    (1 / 3, 1.0, 1.0, ItemClass.BIG),
    (0.1, 2.0, 1.0, ItemClass.SMALL),
    (1 / 3, 1.0, 0.6, ItemClass.SMALL),
])
def test_classify_item(beta, B, p, expected):
    inst = Instance(("i",), {"i": B}, ("j",), {("i", "j"): p}, beta)
    assert classify_item(inst, "i", "j") is expected


def test_classify_unassignable_pair():
    with pytest.raises(InstanceError):
        classify_item(two_player(), "a", "y")


def test_gap_instance_oracles():
    inst = gen_gap_instance()
    opt, assign = brute_force_opt(inst)
    assert opt == 1.5
    assert allocation_value(inst, assign) == 1.5


def test_random_instance_is_deterministic():
    a = gen_random_instance(7, 3, 5, "general")
    b = gen_random_instance(7, 3, 5, "general")
    assert a == b


def test_uniform_prices_model():
    inst = gen_random_instance(7, 3, 5, "uniform_prices")
    for j in inst.items:
        assert len({v for (p, jj), v in inst.prices.items() if jj == j}) == 1


def test_minimal_instance_validates():
    inst = gen_random_instance(1, 1, 1, "general")
    assert inst.shape == (1, 1) and validate_instance(inst) == []


def test_unknown_price_model():
    with pytest.raises(InstanceError):
        gen_random_instance(0, 2, 2, "zipf")


@given(seed=st.integers(0, 10_000), n=st.integers(1, 5), m=st.integers(1, 10),
       model=st.sampled_from(["general", "uniform_prices"]))
@settings(max_examples=60, deadline=None)
def test_random_instances_are_valid_and_capped(seed, n, m, model):
    inst = gen_random_instance(seed, n, m, model)
    assert validate_instance(inst) == []
    assert cap_prices(inst) is inst


def test_cap_prices_lowers_only_excess():
    inst = Instance(("i",), {"i": 1.0}, ("a", "b"), {("i", "a"): 3.0, ("i", "b"): 0.5})
    capped = cap_prices(inst)
    assert capped.prices == {("i", "a"): 1.0, ("i", "b"): 0.5}
    for assign in ({}, {"a": "i"}, {"b": "i"}, {"a": "i", "b": "i"}):
        assert allocation_value(inst, assign) == allocation_value(capped, assign)


def test_allocation_rejects_unpriced_pair():
    with pytest.raises(InstanceError):
        make_allocation(two_player(), {"y": "a"})


def test_allocation_value_caps_budget():
    assert allocation_value(two_player(), {"x": "b", "y": "b"}) == 2.0


@pytest.mark.parametrize("seed", range(5))
def test_json_round_trip(tmp_path, seed):
    inst = gen_random_instance(seed, 3, 4)
    path = tmp_path / "inst.json"
    save_instance(inst, path)
    assert load_instance(path) == inst


def test_json_unknown_key_is_rejected():
    data = instance_to_dict(two_player())
    data["extra"] = 1
    with pytest.raises(InstanceError):
        instance_from_dict(data)


def test_json_invalid_budget_is_rejected():
    data = json.loads(json.dumps(instance_to_dict(two_player())))
    data["players"][0]["budget"] = -1
    with pytest.raises(InstanceError):
        instance_from_dict(data)


def test_brute_force_matches_exhaustive_small():
    inst = gen_random_instance(3, 2, 4)
    opt, _ = brute_force_opt(inst)
    # independent enumeration over all 3^4 labelings
    best = 0.0
    for code in range(3 ** 4):
        assign, c = {}, code
        for j in inst.items:
            who, c = c % 3, c // 3
            if who and (inst.players[who - 1], j) in inst.prices:
                assign[j] = inst.players[who - 1]
        best = max(best, allocation_value(inst, assign))
    assert np.isclose(opt, best, atol=1e-12)
