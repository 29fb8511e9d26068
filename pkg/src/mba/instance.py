"""Maximum Budgeted Allocation instances.

An instance is a set of players with budgets, a set of items, and a sparse
price map.  Player ``i`` collecting the item set ``T_i`` is worth
``min(B_i, sum_{j in T_i} p_ij)``.
"""
from __future__ import annotations

import enum
import itertools
import json
from dataclasses import dataclass, field, replace
from functools import cached_property
from pathlib import Path
from typing import Mapping

import numpy as np

DEFAULT_BETA = 1.0 / 3.0

PRICE_MODELS = ("uniform_prices", "general")


class InstanceError(ValueError):
    """Raised when an instance cannot be built, parsed or used."""

    def __init__(self, message: str, violations: list[str] | None = None):
        super().__init__(message)
        self.violations = violations or []


class ItemClass(enum.Enum):
    BIG = "big"
    SMALL = "small"


@dataclass(frozen=True)
class Instance:
    players: tuple[str, ...]
    budgets: Mapping[str, float]
    items: tuple[str, ...]
    prices: Mapping[tuple[str, str], float]
    beta: float = DEFAULT_BETA

    def __post_init__(self):
        object.__setattr__(self, "players", tuple(self.players))
        object.__setattr__(self, "items", tuple(self.items))
        object.__setattr__(self, "budgets", dict(self.budgets))
        object.__setattr__(self, "prices", dict(self.prices))

    # Dense views, built lazily.  Absent prices are 0 in ``price_matrix`` and
    # False in ``mask``.
    @cached_property
    def player_index(self) -> dict[str, int]:
        return {p: k for k, p in enumerate(self.players)}

    @cached_property
    def item_index(self) -> dict[str, int]:
        return {j: k for k, j in enumerate(self.items)}

    @cached_property
    def budget_vector(self) -> np.ndarray:
        return np.array([float(self.budgets[p]) for p in self.players])

    @cached_property
    def mask(self) -> np.ndarray:
        m = np.zeros((len(self.players), len(self.items)), dtype=bool)
        for (p, j) in self.prices:
            m[self.player_index[p], self.item_index[j]] = True
        return m

    @cached_property
    def price_matrix(self) -> np.ndarray:
        P = np.zeros((len(self.players), len(self.items)))
        for (p, j), v in self.prices.items():
            P[self.player_index[p], self.item_index[j]] = float(v)
        return P

    @cached_property
    def big_mask(self) -> np.ndarray:
        """Present pairs with ``p_ij >= (1 - beta) B_i``; exact comparison."""
        thresh = (1.0 - self.beta) * self.budget_vector
        return self.mask & (self.price_matrix >= thresh[:, None])

    @property
    def small_mask(self) -> np.ndarray:
        return self.mask & ~self.big_mask

    @property
    def shape(self) -> tuple[int, int]:
        return len(self.players), len(self.items)

    def price(self, player: str, item: str) -> float | None:
        return self.prices.get((player, item))

    def with_changes(self, **kwargs) -> "Instance":
        return replace(self, **kwargs)

    def __hash__(self):
        return id(self)


@dataclass(frozen=True)
class Allocation:
    """An integral assignment.  ``fake_items`` records stripped fake items."""

    assignment: dict[str, str]
    value: float
    fake_items: dict[str, str] = field(default_factory=dict)

    def items_of(self, player: str) -> list[str]:
        return [j for j, p in self.assignment.items() if p == player]


def validate_instance(inst: Instance) -> list[str]:
    """Return a list of human-readable invariant violations (empty if valid)."""
    out = []
    if not inst.players:
        out.append("instance must declare at least one player")
    if not inst.items:
        out.append("instance must declare at least one item")
    if len(set(inst.players)) != len(inst.players):
        out.append("player ids must be unique")
    if len(set(inst.items)) != len(inst.items):
        out.append("item ids must be unique")
    players, items = set(inst.players), set(inst.items)
    for p in inst.players:
        if p not in inst.budgets:
            out.append(f"budget of player {p} is missing")
            continue
        b = inst.budgets[p]
        if not (np.isfinite(b) and b > 0):
            out.append(f"budget of player {p} must be positive")
    for p in inst.budgets:
        if p not in players:
            out.append(f"budget references undeclared player id {p}")
    for (p, j), v in inst.prices.items():
        if p not in players:
            out.append(f"price references undeclared player id {p}")
        if j not in items:
            out.append(f"price references undeclared item id {j}")
        if not (np.isfinite(v) and v >= 0):
            out.append(f"price of item {j} for player {p} must be nonnegative")
    if not (0 < inst.beta <= 1.0 / 3.0):
        out.append("beta must lie in (0, 1/3]")
    return out


def classify_item(inst: Instance, player: str, item: str) -> ItemClass:
    p = inst.prices.get((player, item))
    if p is None:
        raise InstanceError("item not assignable to player")
    if p >= (1.0 - inst.beta) * inst.budgets[player]:
        return ItemClass.BIG
    return ItemClass.SMALL


def allocation_value(inst: Instance, assignment: Mapping[str, str]) -> float:
    """Objective of an integral assignment ``item -> player``."""
    totals = dict.fromkeys(inst.players, 0.0)
    for j, p in assignment.items():
        price = inst.prices.get((p, j))
        if price is None:
            raise InstanceError(f"item {j} is not assignable to player {p}")
        totals[p] += price
    return float(sum(min(inst.budgets[p], t) for p, t in totals.items()))


def make_allocation(inst: Instance, assignment: Mapping[str, str],
                    fake_items: Mapping[str, str] | None = None) -> Allocation:
    assignment = dict(assignment)
    return Allocation(assignment, allocation_value(inst, assignment),
                      dict(fake_items or {}))


def cap_prices(inst: Instance) -> Instance:
    """Lower every ``p_ij > B_i`` to ``B_i``.  No allocation changes value."""
    if all(v <= inst.budgets[p] for (p, _), v in inst.prices.items()):
        return inst
    prices = {(p, j): min(v, inst.budgets[p]) for (p, j), v in inst.prices.items()}
    return inst.with_changes(prices=prices)


def brute_force_opt(inst: Instance, limit: int = 2_000_000) -> tuple[float, dict[str, str]]:
    """Best integral allocation by exhaustive enumeration (small instances only)."""
    choices = []
    for j in inst.items:
        opts = [None] + [p for p in inst.players if (p, j) in inst.prices]
        choices.append(opts)
    n_total = int(np.prod([len(c) for c in choices], dtype=float))
    if n_total > limit:
        raise InstanceError(f"brute force over {n_total} assignments exceeds limit {limit}")
    best, best_assign = -1.0, {}
    for combo in itertools.product(*choices):
        totals = dict.fromkeys(inst.players, 0.0)
        for j, p in zip(inst.items, combo):
            if p is not None:
                totals[p] += inst.prices[(p, j)]
        val = sum(min(inst.budgets[p], t) for p, t in totals.items())
        if val > best + 1e-15:
            best = val
            best_assign = {j: p for j, p in zip(inst.items, combo) if p is not None}
    return float(best), best_assign


def gen_gap_instance() -> Instance:
    """Two unit-budget players sharing one unit item, each with a private half item."""
    return Instance(
        players=("1", "2"),
        budgets={"1": 1.0, "2": 1.0},
        items=("h", "s1", "s2"),
        prices={("1", "h"): 1.0, ("2", "h"): 1.0, ("1", "s1"): 0.5, ("2", "s2"): 0.5},
        beta=DEFAULT_BETA,
    )


def gen_random_instance(seed: int, n_players: int, n_items: int,
                        price_model: str = "general", beta: float = DEFAULT_BETA) -> Instance:
    """Seeded random instance.

    ``general`` draws an independent price for every offered pair;
    ``uniform_prices`` draws one price per item shared by every player it is
    offered to.
    """
    if price_model not in PRICE_MODELS:
        raise InstanceError(f"unknown price model {price_model!r}; expected one of {PRICE_MODELS}")
    if n_players < 1 or n_items < 1:
        raise InstanceError("need at least one player and one item")
    rng = np.random.default_rng(seed)
    players = tuple(f"p{k}" for k in range(n_players))
    items = tuple(f"j{k}" for k in range(n_items))
    # budgets >= 1 >= every price, so no price exceeds its player's budget
    budgets = {p: float(np.round(rng.uniform(1.0, 2.0), 6)) for p in players}
    prices = {}
    for j in items:
        offered = rng.random(n_players) < 0.7
        if not offered.any():
            offered[rng.integers(n_players)] = True
        shared = float(np.round(rng.uniform(0.05, 1.0), 6))
        for k in np.flatnonzero(offered):
            p = players[k]
            if price_model == "general":
                prices[(p, j)] = float(np.round(rng.uniform(0.05, 1.0), 6))
            else:
                prices[(p, j)] = shared
    return Instance(players, budgets, items, prices, beta)


# -- JSON -----------------------------------------------------------------

_TOP_KEYS = {"beta", "players", "items", "prices"}


def instance_to_dict(inst: Instance) -> dict:
    return {
        "beta": inst.beta,
        "players": [{"id": p, "budget": inst.budgets[p]} for p in inst.players],
        "items": list(inst.items),
        "prices": [{"player": p, "item": j, "p": v} for (p, j), v in inst.prices.items()],
    }


def _check_keys(obj, allowed: set[str], where: str):
    if not isinstance(obj, dict):
        raise InstanceError(f"{where} must be an object")
    extra = set(obj) - allowed
    if extra:
        raise InstanceError(f"unknown keys in {where}: {sorted(extra)}")
    missing = allowed - set(obj)
    if missing:
        raise InstanceError(f"missing keys in {where}: {sorted(missing)}")


def instance_from_dict(data: dict, validate: bool = True) -> Instance:
    _check_keys(data, _TOP_KEYS, "instance")
    players, budgets = [], {}
    for rec in data["players"]:
        _check_keys(rec, {"id", "budget"}, "player record")
        players.append(str(rec["id"]))
        budgets[str(rec["id"])] = float(rec["budget"])
    prices = {}
    for rec in data["prices"]:
        _check_keys(rec, {"player", "item", "p"}, "price record")
        prices[(str(rec["player"]), str(rec["item"]))] = float(rec["p"])
    inst = Instance(tuple(players), budgets, tuple(str(j) for j in data["items"]),
                    prices, float(data["beta"]))
    if validate:
        bad = validate_instance(inst)
        if bad:
            raise InstanceError("invalid instance: " + "; ".join(bad), bad)
    return inst


def load_instance(path: str | Path) -> Instance:
    with open(path) as fh:
        return instance_from_dict(json.load(fh))


def save_instance(inst: Instance, path: str | Path) -> None:
    with open(path, "w") as fh:
        json.dump(instance_to_dict(inst), fh, indent=2)
        fh.write("\n")
