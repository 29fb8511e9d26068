"""Seven-step case analysis around ST rounding.

Each step measures how much LP value sits on a structure that ST rounding
handles well.  If that share is large the step rounds right away (possibly
after a transform); otherwise it trims the structure away, patching budgets
with fake items where needed, and hands the cleaner solution to the next
step.  Step 7 rounds whatever is left with the final rounder.
"""
from __future__ import annotations

import csv
import dataclasses
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from . import __version__
from .analysis import (bound_alpha, bound_not_fully_assigned, is_canonical, st_prime_alpha,
                       stat_arrays)
from .instance import Allocation, Instance, allocation_value, cap_prices, make_allocation
from .lp import (FAKE, REAL, AssignmentSolution, normalize_saturation, project_to_assignment,
                 solve_assignment_lp, solve_configuration_lp)
from .rounding import best_of_support, build_bucket_graph, decompose_matchings, \
    exact_expected_value, sample_allocation
from .transforms import (apply_nubp, big_small_masses, check_restrictions, find_big_small,
                         find_unequally_priced, item_average_prices, nup_main, nup_preprocess,
                         sample_partition)

log = logging.getLogger(__name__)

SCHEMA_VERSION = 1
ROUND, TRIM = "round", "trim"
VALUE_TOL = 1e-9
EMPTY_VALUE = 1e-12  # players below this value (relative to the top budget) are dropped


class PipelineError(RuntimeError):
    pass


@dataclass(frozen=True)
class ConstantsConfig:
    eps: float = 0.1
    eps1: float = 0.02
    eps2: float = 0.03
    eps3: float = 0.04
    eps4: float = 0.05
    eps5: float = 0.06
    eps6: float = 0.08
    mu: float = 0.05
    nu: float = 0.05
    delta: float = 0.1
    lam: float = 0.05
    beta: float = 1.0 / 3.0
    start: str = "config"        # config | assignment
    selection: str = "best"      # best | sample
    complete: bool = True        # greedily hand out items the rounding left unassigned
    enforce_order: bool = True

    def __post_init__(self):
        bad = self.violations()
        if bad:
            raise ValueError("invalid constants: " + "; ".join(bad))

    def violations(self) -> list[str]:
        out = []
        for f in ("eps", "eps1", "eps2", "eps3", "eps4", "eps5", "eps6", "mu", "nu", "delta",
                  "lam", "beta"):
            v = getattr(self, f)
            if not 0 < v < 1:
                out.append(f"{f} must lie in (0, 1)")
        if self.beta < self.delta / 4:
            out.append("beta must be at least delta/4")
        if self.mu >= 0.5 or self.nu > 0.5:
            out.append("mu must be below 1/2 and nu at most 1/2")
        chain = [self.eps1, self.eps2, self.eps3, self.eps4, self.eps5, self.eps6]
        if self.enforce_order and any(a >= b for a, b in zip(chain, chain[1:])):
            out.append("eps1 < eps2 < ... < eps6 is required (set enforce_order=false to skip)")
        if self.start not in ("config", "assignment"):
            out.append("start must be 'config' or 'assignment'")
        if self.selection not in ("best", "sample"):
            out.append("selection must be 'best' or 'sample'")
        return out

    @classmethod
    def from_mapping(cls, data: dict) -> "ConstantsConfig":
        names = {f.name: f for f in dataclasses.fields(cls)}
        unknown = set(data) - set(names)
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        kw = {}
        for k, v in data.items():
            typ = type(names[k].default)
            if typ is bool and isinstance(v, str):
                v = v.lower() in ("1", "true", "yes", "on")
            kw[k] = typ(v)
        return cls(**kw)

    def with_overrides(self, **kw) -> "ConstantsConfig":
        return ConstantsConfig.from_mapping({**dataclasses.asdict(self), **kw})


# -- report ---------------------------------------------------------------

@dataclass
class FakeItem:
    item: str
    player: str
    price: float
    x: float
    kind: str  # big | small
    step: int


@dataclass
class StepRecord:
    step: int
    name: str
    branch: str
    statistic: float
    threshold: float
    value_before: float
    value_after: float
    fakes: list[FakeItem] = field(default_factory=list)
    removed_players: list[str] = field(default_factory=list)
    removed_items: list[str] = field(default_factory=list)
    notes: list[str] = field(default_factory=list)

    @property
    def loss(self) -> float:
        return self.value_before - self.value_after


@dataclass
class Certificate:
    source: str
    bound: float
    external: bool = False
    note: str = ""


@dataclass
class PipelineReport:
    seed: int
    opt: float
    assignment_lp_value: float
    steps: list[StepRecord]
    terminal_step: int
    certificate: Certificate
    expected_value: float
    expected_real_value: float
    rounded_value: float
    completion_gain: float
    final_value: float
    allocation: dict[str, str]
    fake_assignment: dict[str, str]
    constants: dict

    @property
    def branch_path(self) -> str:
        return ">".join(f"{s.step}{s.branch[0]}" for s in self.steps)

    @property
    def ratio(self) -> float:
        return self.final_value / self.opt if self.opt > 0 else 1.0

    def ledger_gap(self) -> float:
        """``Opt - sum(losses) - final LP value``; zero when the ledger reconciles."""
        if not self.steps:
            return 0.0
        return self.opt - sum(s.loss for s in self.steps) - self.steps[-1].value_after

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["schema_version"] = SCHEMA_VERSION
        d["version"] = __version__
        d["branch_path"] = self.branch_path
        d["ratio"] = self.ratio
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    SUMMARY_FIELDS = ("instance", "seed", "branch_path", "terminal_step", "opt", "final_value",
                      "ratio", "certificate", "certificate_bound")

    def summary_row(self, instance_id: str) -> dict:
        return {"instance": instance_id, "seed": self.seed, "branch_path": self.branch_path,
                "terminal_step": self.terminal_step, "opt": repr(self.opt),
                "final_value": repr(self.final_value), "ratio": repr(self.ratio),
                "certificate": self.certificate.source,
                "certificate_bound": repr(self.certificate.bound)}


def append_summary_csv(report: PipelineReport, instance_id: str, path: str | Path) -> None:
    path = Path(path)
    new = not path.exists() or path.stat().st_size == 0
    with open(path, "a", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=PipelineReport.SUMMARY_FIELDS)
        if new:
            w.writeheader()
        w.writerow(report.summary_row(instance_id))


# -- working-solution surgery ---------------------------------------------

def _rebuild(sol: AssignmentSolution, *, players=None, items=None, budgets=None,
             prices=None, x=None, origin=None) -> AssignmentSolution:
    """New solution over a modified instance; rows/columns are matched by id."""
    inst = sol.inst
    players = tuple(inst.players if players is None else players)
    items = tuple(inst.items if items is None else items)
    pset, iset = set(players), set(items)
    budgets = {p: (budgets or inst.budgets).get(p, inst.budgets.get(p)) for p in players}
    src_prices = inst.prices if prices is None else prices
    new_prices = {(p, j): v for (p, j), v in src_prices.items() if p in pset and j in iset}
    new_inst = Instance(players, budgets, items, new_prices, inst.beta)
    origin = {j: (origin or sol.origin).get(j, REAL) for j in items}
    X = np.zeros(new_inst.shape)
    src = sol.x if x is None else x
    for a, p in enumerate(players):
        if p not in inst.player_index:
            continue
        r = inst.player_index[p]
        for b, j in enumerate(items):
            if j in inst.item_index:
                X[a, b] = src[r, inst.item_index[j]]
    return AssignmentSolution(new_inst, X, origin)


class WorkingSolution:
    """Mutable holder for the running solution and its fake-item registry."""

    def __init__(self, sol: AssignmentSolution):
        self.sol = sol
        self.fakes: list[FakeItem] = []

    @property
    def value(self) -> float:
        return self.sol.objective

    def drop_players(self, drop) -> list[str]:
        drop = [p for p in self.sol.inst.players if p in set(drop)]
        if drop:
            keep = [p for p in self.sol.inst.players if p not in set(drop)]
            self.sol = _rebuild(self.sol, players=keep)
            dropped_fakes = {f.item for f in self.fakes if f.player in set(drop)}
            if dropped_fakes:
                self.sol = _rebuild(self.sol, items=[j for j in self.sol.inst.items
                                                     if j not in dropped_fakes])
        return drop

    def drop_items(self, drop) -> list[str]:
        drop = [j for j in self.sol.inst.items if j in set(drop)]
        if drop:
            self.sol = _rebuild(self.sol, items=[j for j in self.sol.inst.items
                                                 if j not in set(drop)])
        return drop

    def drop_empty_players(self) -> list[str]:
        vals = self.sol.player_values
        floor = EMPTY_VALUE * max(float(self.sol.inst.budget_vector.max(initial=0.0)), 1.0)
        return self.drop_players([p for p, v in zip(self.sol.inst.players, vals) if v <= floor])

    def set_budgets_to_values(self, over: str = "cap") -> float:
        """Lower budgets to ``Val_i`` and return the value this costs.

        A supported price can then exceed its new budget.  ``over="cap"``
        lowers such prices to the budget; ``over="drop"`` removes the pair
        instead, which keeps every surviving price unchanged.  Both repeat
        until no supported price exceeds its budget.
        """
        before = self.sol.val
        for _ in range(len(self.sol.inst.prices) + 1):
            self.drop_empty_players()
            vals = self.sol.player_values
            budgets = dict(zip(self.sol.inst.players, map(float, vals)))
            inst = self.sol.inst.with_changes(budgets=budgets)
            if over == "cap":
                fixed = cap_prices(inst)
                self.sol = AssignmentSolution(fixed, self.sol.x, self.sol.origin)
                if fixed is inst:
                    break
            else:
                bad = (self.sol.x > 0) & (inst.price_matrix > inst.budget_vector[:, None])
                self.sol = AssignmentSolution(inst, np.where(bad, 0.0, self.sol.x),
                                              self.sol.origin)
                if not bad.any():
                    break
        return before - self.sol.val

    def add_fake(self, player: str, price: float, x: float, kind: str, step: int) -> FakeItem:
        j = f"fake{len(self.fakes)}"
        inst = self.sol.inst
        prices = dict(inst.prices)
        prices[(player, j)] = float(price)
        X = np.zeros((len(inst.players), len(inst.items) + 1))
        X[:, :-1] = self.sol.x
        X[inst.player_index[player], -1] = x
        new_inst = Instance(inst.players, inst.budgets, inst.items + (j,), prices, inst.beta)
        origin = dict(self.sol.origin)
        origin[j] = FAKE
        self.sol = AssignmentSolution(new_inst, X, origin)
        rec = FakeItem(j, player, float(price), float(x), kind, step)
        self.fakes.append(rec)
        return rec

    def refill(self, step: int, big_target: np.ndarray | None = None,
               small_target: np.ndarray | None = None) -> list[FakeItem]:
        """Top every player up to big mass 1/2 and small value B/2 with fakes;
        scale down any excess.  Targets default to the canonical halves."""
        inst = self.sol.inst
        B = inst.budget_vector
        X = self.sol.x.copy()
        big = inst.big_mask
        P = inst.price_matrix
        new = []
        for i, p in enumerate(inst.players):
            b = X[i, big[i]].sum()
            if b > 0.5 + 1e-12:
                X[i, big[i]] *= 0.5 / b
            S = (X[i] * P[i] * ~big[i]).sum()
            if S > B[i] / 2 * (1 + 1e-12):
                X[i, ~big[i]] *= (B[i] / 2) / S
        self.sol = self.sol.replace_x(X)
        for i, p in enumerate(inst.players):
            b = float(X[i, big[i]].sum())
            if b < 0.5 - 1e-12:
                new.append(self.add_fake(p, B[i], 0.5 - b, "big", step))
            S = float((X[i] * P[i] * ~big[i]).sum())
            short = B[i] / 2 - S
            while short > 1e-12 * B[i]:
                # one fake small item at x = 1/2 priced 2*short, split if above B/2
                price = min(2 * short, B[i] / 2)
                new.append(self.add_fake(p, price, 0.5, "small", step))
                short -= price / 2
        return new


# -- rounding -------------------------------------------------------------

Rounder = Callable[[AssignmentSolution, int], Allocation]


def st_rounder(selection: str = "best") -> Rounder:
    def rnd(sol: AssignmentSolution, seed: int) -> Allocation:
        dist = decompose_matchings(build_bucket_graph(sol))
        if selection == "sample":
            return sample_allocation(dist, seed)
        return best_of_support(dist)
    return rnd


def complete_allocation(inst: Instance, assignment: dict[str, str]) -> tuple[dict[str, str], float]:
    """Hand every unassigned item to the player gaining most from it."""
    out = dict(assignment)
    totals = dict.fromkeys(inst.players, 0.0)
    for j, p in out.items():
        totals[p] += inst.prices[(p, j)]
    before = allocation_value(inst, out)
    for j in inst.items:
        if j in out:
            continue
        best, gain = None, 1e-12
        for p in inst.players:
            v = inst.prices.get((p, j))
            if v is None:
                continue
            g = min(inst.budgets[p], totals[p] + v) - min(inst.budgets[p], totals[p])
            if g > gain:
                best, gain = p, g
        if best is not None:
            out[j] = best
            totals[best] += inst.prices[(best, j)]
    return out, allocation_value(inst, out) - before


# -- steps ----------------------------------------------------------------

def _share(vals: np.ndarray, sel: np.ndarray) -> float:
    tot = float(vals.sum())
    return float(vals[sel].sum() / tot) if tot > 0 else 0.0


def step1_full_budgets(w: WorkingSolution, cfg: ConstantsConfig) -> StepRecord:
    sol = w.sol
    vals = sol.player_values
    B = sol.inst.budget_vector
    low = vals <= (1 - cfg.eps) * B
    share = _share(vals, low)
    rec = StepRecord(1, "full_budgets", ROUND if share >= cfg.eps1 else TRIM, share, cfg.eps1,
                     w.value, w.value)
    if rec.branch == TRIM:
        rec.removed_players = w.drop_players([p for p, l in zip(sol.inst.players, low) if l])
        lost = w.set_budgets_to_values()
        if lost > 0:
            rec.notes.append(f"capping prices at lowered budgets cost {lost:.6g}")
        rec.value_after = w.value
    return rec


def step2_unique_prices(w: WorkingSolution, cfg: ConstantsConfig) -> StepRecord:
    sol = w.sol
    report = find_unequally_priced(sol, cfg.mu)
    item_vals = (sol.x * sol.inst.price_matrix).sum(axis=0)
    inN = np.array([j in report.items for j in sol.inst.items], dtype=bool)
    share = _share(item_vals, inN)
    rec = StepRecord(2, "unique_prices", ROUND if share >= cfg.eps2 else TRIM, share, cfg.eps2,
                     w.value, w.value)
    if rec.branch == TRIM:
        wj = item_average_prices(sol)
        P = sol.inst.price_matrix
        X = sol.x.copy()
        off = (X > 0) & ((P < (1 - cfg.mu) * wj) | (P > (1 + cfg.mu) * wj))
        X[off] = 0.0
        w.sol = sol.replace_x(X)
        rec.removed_items = w.drop_items(report.items)
        if off.any():
            rec.notes.append(f"zeroed {int(off.sum())} off-average assignments")
        lost = w.set_budgets_to_values(over="drop")
        rec.removed_players = [p for p in sol.inst.players if p not in set(w.sol.inst.players)]
        if lost > 0:
            rec.notes.append(f"dropping pairs priced above the lowered budget cost {lost:.6g}")
        rec.value_after = w.value
    return rec


def step3_canonicalize(w: WorkingSolution, cfg: ConstantsConfig) -> StepRecord:
    sol = w.sol
    st = stat_arrays(sol)
    band = (st["b"] >= (1 - cfg.delta) / 2) & (st["b"] <= (1 + cfg.delta) / 2)
    share = _share(st["val"], ~band)
    rec = StepRecord(3, "canonicalize", ROUND if share >= cfg.eps3 else TRIM, share, cfg.eps3,
                     w.value, w.value)
    if rec.branch == ROUND:
        return rec
    rec.removed_players = w.drop_players([p for p, ok in zip(sol.inst.players, band) if not ok])
    inst = w.sol.inst
    prices = dict(inst.prices)
    big = inst.big_mask
    raised = 0
    for i, k in zip(*np.nonzero(big & (w.sol.x > 0))):
        p, j = inst.players[i], inst.items[k]
        if prices[(p, j)] != inst.budgets[p]:
            prices[(p, j)] = inst.budgets[p]
            raised += 1
    w.sol = AssignmentSolution(inst.with_changes(prices=prices), w.sol.x, w.sol.origin)
    if raised:
        rec.notes.append(f"raised {raised} big prices to the budget (relative distortion <= beta)")
    inst = w.sol.inst
    B = inst.budget_vector
    S = (w.sol.x * inst.price_matrix * inst.small_mask).sum(axis=1)
    if (S < B / 4 - 1e-12).any():
        p = inst.players[int(np.argmax(B / 4 - S))]
        raise PipelineError(f"fake small item for player {p} would cost more than B/2")
    rec.fakes = w.refill(3)
    rec.value_after = w.value
    return rec


def step4_valuable_small(w: WorkingSolution, cfg: ConstantsConfig) -> StepRecord:
    sol = w.sol
    inst = sol.inst
    B = inst.budget_vector
    P = inst.price_matrix
    pricey = inst.small_mask & (P >= B[:, None] * (0.5 + cfg.lam))
    mass = (sol.x * pricey).sum(axis=1)
    fires = mass >= cfg.eps4
    share = _share(sol.player_values, fires)
    rec = StepRecord(4, "valuable_small", ROUND if share >= cfg.eps4 else TRIM, share, cfg.eps4,
                     w.value, w.value)
    if rec.branch == ROUND:
        return rec
    rec.removed_players = w.drop_players([p for p, f in zip(inst.players, fires) if f])
    inst = w.sol.inst
    B = inst.budget_vector
    prices = dict(inst.prices)
    over = inst.small_mask & (inst.price_matrix > B[:, None] / 2 * (1 + 1e-9))
    for i, k in zip(*np.nonzero(over)):
        prices[(inst.players[i], inst.items[k])] = B[i] / 2
    if over.any():
        rec.notes.append(f"rounded {int(over.sum())} small prices down to B/2")
        w.sol = AssignmentSolution(inst.with_changes(prices=prices), w.sol.x, w.sol.origin)
    rec.fakes = w.refill(4)
    rec.value_after = w.value
    return rec


def step5_fully_assigned(w: WorkingSolution, cfg: ConstantsConfig) -> StepRecord:
    sol = w.sol
    xj = sol.x.sum(axis=0)
    item_vals = (sol.x * sol.inst.price_matrix).sum(axis=0)
    short = sol.real_mask & (xj < 0.9 - 1e-12) & (xj > 0)
    share = _share(item_vals, short)
    rec = StepRecord(5, "fully_assigned", ROUND if share >= cfg.eps5 else TRIM, share, cfg.eps5,
                     w.value, w.value)
    if rec.branch == ROUND:
        X = sol.x.copy()
        X[:, short] /= xj[short]
        w.sol = sol.replace_x(X)
        alpha = w.sol.player_values / w.sol.inst.budget_vector
        rec.notes.append(f"scaled {int(short.sum())} items to x_j = 1; max alpha {alpha.max():.6g}")
        rec.value_after = w.value
        return rec
    rec.removed_items = w.drop_items([j for j, s in zip(sol.inst.items, short) if s])
    rec.fakes = w.refill(5)
    rec.value_after = w.value
    return rec


def step6_big_small(w: WorkingSolution, cfg: ConstantsConfig, seed: int):
    sol = w.sol
    M = find_big_small(sol, cfg.nu) & {j for j in sol.inst.items if sol.origin[j] == REAL}
    item_vals = (sol.x * sol.inst.price_matrix).sum(axis=0)
    inM = np.array([j in M for j in sol.inst.items], dtype=bool)
    share = _share(item_vals, inM)
    rec = StepRecord(6, "big_small", ROUND if share >= cfg.eps6 else TRIM, share, cfg.eps6,
                     w.value, w.value)
    traces = []
    if rec.branch == ROUND:
        bad = check_restrictions(sol, price_rtol=price_spread(cfg))
        if bad:
            rec.notes += ["restriction: " + b for b in bad]
        part = sample_partition(sol.inst.players, _subseed(seed, 6))
        x1, t1 = nup_preprocess(sol, part, check=False)
        x2, t2 = nup_main(x1, part, M, mu=cfg.nu)
        traces = [t1, t2]
        rec.notes.append(f"partition red = {sorted(part.red)}")
        rec.notes += t2.warnings
        w.sol = x2
        rec.value_after = w.value
        return rec, traces
    rec.removed_items = w.drop_items(M)
    sol = w.sol
    _, xB, xS = big_small_masses(sol)
    X = sol.x.copy()
    big = sol.inst.big_mask
    real = sol.real_mask
    major_big = xB >= xS
    X[(~big) & (major_big & real)[None, :]] = 0.0
    X[big & (~major_big & real)[None, :]] = 0.0
    w.sol = sol.replace_x(X)
    rec.fakes = w.refill(6)
    rec.value_after = w.value
    return rec, traces


def price_spread(cfg: ConstantsConfig) -> float:
    """Relative price spread left after steps 2 and 3."""
    return (1 + cfg.mu) / ((1 - cfg.mu) * (1 - cfg.beta)) - 1


def step7_conditions(sol: AssignmentSolution, cfg: ConstantsConfig) -> list[str]:
    """Violations of (a) big price = budget, (b) half/half values, (c) unique
    prices (within the spread the earlier steps allow) and (d) items used
    only as big or only as small."""
    ok, why = is_canonical(sol)
    out = [] if ok else list(why)
    P = sol.inst.price_matrix
    rtol = price_spread(cfg)
    for k, j in enumerate(sol.inst.items):
        sup = np.flatnonzero(sol.x[:, k] > 0)
        if sup.size > 1 and P[sup, k].max() > (1 + rtol) * P[sup, k].min() * (1 + 1e-12):
            out.append(f"(c) item {j} prices spread beyond {rtol:.3g}")
    _, xB, xS = big_small_masses(sol)
    for j, a, b in zip(sol.inst.items, xB, xS):
        if a > 1e-12 and b > 1e-12:
            out.append(f"(d) item {j} is used both as big and as small")
    return out


def _subseed(seed: int, tag: int) -> int:
    return int(np.random.default_rng([seed, tag]).integers(2 ** 31))


# -- driver ---------------------------------------------------------------

def initial_solution(inst: Instance, cfg: ConstantsConfig) -> AssignmentSolution:
    if cfg.start == "assignment":
        return solve_assignment_lp(inst)
    y = solve_configuration_lp(inst)
    x, _ = project_to_assignment(y, strict=False)
    return normalize_saturation(x)


def run_pipeline(inst: Instance, cfg: ConstantsConfig | None = None, seed: int = 0, *,
                 start: AssignmentSolution | None = None,
                 nonwellstructured_rounder: Rounder | None = None,
                 final_rounder: Rounder | None = None) -> tuple[Allocation, PipelineReport]:
    cfg = cfg or ConstantsConfig()
    orig = inst
    work_inst = cap_prices(inst).with_changes(beta=cfg.beta)
    if start is None:
        sol = initial_solution(work_inst, cfg)
    else:
        sol = AssignmentSolution(work_inst, start.x, start.origin)
        sol = normalize_saturation(sol)
    assign_opt = solve_assignment_lp(work_inst).objective if start is None else sol.objective
    opt = sol.objective
    w = WorkingSolution(sol)
    steps: list[StepRecord] = []
    st_round = st_rounder(cfg.selection)
    rounder = st_round
    cert = None
    terminal = 7

    def alpha_st_bound(s: AssignmentSolution) -> float:
        a = s.player_values / s.inst.budget_vector
        return float(sum(bound_alpha(b, x) for b, x in zip(s.inst.budget_vector, a)))

    flow = [step1_full_budgets, step2_unique_prices, step3_canonicalize, step4_valuable_small,
            step5_fully_assigned]
    for k, fn in enumerate(flow, start=1):
        if not w.sol.inst.players:
            break
        pre = w.sol
        rec = fn(w, cfg)
        steps.append(rec)
        if rec.branch != ROUND:
            continue
        terminal = k
        if k == 1:
            vals = pre.player_values
            low = vals <= (1 - cfg.eps) * pre.inst.budget_vector
            bound = sum(bound_not_fully_assigned(cfg.eps, v) if l else 0.75 * v
                        for v, l in zip(vals, low))
            cert = Certificate("not_fully_assigned", float(bound))
        elif k == 2:
            x2, trace = apply_nubp(pre, cfg.mu)
            w.sol = x2
            rec.value_after = w.value
            rec.notes += trace.warnings
            cert = Certificate("nubp_gain", float(st_prime_alpha(pre) + trace.total_gain),
                               note=f"sum of gains {trace.total_gain:.6g}")
        elif k == 3:
            rounder = nonwellstructured_rounder or st_round
            cert = Certificate("non_wellstructured", alpha_st_bound(pre), external=True,
                               note="improved bound needs the external non-well-structured "
                                    "rounder; ST fallback certifies 3/4 only"
                               if nonwellstructured_rounder is None else "")
        elif k == 4:
            cert = Certificate("valuable_small_st2", alpha_st_bound(pre),
                               note="improvement is checked empirically by exact ST value")
        elif k == 5:
            cert = Certificate("st3_scaled", 0.75 * pre.val)
        break
    else:
        if w.sol.inst.players:
            rec, traces = step6_big_small(w, cfg, seed)
            steps.append(rec)
            if rec.branch == ROUND:
                terminal = 6
                cert = Certificate("big_small", float(traces[1].st_after),
                                   note="b B + (1 - b) S after both phases")
            else:
                bad = step7_conditions(w.sol, cfg)
                if bad:
                    raise PipelineError("final conditions fail: " + "; ".join(bad))
                rounder = final_rounder or st_round
                cert = Certificate("final_rounder", alpha_st_bound(w.sol),
                                   external=final_rounder is None,
                                   note="(3/4 + c) needs the external negatively correlated "
                                        "rounder; ST fallback certifies 3/4 only"
                                   if final_rounder is None else "")
    if cert is None:
        # every player was trimmed away
        cert = Certificate("empty", 0.0)
        terminal = steps[-1].step if steps else 0

    final = w.sol
    if final.inst.players and final.inst.items:
        dist = decompose_matchings(build_bucket_graph(final))
        ev = exact_expected_value(dist)
        alloc_w = rounder(final, _subseed(seed, 7))
        expected, expected_real = ev.total, ev.real_total
    else:
        alloc_w = Allocation({}, 0.0)
        expected = expected_real = 0.0
    real_assign = {j: p for j, p in alloc_w.assignment.items() if final.origin.get(j) != FAKE}
    rounded_value = allocation_value(orig, real_assign)
    gain = 0.0
    if cfg.complete:
        real_assign, gain = complete_allocation(cap_prices(orig), real_assign)
    alloc = make_allocation(orig, real_assign, alloc_w.fake_items)
    report = PipelineReport(
        seed=seed, opt=opt, assignment_lp_value=assign_opt, steps=steps, terminal_step=terminal,
        certificate=cert, expected_value=expected, expected_real_value=expected_real,
        rounded_value=rounded_value, completion_gain=gain, final_value=alloc.value,
        allocation=dict(sorted(alloc.assignment.items())),
        fake_assignment=dict(sorted(alloc.fake_items.items())),
        constants=dataclasses.asdict(cfg))
    return alloc, report
