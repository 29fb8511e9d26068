"""Assignment-LP and Configuration-LP relaxations.

The Configuration-LP is solved by column generation: a restricted master LP
over the columns generated so far, priced by a per-player oracle that finds
the item set maximizing ``min(sum p, B_i) - sum duals``.
"""
from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping

import numpy as np

from .instance import Instance
from .simplex import SimplexError, solve_lp

log = logging.getLogger(__name__)

ENUM_CAP = 20
PRICE_GRID = 10_000
REAL, FAKE = "real", "fake"


class ProjectionError(RuntimeError):
    def __init__(self, message, value_before, value_after):
        super().__init__(message)
        self.value_before = value_before
        self.value_after = value_after


class ColumnGenerationError(RuntimeError):
    def __init__(self, message, primal=None, duals=None):
        super().__init__(message)
        self.primal = primal
        self.duals = duals


@dataclass(frozen=True)
class AssignmentSolution:
    """Fractional assignment ``x`` stored densely over (players x items)."""

    inst: Instance
    x: np.ndarray
    origin: Mapping[str, str] = field(default_factory=dict)

    def __post_init__(self):
        x = np.array(self.x, dtype=float)
        if x.shape != self.inst.shape:
            raise ValueError(f"x has shape {x.shape}, instance is {self.inst.shape}")
        x[~self.inst.mask] = 0.0
        x.setflags(write=False)
        object.__setattr__(self, "x", x)
        origin = {j: REAL for j in self.inst.items}
        origin.update(self.origin)
        object.__setattr__(self, "origin", origin)

    @classmethod
    def from_pairs(cls, inst: Instance, pairs: Mapping[tuple[str, str], float],
                   origin: Mapping[str, str] | None = None) -> "AssignmentSolution":
        x = np.zeros(inst.shape)
        for (p, j), v in pairs.items():
            x[inst.player_index[p], inst.item_index[j]] = v
        return cls(inst, x, origin or {})

    def get(self, player: str, item: str) -> float:
        return float(self.x[self.inst.player_index[player], self.inst.item_index[item]])

    def pairs(self) -> dict[tuple[str, str], float]:
        rows, cols = np.nonzero(self.x)
        return {(self.inst.players[r], self.inst.items[c]): float(self.x[r, c])
                for r, c in zip(rows, cols)}

    @property
    def real_mask(self) -> np.ndarray:
        return np.array([self.origin[j] == REAL for j in self.inst.items], dtype=bool)

    @property
    def player_values(self) -> np.ndarray:
        """``Val_i = sum_j x_ij p_ij`` (uncapped)."""
        return (self.x * self.inst.price_matrix).sum(axis=1)

    @property
    def val(self) -> float:
        return float(self.player_values.sum())

    @property
    def objective(self) -> float:
        """Assignment-LP objective ``sum_i min(B_i, Val_i)``."""
        return float(np.minimum(self.inst.budget_vector, self.player_values).sum())

    def replace_x(self, x: np.ndarray) -> "AssignmentSolution":
        return AssignmentSolution(self.inst, x, dict(self.origin))

    def violations(self, tol: float = 1e-9) -> list[str]:
        out = []
        if (self.x < -tol).any() or (self.x > 1 + tol).any():
            out.append("x must lie in [0, 1]")
        over = np.flatnonzero(self.x.sum(axis=0) > 1 + tol)
        out += [f"item {self.inst.items[k]} assigned more than once in total" for k in over]
        return out


@dataclass(frozen=True)
class ConfigSolution:
    inst: Instance
    columns: dict[str, list[tuple[frozenset, float]]]
    history: tuple[float, ...] = ()
    upper_bound: float | None = None

    def column_value(self, player: str, config: frozenset) -> float:
        total = sum(self.inst.prices[(player, j)] for j in config)
        return min(total, self.inst.budgets[player])

    @property
    def objective(self) -> float:
        return float(sum(self.column_value(p, C) * y
                         for p, cols in self.columns.items() for C, y in cols))

    def violations(self, tol: float = 1e-9) -> list[str]:
        out = []
        item_load = dict.fromkeys(self.inst.items, 0.0)
        for p, cols in self.columns.items():
            if sum(y for _, y in cols) > 1 + tol:
                out.append(f"player {p} receives more than one configuration")
            for C, y in cols:
                for j in C:
                    item_load[j] += y
        out += [f"item {j} overused" for j, v in item_load.items() if v > 1 + tol]
        return out


# -- Assignment-LP --------------------------------------------------------

def solve_assignment_lp(inst: Instance, tol: float = 1e-9) -> AssignmentSolution:
    """Optimal Assignment-LP solution, normalized so no player exceeds its budget."""
    if tol <= 0:
        raise ValueError("tol must be positive")
    n, m = inst.shape
    pairs = list(zip(*np.nonzero(inst.mask)))
    P = inst.price_matrix
    nv = len(pairs) + n  # x variables, then P_i
    c = np.zeros(nv)
    c[len(pairs):] = 1.0
    A = np.zeros((2 * n + m, nv))
    b = np.zeros(2 * n + m)
    for i in range(n):
        A[i, len(pairs) + i] = 1.0
        b[i] = inst.budget_vector[i]
        A[n + i, len(pairs) + i] = 1.0
    for k, (i, j) in enumerate(pairs):
        A[n + i, k] = -P[i, j]
        A[2 * n + j, k] = 1.0
    b[2 * n:] = 1.0
    res = solve_lp(c, A, b, feas_tol=min(tol, 1e-9))
    x = np.zeros(inst.shape)
    for k, (i, j) in enumerate(pairs):
        x[i, j] = min(res.x[k], 1.0)
    return normalize_saturation(AssignmentSolution(inst, x))


def normalize_saturation(sol: AssignmentSolution) -> AssignmentSolution:
    """Scale each over-full player down to ``sum_j x_ij p_ij = B_i``."""
    vals = sol.player_values
    B = sol.inst.budget_vector
    scale = np.ones_like(vals)
    over = vals > B
    scale[over] = B[over] / vals[over]
    return sol.replace_x(sol.x * scale[:, None])


# -- configuration pricing ------------------------------------------------

def price_configuration(inst: Instance, player: str, item_duals: Mapping[str, float],
                        enum_cap: int = ENUM_CAP, grid: int = PRICE_GRID) -> tuple[frozenset, float]:
    """Item set maximizing ``min(sum p, B) - sum duals`` for ``player``.

    Exact by enumeration up to ``enum_cap`` candidate items, otherwise a
    knapsack DP over prices rounded down to multiples of ``B / grid``.
    """
    B = inst.budgets[player]
    cand = [j for j in inst.items if inst.prices.get((player, j), 0.0) > 0.0]
    if any(item_duals.get(j, 0.0) < 0 for j in cand):
        raise ValueError("item duals must be nonnegative")
    p = np.array([inst.prices[(player, j)] for j in cand])
    d = np.array([float(item_duals.get(j, 0.0)) for j in cand])
    if not cand:
        return frozenset(), 0.0
    if len(cand) <= enum_cap:
        sums_p, sums_d = np.zeros(1), np.zeros(1)
        for k in range(len(cand)):
            sums_p = np.concatenate([sums_p, sums_p + p[k]])
            sums_d = np.concatenate([sums_d, sums_d + d[k]])
        vals = np.minimum(sums_p, B) - sums_d
        best = int(np.argmax(vals))
        chosen = frozenset(cand[k] for k in range(len(cand)) if best >> k & 1)
        return chosen, float(vals[best])
    chosen = _price_by_dp(B, p, d, grid)
    if not chosen:
        return frozenset(), 0.0
    C = frozenset(cand[k] for k in chosen)
    return C, float(min(p[chosen].sum(), B) - d[chosen].sum())


def _price_by_dp(B, p, d, grid) -> list[int]:
    unit = B / grid
    q = np.minimum(np.floor(p / unit).astype(int), grid)
    cost = np.full(grid + 1, np.inf)
    cost[0] = 0.0
    preds = []
    for k in range(len(p)):
        new = cost.copy()
        pred = np.full(grid + 1, -1)
        if q[k] > 0:
            shifted = cost[:grid + 1 - q[k]] + d[k]
            better = shifted < new[q[k]:]
            new[q[k]:][better] = shifted[better]
            pred[q[k]:][better] = np.arange(grid + 1 - q[k])[better]
            # totals reaching the budget collapse into the top state
            tail = cost[grid + 1 - q[k]:] + d[k]
            if tail.size:
                t = int(np.argmin(tail))
                if tail[t] < new[grid]:
                    new[grid] = tail[t]
                    pred[grid] = grid + 1 - q[k] + t
        preds.append(pred)
        cost = new
    vals = np.minimum(np.arange(grid + 1) * unit, B) - cost
    t = int(np.argmax(vals))
    if vals[t] <= 0:
        return []
    chosen = []
    for k in range(len(p) - 1, -1, -1):
        if preds[k][t] >= 0:
            chosen.append(k)
            t = preds[k][t]
    return sorted(chosen)


# -- Configuration-LP -----------------------------------------------------

def solve_configuration_lp(inst: Instance, accuracy: float = 1e-4, max_iter: int = 500,
                           enum_cap: int = ENUM_CAP, trace_path: str | Path | None = None
                           ) -> ConfigSolution:
    """Column generation for the Configuration-LP.

    Stops once no player has a column with reduced value above
    ``accuracy * objective / (|players| + |items|)``; the resulting objective is
    within a ``(1 - accuracy)`` factor of the optimum.
    """
    if not 0 < accuracy < 1:
        raise ValueError("accuracy must lie in (0, 1)")
    n, m = inst.shape
    cols: list[tuple[int, frozenset]] = []
    seen = set()
    for i, p in enumerate(inst.players):
        for j in inst.items:
            if inst.prices.get((p, j), 0.0) > 0:
                cols.append((i, frozenset([j])))
                seen.add((i, frozenset([j])))
    history: list[float] = []
    trace_rows = []
    res = None
    ub = None
    for it in range(max_iter):
        c = np.array([min(sum(inst.prices[(inst.players[i], j)] for j in C),
                          inst.budget_vector[i]) for i, C in cols])
        A = np.zeros((n + m, len(cols)))
        for k, (i, C) in enumerate(cols):
            A[i, k] = 1.0
            for j in C:
                A[n + inst.item_index[j], k] = 1.0
        if cols:
            try:
                res = solve_lp(c, A, np.ones(n + m))
            except SimplexError as exc:
                raise ColumnGenerationError(f"master LP failed: {exc}") from exc
            obj, u, dj = res.objective, res.duals[:n], res.duals[n:]
        else:
            obj, u, dj = 0.0, np.zeros(n), np.zeros(m)
        history.append(obj)
        duals = dict(zip(inst.items, dj))
        thresh = accuracy * obj / (n + m)
        added = []
        gap = 0.0
        for i, p in enumerate(inst.players):
            C, val = price_configuration(inst, p, duals, enum_cap=enum_cap)
            reduced = val - u[i]
            gap += max(reduced, 0.0)
            if reduced > thresh and (i, C) not in seen:
                added.append((i, C))
        ub = obj + gap
        trace_rows.append((it, obj, ";".join(f"{inst.players[i]}:{'|'.join(sorted(C))}"
                                             for i, C in added)))
        if not added:
            break
        for key in added:
            seen.add(key)
            cols.append(key)
    else:
        raise ColumnGenerationError("column generation iteration cap reached",
                                    primal=None if res is None else res.x,
                                    duals=None if res is None else res.duals)
    if trace_path is not None:
        with open(trace_path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["iteration", "objective", "entering_columns"])
            w.writerows(trace_rows)
    out: dict[str, list[tuple[frozenset, float]]] = {p: [] for p in inst.players}
    if res is not None:
        for k, (i, C) in enumerate(cols):
            if res.x[k] > 1e-12:
                out[inst.players[i]].append((C, float(res.x[k])))
    log.debug("column generation: %d iterations, objective %.6f", len(history), history[-1])
    return ConfigSolution(inst, out, tuple(history), ub)


@dataclass(frozen=True)
class ProjectionReport:
    value_before: float
    value_after: float
    config_value: float
    trimmed: tuple[tuple[str, str, float], ...]

    @property
    def loss(self) -> float:
        return self.value_before - self.value_after

    @property
    def preserves_config_value(self) -> bool:
        return self.value_after >= self.config_value - 1e-9


def project_to_assignment(y: ConfigSolution, strict: bool = True, rel_tol: float = 1e-6
                          ) -> tuple[AssignmentSolution, ProjectionReport]:
    """Marginals ``x_ij = sum_{C ni j} y_iC``, trimmed so that every small item
    satisfies ``x_ij + sum_{big} x_ij' <= 1``.

    Small items are trimmed cheapest first.  With ``strict`` the projection
    raises if trimming costs more than ``rel_tol`` of the objective.
    """
    inst = y.inst
    x = np.zeros(inst.shape)
    for p, cols in y.columns.items():
        i = inst.player_index[p]
        for C, w in cols:
            for j in C:
                x[i, inst.item_index[j]] += w
    x = np.clip(x, 0.0, 1.0)
    before = AssignmentSolution(inst, x)
    big, small = inst.big_mask, inst.small_mask
    P = inst.price_matrix
    trimmed = []
    for i, p in enumerate(inst.players):
        b = x[i, big[i]].sum()
        if b > 1.0:
            x[i, big[i]] *= 1.0 / b
            trimmed.append((p, "*big*", float(b - 1.0)))
            b = 1.0
        room = 1.0 - b
        order = sorted(np.flatnonzero(small[i]), key=lambda k: (P[i, k], inst.items[k]))
        for k in order:
            if x[i, k] > room + 1e-12:
                trimmed.append((p, inst.items[k], float(x[i, k] - room)))
                x[i, k] = room
    after = AssignmentSolution(inst, x)
    report = ProjectionReport(before.objective, after.objective, y.objective, tuple(trimmed))
    if strict and report.loss > rel_tol * max(before.objective, 1e-300):
        raise ProjectionError("projection property unobtainable without value loss",
                              report.value_before, report.value_after)
    return after, report
