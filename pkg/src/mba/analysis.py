"""Per-player / per-item statistics and closed-form lower bounds on ST rounding."""
from __future__ import annotations

import csv
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .lp import AssignmentSolution


@dataclass(frozen=True)
class PlayerStats:
    alpha: float
    b: float
    S: float
    val: float


@dataclass(frozen=True)
class ItemStats:
    x: float
    xB: float
    xS: float
    w: float


def stat_arrays(sol: AssignmentSolution) -> dict[str, np.ndarray]:
    """Vectorized statistics; the dict/dataclass views below are built from it."""
    inst = sol.inst
    X, P = sol.x, inst.price_matrix
    big = inst.big_mask
    XP = X * P
    val = XP.sum(axis=1)
    xj = X.sum(axis=0)
    xB = (X * big).sum(axis=0)
    with np.errstate(invalid="ignore", divide="ignore"):
        w = np.where(xj > 0, XP.sum(axis=0) / np.where(xj > 0, xj, 1.0), 0.0)
    return {
        "alpha": val / inst.budget_vector,
        "b": (X * big).sum(axis=1),
        "S": (XP * ~big).sum(axis=1),
        "val": val,
        "x": xj,
        "xB": xB,
        "xS": xj - xB,
        "w": w,
    }


def compute_stats(sol: AssignmentSolution) -> tuple[dict[str, PlayerStats], dict[str, ItemStats]]:
    a = stat_arrays(sol)
    players = {p: PlayerStats(float(a["alpha"][k]), float(a["b"][k]), float(a["S"][k]),
                              float(a["val"][k]))
               for k, p in enumerate(sol.inst.players)}
    items = {j: ItemStats(float(a["x"][k]), float(a["xB"][k]), float(a["xS"][k]), float(a["w"][k]))
             for k, j in enumerate(sol.inst.items)}
    return players, items


def is_canonical(sol: AssignmentSolution, tol: float = 1e-6) -> tuple[bool, list[str]]:
    """Canonical: supported big prices equal the budget, and big and small
    items each contribute exactly half the budget."""
    inst = sol.inst
    B = inst.budget_vector
    P = inst.price_matrix
    big = inst.big_mask
    out = []
    for i, p in enumerate(inst.players):
        for k in np.flatnonzero(big[i] & (sol.x[i] > 0)):
            if abs(P[i, k] - B[i]) > tol * B[i]:
                out.append(f"(a) big item {inst.items[k]} of player {p} priced "
                           f"{P[i, k]:.6g} != budget {B[i]:.6g}")
        vb = float((sol.x[i] * P[i] * big[i]).sum())
        vs = float((sol.x[i] * P[i] * ~big[i]).sum())
        if abs(vb - B[i] / 2) > tol * B[i]:
            out.append(f"(b) player {p} big value {vb:.6g} != B/2 = {B[i] / 2:.6g}")
        if abs(vs - B[i] / 2) > tol * B[i]:
            out.append(f"(b) player {p} small value {vs:.6g} != B/2 = {B[i] / 2:.6g}")
    return not out, out


def bound_alpha(B: float, alpha: float) -> float:
    """``B alpha (1 - alpha/4)``, saturating at ``B`` once ``alpha >= 2``."""
    if B < 0 or alpha < 0:
        raise ValueError("bound_alpha needs nonnegative inputs")
    if alpha >= 2.0:
        return float(B)
    return float(B * alpha * (1.0 - alpha / 4.0))


def bound_intermediate(B: float, alpha: float, w: float) -> float:
    if not 0.0 <= w <= 1.0:
        raise ValueError("w must lie in [0, 1]")
    return float(B * (alpha - w * (alpha - w)))


def bound_big_small(B: float, b: float, S: float) -> float | None:
    """``b B + (1 - b) S`` when ``S/B <= (1 + b)/2``, else ``None``.

    Only valid when every supported big price equals ``B`` and every small
    price is at most ``B/2``; the caller vouches for that.
    """
    if B <= 0 or b < 0 or S < 0:
        raise ValueError("bound_big_small needs B > 0 and nonnegative b, S")
    if S / B > (1.0 + b) / 2.0:
        return None
    return float(b * B + (1.0 - b) * S)


def bound_st3(B: float, b: float, v: float, S: float) -> float:
    return float(b * B + v * B + (1.0 - b - v) * (S - v * B / 2.0))


def bound_not_fully_assigned(eps: float, val: float) -> float:
    return float((3.0 + eps / 5.0) / 4.0 * val)


def st_prime_alpha(sol: AssignmentSolution) -> float:
    """Sum of ``B_i alpha_i (1 - alpha_i/4)`` (no saturation at alpha=2)."""
    B = sol.inst.budget_vector
    a = sol.player_values / B
    return float((B * a * (1.0 - a / 4.0)).sum())


def st_prime_big_small(sol: AssignmentSolution) -> float:
    """Sum of ``b_i B_i + (1 - b_i) S_i``."""
    a = stat_arrays(sol)
    B = sol.inst.budget_vector
    return float((a["b"] * B + (1.0 - a["b"]) * a["S"]).sum())


def write_stats_csv(sol: AssignmentSolution, players_path: str | Path, items_path: str | Path,
                    st_values: dict[str, float] | None = None) -> None:
    ps, its = compute_stats(sol)
    with open(players_path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["player", "budget", "alpha", "b", "S", "val", "bound_alpha",
                    "bound_big_small", "st_exact"])
        for p, s in ps.items():
            B = sol.inst.budgets[p]
            bs = bound_big_small(B, s.b, s.S) if s.S >= 0 else None
            w.writerow([p, repr(B), repr(s.alpha), repr(s.b), repr(s.S), repr(s.val),
                        repr(bound_alpha(B, s.alpha)), "" if bs is None else repr(bs),
                        "" if st_values is None else repr(st_values[p])])
    with open(items_path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["item", "origin"] + list(asdict(next(iter(its.values()))).keys()))
        for j, s in its.items():
            w.writerow([j, sol.origin[j]] + [repr(v) for v in asdict(s).values()])
