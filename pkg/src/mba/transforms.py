"""Solution transforms that make ST rounding beat 3/4.

* Non-unique prices: an item whose high-priced assignments carry a large
  share of its value is shifted from cheap players to expensive ones.
* Big-small items: after a random red/green split of the players, big mass
  flows towards red players, and mixed items move from red players holding
  them as small to red players holding them as big.
"""
from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .analysis import is_canonical, st_prime_alpha, st_prime_big_small
from .lp import AssignmentSolution

log = logging.getLogger(__name__)

HIGH, LOW = "high_side", "low_side"
RED, GREEN = "R", "G"
SATURATION_TOL = 1e-6


class TransformError(ValueError):
    pass


def nubp_factor(mu: float) -> float:
    """Per-step shift fraction ``mu (1 + mu) / ((2 + mu) 10)``."""
    return mu * (1.0 + mu) / ((2.0 + mu) * 10.0)


# -- trace ----------------------------------------------------------------

@dataclass(frozen=True)
class Move:
    phase: str
    item: str
    giver: str
    taker: str
    delta: float
    zeta: float | None = None
    gain: float | None = None
    dhat_minus: float | None = None
    dhat_plus: float | None = None


@dataclass
class TransformTrace:
    functional: str
    moves: list[Move] = field(default_factory=list)
    st_before: float = 0.0
    st_after: float = 0.0
    warnings: list[str] = field(default_factory=list)

    @property
    def total_gain(self) -> float:
        return float(sum(m.gain for m in self.moves if m.gain is not None))

    @property
    def total_dhat(self) -> float:
        return float(sum((m.dhat_minus or 0.0) + (m.dhat_plus or 0.0) for m in self.moves))

    def to_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["phase", "item", "from", "to", "delta", "zeta", "gain",
                        "dhat_minus", "dhat_plus"])
            for m in self.moves:
                w.writerow([m.phase, m.item, m.giver, m.taker, repr(m.delta)] +
                           ["" if v is None else repr(v)
                            for v in (m.zeta, m.gain, m.dhat_minus, m.dhat_plus)])


# -- non-unique prices ----------------------------------------------------

@dataclass(frozen=True)
class UnequalItem:
    """``H`` are the high-priced players, ``L`` the low-priced ones; mass
    always moves from ``L`` to ``H``.  ``side`` names the inequality that
    fired, which decides which set is the narrow one."""

    item: str
    H: tuple[str, ...]
    L: tuple[str, ...]
    h: float
    l: float
    w: float
    side: str


@dataclass(frozen=True)
class UnequalPriceReport:
    mu: float
    items: dict[str, UnequalItem]

    @property
    def N(self) -> set[str]:
        return set(self.items)


def _check_saturated(sol: AssignmentSolution, tol: float) -> None:
    alpha = sol.player_values / sol.inst.budget_vector
    bad = [p for p, a in zip(sol.inst.players, alpha) if abs(a - 1.0) > tol]
    if bad:
        raise TransformError(f"player {bad[0]} is not saturated (alpha = "
                             f"{alpha[sol.inst.player_index[bad[0]]]:.6g})")


def item_average_prices(sol: AssignmentSolution) -> np.ndarray:
    xj = sol.x.sum(axis=0)
    xp = (sol.x * sol.inst.price_matrix).sum(axis=0)
    return np.divide(xp, xj, out=np.zeros_like(xp), where=xj > 0)


def find_unequally_priced(sol: AssignmentSolution, mu: float, *, check_saturated: bool = True,
                          tol: float = SATURATION_TOL) -> UnequalPriceReport:
    """Items whose value share on prices ``>= (1+mu) w_j`` (high side) or
    ``<= (1-mu) w_j`` (low side) is at least ``mu``.  High side wins ties."""
    if not 0 < mu < 0.5:
        raise TransformError("mu must lie in (0, 1/2)")
    if check_saturated:
        _check_saturated(sol, tol)
    inst = sol.inst
    X, P = sol.x, inst.price_matrix
    w = item_average_prices(sol)
    out = {}
    for k, j in enumerate(inst.items):
        sup = np.flatnonzero(X[:, k] > 0)
        if sup.size == 0:
            continue
        xp = X[sup, k] * P[sup, k]
        total = xp.sum()
        hi = P[sup, k] >= (1 + mu) * w[k]
        lo = P[sup, k] <= (1 - mu) * w[k]
        if xp[hi].sum() >= mu * total and hi.any():
            side, H, L = HIGH, hi, P[sup, k] <= (1 + mu / 2) * w[k]
        elif xp[lo].sum() >= mu * total and lo.any():
            side, H, L = LOW, P[sup, k] >= (1 - mu / 2) * w[k], lo
        else:
            continue
        out[j] = UnequalItem(j, tuple(inst.players[i] for i in sup[H]),
                             tuple(inst.players[i] for i in sup[L]),
                             float(X[sup[H], k].sum()), float(X[sup[L], k].sum()),
                             float(w[k]), side)
    return UnequalPriceReport(mu, out)


def nubp_gain(p_low: float, p_high: float, zeta: float, gamma: float) -> float:
    """Lower bound on the gain in ``sum_i B_i a_i (1 - a_i/4)`` from moving
    ``zeta`` of an item from a player pricing it ``p_low`` to one pricing it
    ``p_high`` while every ``a_i`` stays within ``1 +- gamma``."""
    up = p_high * (zeta - zeta * (1 + gamma) / 2 - zeta ** 2 / 4)
    down = p_low * (zeta + zeta ** 2 / 4 - zeta * (1 - gamma) / 2)
    return up - down


def apply_nubp(sol: AssignmentSolution, mu: float, report: UnequalPriceReport | None = None,
               *, gamma: float | None = None) -> tuple[AssignmentSolution, TransformTrace]:
    """Shift mass of every unequally-priced item from ``L_j`` to ``H_j``.

    On the high side each ``H_j`` entry grows by the factor ``1 + f`` and each
    ``L_j`` entry shrinks by ``1 - f h_j / l_j``; the low side mirrors this
    (``L_j`` shrinks by ``1 - f``, ``H_j`` grows by ``1 + f l_j / h_j``).
    Either way the item's total is unchanged.  Pairwise, the narrow set's
    flow is split over the broad set in proportion to ``x``:
    ``zeta(j, i, i') = f x_ij x_i'j / (broad mass)``.
    """
    report = report or find_unequally_priced(sol, mu)
    gamma = mu / 10 if gamma is None else gamma
    f = nubp_factor(mu)
    inst = sol.inst
    X = sol.x.copy()
    P = inst.price_matrix
    trace = TransformTrace("alpha", st_before=st_prime_alpha(sol))
    for j, u in report.items.items():
        k = inst.item_index[j]
        iH = [inst.player_index[p] for p in u.H]
        iL = [inst.player_index[p] for p in u.L]
        broad = u.l if u.side == HIGH else u.h
        if broad <= 0:
            raise TransformError(f"item {j} has an empty broad side")
        for a in iL:
            for b in iH:
                zeta = f * sol.x[a, k] * sol.x[b, k] / broad
                trace.moves.append(Move("nubp", j, inst.players[a], inst.players[b], zeta,
                                        zeta=zeta, gain=nubp_gain(P[a, k], P[b, k], zeta, gamma)))
        if u.side == HIGH:
            X[iH, k] *= 1 + f
            X[iL, k] *= 1 - f * u.h / u.l
        else:
            X[iL, k] *= 1 - f
            X[iH, k] *= 1 + f * u.l / u.h
    out = sol.replace_x(X)
    trace.st_after = st_prime_alpha(out)
    drift = np.abs(out.player_values / inst.budget_vector - 1.0)
    if report.items and drift.max() > gamma + 1e-12:
        worst = inst.players[int(np.argmax(drift))]
        trace.warnings.append(f"alpha of player {worst} drifted by {drift.max():.6g} > {gamma:.6g}")
    return out, trace


# -- big-small items ------------------------------------------------------

@dataclass(frozen=True)
class Partition:
    assignment: dict[str, str]
    seed: int | None = None

    @property
    def red(self) -> set[str]:
        return {p for p, c in self.assignment.items() if c == RED}

    def mask(self, players) -> np.ndarray:
        return np.array([self.assignment[p] == RED for p in players], dtype=bool)


def sample_partition(players, seed: int) -> Partition:
    rng = np.random.default_rng(seed)
    red = rng.random(len(players)) < 0.5
    return Partition({p: RED if r else GREEN for p, r in zip(players, red)}, seed)


def big_small_masses(sol: AssignmentSolution) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    x = sol.x.sum(axis=0)
    xB = (sol.x * sol.inst.big_mask).sum(axis=0)
    return x, xB, x - xB


def find_big_small(sol: AssignmentSolution, mu: float) -> set[str]:
    if not 0 < mu <= 0.5:
        raise TransformError("mu must lie in (0, 1/2]")
    x, xB, _ = big_small_masses(sol)
    keep = (x > 0) & (mu * x <= xB) & (xB <= (1 - mu) * x)
    return {j for j, k in zip(sol.inst.items, keep) if k}


def check_restrictions(sol: AssignmentSolution, *, price_rtol: float = 1e-9,
                       canon_tol: float = 1e-6) -> list[str]:
    """Violations of the preconditions of the big-small transform."""
    inst = sol.inst
    out = []
    ok, why = is_canonical(sol, canon_tol)
    if not ok:
        out.append("solution is not canonical: " + why[0])
    P = inst.price_matrix
    real = sol.real_mask
    for k, j in enumerate(inst.items):
        sup = np.flatnonzero(sol.x[:, k] > 0)
        if sup.size and real[k]:
            lo, hi = P[sup, k].min(), P[sup, k].max()
            if hi - lo > price_rtol * hi:
                out.append(f"unique prices: item {j} has prices in [{lo:.6g}, {hi:.6g}]")
    small = inst.small_mask & (sol.x > 0)
    over = small & (P > inst.budget_vector[:, None] / 2 * (1 + 1e-12))
    for i, k in zip(*np.nonzero(over)):
        out.append(f"cheap small items: item {inst.items[k]} costs more than B/2 "
                   f"for player {inst.players[i]}")
    xj = sol.x.sum(axis=0)
    for k in np.flatnonzero(real & (xj < 0.9 - 1e-12)):
        out.append(f"fully assigned items: item {inst.items[k]} has x_j = {xj[k]:.6g} < 9/10")
    return out


def _moves_rule1(X, big, red, cols):
    """(giver G big) -> (taker R big): delta = x_ij/100 * x_i'j / (x_j - x_ij)."""
    xj = X.sum(axis=0)
    G = (~red)[:, None] & big & (X > 0) & cols
    R = red[:, None] & big & (X > 0) & cols
    denom = xj[None, :] - X
    if (G & (denom <= 0)).any():
        raise TransformError("degenerate denominator x_j - x_ij = 0 in rule 1")
    coef = np.where(G, X / (100 * np.where(G, denom, 1.0)), 0.0)
    return coef, np.where(R, X, 0.0)


def _moves_rule2(X, big, red, cols, xB, xS):
    """(giver R small) -> (taker R big):
    delta = min(x_ij x_i'j / xB_j, x_ij x_i'j / xS_j) / 100."""
    small = ~big
    Gv = red[:, None] & small & (X > 0) & cols
    Tk = red[:, None] & big & (X > 0) & cols
    m = np.maximum(xB, xS)
    active = (Gv.any(axis=0) & Tk.any(axis=0))
    if (active & (m <= 0)).any():
        raise TransformError("degenerate denominator max(xB_j, xS_j) = 0 in rule 2")
    coef = np.where(Gv, X / (100 * np.where(m > 0, m, 1.0))[None, :], 0.0)
    return coef, np.where(Tk, X, 0.0)


def _apply_pairs(X, coef, take):
    """Giver (i, j) loses coef_ij * sum_i' take_i'j; taker gains take_i'j * sum_i coef_ij."""
    return X - coef * take.sum(axis=0) + take * coef.sum(axis=0)


def _pair_moves(inst, phase, coef, take) -> list[Move]:
    out = []
    for k in np.flatnonzero((coef > 0).any(axis=0) & (take > 0).any(axis=0)):
        for a in np.flatnonzero(coef[:, k] > 0):
            for b in np.flatnonzero(take[:, k] > 0):
                out.append(Move(phase, inst.items[k], inst.players[a], inst.players[b],
                                float(coef[a, k] * take[b, k])))
    return out


def preprocess_arrays(X: np.ndarray, big: np.ndarray, red: np.ndarray, real: np.ndarray):
    """Array core of the preprocessing phase: both rules take their ratios
    from the snapshot ``X``.  Returns ``(X1, (c1, t1), (c2, t2))``."""
    cols = real[None, :]
    xj = X.sum(axis=0)
    xB = (X * big).sum(axis=0)
    c1, t1 = _moves_rule1(X, big, red, cols)
    c2, t2 = _moves_rule2(X, big, red, cols, xB, xj - xB)
    X1 = _apply_pairs(_apply_pairs(X, c1, t1), c2, t2)
    return X1, (c1, t1), (c2, t2)


def nup_preprocess(sol: AssignmentSolution, part: Partition, *, check: bool = True,
                   record: bool = True) -> tuple[AssignmentSolution, TransformTrace]:
    inst = sol.inst
    if check:
        bad = check_restrictions(sol)
        if bad:
            raise TransformError("restriction violated: " + "; ".join(bad))
    X1, r1, r2 = preprocess_arrays(sol.x, inst.big_mask, part.mask(inst.players), sol.real_mask)
    out = sol.replace_x(X1)
    trace = TransformTrace("big_small", st_before=st_prime_big_small(sol),
                           st_after=st_prime_big_small(out))
    if record:
        trace.moves = _pair_moves(inst, "pre_rule1", *r1) + _pair_moves(inst, "pre_rule2", *r2)
    return out, trace


def nup_main(x1: AssignmentSolution, part: Partition, Mset, *, mu: float | None = None
             ) -> tuple[AssignmentSolution, TransformTrace]:
    """Rule-2 moves restricted to ``Mset``, ratios from ``x1``.

    The final solution applies all moves at once.  For the trace the same
    moves are replayed one at a time in (item, giver, taker) order, charging
    ``dhat_minus`` to the giver's and ``dhat_plus`` to the taker's change in
    ``b B + (1 - b) S``.
    """
    inst = x1.inst
    red = part.mask(inst.players)
    trace = TransformTrace("big_small", st_before=st_prime_big_small(x1))
    if mu is not None:
        now = find_big_small(x1, mu)
        for j in sorted(set(Mset) - now, key=inst.item_index.get):
            trace.warnings.append(f"item {j} no longer in M({mu}) after preprocessing")
    cols = np.zeros(len(inst.items), dtype=bool)
    for j in Mset:
        cols[inst.item_index[j]] = True
    cols &= x1.real_mask
    X = x1.x
    big = inst.big_mask
    xj = X.sum(axis=0)
    xB = (X * big).sum(axis=0)
    c2, t2 = _moves_rule2(X, big, red, cols[None, :], xB, xj - xB)
    X2 = _apply_pairs(X, c2, t2)
    out = x1.replace_x(X2)
    trace.st_after = st_prime_big_small(out)

    # sequential replay for the per-move gain terms
    B = inst.budget_vector
    P = inst.price_matrix
    Y = X.copy()

    def st_i(i):
        b = (Y[i] * big[i]).sum()
        S = (Y[i] * P[i] * ~big[i]).sum()
        return b * B[i] + (1 - b) * S

    for m in _pair_moves(inst, "main", c2, t2):
        a, b, k = inst.player_index[m.giver], inst.player_index[m.taker], inst.item_index[m.item]
        s0 = st_i(a)
        Y[a, k] -= m.delta
        dm = st_i(a) - s0
        s0 = st_i(b)
        Y[b, k] += m.delta
        dp = st_i(b) - s0
        trace.moves.append(Move("main", m.item, m.giver, m.taker, m.delta,
                                dhat_minus=float(dm), dhat_plus=float(dp)))
    return out, trace


def nup_bi_oracle(sol: AssignmentSolution) -> np.ndarray:
    """Per-player lower bound ``m_i`` on ``E[b1_i - b_i | i red]``:
    ``sum_{j big for i} p_j [x_ij/200 (xB_j - x_ij)/x_j + x_ij/200 xS_j] / B_i``."""
    inst = sol.inst
    X, big, P = sol.x, inst.big_mask, inst.price_matrix
    x, xB, xS = big_small_masses(sol)
    real = sol.real_mask[None, :]
    with np.errstate(invalid="ignore", divide="ignore"):
        term = X / 200 * (xB[None, :] - X) / np.where(x > 0, x, 1.0)[None, :] + X / 200 * xS[None, :]
    term = np.where(big & real & (X > 0), term * P, 0.0)
    return term.sum(axis=1) / inst.budget_vector
