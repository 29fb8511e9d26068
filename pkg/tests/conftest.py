from __future__ import annotations

import numpy as np
import pytest
from scipy.optimize import linprog

from mba.instance import gen_random_instance

ACCEPTANCE_LINES: dict[int, str] = {}


def random_suite(n: int = 100, seed0: int = 0):
    """Instances with at most 5 players and 10 items, alternating price models."""
    out = []
    for s in range(seed0, seed0 + n):
        n_players = 2 + s % 4
        n_items = 3 + (7 * s) % 8
        model = "general" if s % 2 else "uniform_prices"
        out.append(gen_random_instance(s, n_players, n_items, model))
    return out


def assignment_lp_oracle(inst) -> float:
    """Assignment-LP optimum through scipy's HiGHS, independent of the in-house simplex."""
    n, m = inst.shape
    pairs = list(zip(*np.nonzero(inst.mask)))
    nv = len(pairs) + n
    c = np.r_[np.zeros(len(pairs)), -np.ones(n)]
    A, b = [], []
    P = inst.price_matrix
    for i in range(n):
        row = np.zeros(nv); row[len(pairs) + i] = 1.0
        A.append(row); b.append(inst.budget_vector[i])
        row = np.zeros(nv); row[len(pairs) + i] = 1.0
        for k, (ii, j) in enumerate(pairs):
            if ii == i:
                row[k] = -P[i, j]
        A.append(row); b.append(0.0)
    for j in range(m):
        row = np.zeros(nv)
        for k, (_, jj) in enumerate(pairs):
            if jj == j:
                row[k] = 1.0
        A.append(row); b.append(1.0)
    res = linprog(c, A_ub=np.array(A), b_ub=np.array(b), bounds=(0, None), method="highs")
    assert res.status == 0
    return -res.fun


@pytest.fixture(scope="session")
def suite100():
    return random_suite(100)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for k in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[k])
