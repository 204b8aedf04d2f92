"""Exhaustive verification oracle: one LP per admissible binary pattern."""

from __future__ import annotations

import itertools
import math

import numpy as np

from .simplex import LpData, certified

PATTERN_LIMIT = 10**6

# charge-only, discharge-only, idle
PAIR_STATES = ((1.0, 0.0), (0.0, 1.0), (0.0, 0.0))


class PatternSpaceTooLarge(ValueError):
    pass


def mode_pairs(problem):
    """Split binaries into exclusive pairs (rows ``x_a + x_b <= 1``) and singles."""
    binary = {int(j) for j in problem.binary_indices}
    paired, pairs = set(), []
    for con in problem.constraints:
        if (con.sense == "<=" and con.rhs == 1.0 and len(con.cols) == 2
                and con.coefs == (1.0, 1.0) and set(con.cols) <= binary
                and not set(con.cols) & paired):
            pairs.append(tuple(con.cols))
            paired.update(con.cols)
    singles = sorted(binary - paired)
    return pairs, singles


def pattern_count(problem) -> int:
    pairs, singles = mode_pairs(problem)
    return 3 ** len(pairs) * 2 ** len(singles)


def enumerate_oracle(problem, limit: int = PATTERN_LIMIT):
    """Exact MILP optimum by brute force over mode patterns.

    Returns ``(objective, primal)``; ``(inf, None)`` if no pattern is feasible.
    """
    pairs, singles = mode_pairs(problem)
    count = 3 ** len(pairs) * 2 ** len(singles)
    if count > limit:
        raise PatternSpaceTooLarge(f"{count} mode patterns exceed the limit of {limit}")
    data = LpData.from_problem(problem)
    pair_cols = np.array([c for p in pairs for c in p], dtype=int)
    single_cols = np.array(singles, dtype=int)
    best_obj, best_x = math.inf, None
    choices = [PAIR_STATES] * len(pairs)
    for pattern in itertools.product(*choices):
        pair_vals = np.array([v for st in pattern for v in st])
        for svals in itertools.product((0.0, 1.0), repeat=len(singles)):
            lb, ub = data.lb.copy(), data.ub.copy()
            if len(pair_cols):
                lb[pair_cols] = ub[pair_cols] = pair_vals
            if len(single_cols):
                lb[single_cols] = ub[single_cols] = np.array(svals)
            sol = certified(data, data.solve(lb, ub), lb, ub)
            if sol.ok and sol.objective < best_obj - 1e-12 * (1.0 + abs(sol.objective)):
                best_obj, best_x = sol.objective, sol.primal
    return best_obj, best_x
