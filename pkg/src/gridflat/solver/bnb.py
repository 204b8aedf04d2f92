"""Best-bound branch-and-bound over the binary columns of a MilpProblem."""

from __future__ import annotations

import heapq
import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .dual import DualSimplex
from .simplex import LpData, certified

INT_TOL = 1e-6
# nodes between LP-based rounding attempts (the root always gets one)
HEURISTIC_EVERY = 8


@dataclass(frozen=True)
class BnbStats:
    nodes_explored: int = 0
    nodes_pruned: int = 0
    incumbent_updates: int = 0
    gap: float = 0.0


@dataclass(frozen=True)
class MilpSolution:
    status: str
    objective: float
    primal: Optional[np.ndarray]
    stats: BnbStats
    lp_iterations: int = 0
    root_bound: float = math.nan
    # Whether the root relaxation already had integral binaries.
    root_integral: bool = True

    @property
    def ok(self) -> bool:
        return self.status == "optimal"


def _fractionality(x, bins):
    v = x[bins]
    return np.minimum(v - np.floor(v), np.ceil(v) - v)


def _round_candidates(x, bins, frac):
    """Rounded copies of ``x``: nearest, then ceil, then floor on fractional binaries."""
    fr = bins[frac > INT_TOL]
    v = x[fr]
    out = []
    for rounded in (np.round(v), np.where(v > INT_TOL, 1.0, 0.0), np.where(v < 1 - INT_TOL, 0.0, 1.0)):
        y = x.copy()
        y[fr] = rounded
        y[bins] = np.round(y[bins])
        out.append(y)
    return out


def _packing_rows(data, bins):
    """Rows of the form ``sum of binaries <= 1`` as arrays of column indices."""
    is_bin = np.zeros(len(data.c), dtype=bool)
    is_bin[bins] = True
    A = data.A.tocsr()
    out = []
    for i in np.flatnonzero((data.sense < 0) & (data.rhs == 1.0)):
        cols = A.indices[A.indptr[i]:A.indptr[i + 1]]
        vals = A.data[A.indptr[i]:A.indptr[i + 1]]
        if len(cols) > 1 and np.all(is_bin[cols]) and np.all(vals == 1.0):
            out.append(np.sort(cols))
    return out


def _packing_round(x, bins, packs):
    """Up-round fractional binaries, except that each packing row keeps only its largest member."""
    y = x.copy()
    y[bins] = np.where(x[bins] > INT_TOL, 1.0, 0.0)
    for cols in packs:
        v = x[cols]
        if np.all(v <= INT_TOL):
            continue
        y[cols] = 0.0
        y[cols[np.argmax(v)]] = 1.0
    return y


def solve_milp(problem, node_limit: int = 10_000, trace: Optional[Callable[[str], None]] = None,
               rounding: bool = True) -> MilpSolution:
    """Minimise ``problem`` with its binary columns enforced.

    Branches on the most fractional binary (lowest column on ties) and
    always expands the open node with the smallest LP bound, deepest first
    among equal bounds. A rounding check on each node's relaxation, plus a
    periodic LP with rounded binaries held fixed, supplies incumbents; the
    final answer is re-solved as an LP with the binaries fixed so it is a
    vertex.
    """
    if node_limit < 1:
        raise ValueError("node_limit must be >= 1")
    data = LpData.from_problem(problem)
    bins = problem.binary_indices
    lb0, ub0 = data.lb.copy(), data.ub.copy()
    iters = 0
    explored = pruned = updates = 0

    dual = DualSimplex(data)

    def lp(lb, ub, start=None, count=True):
        """Node LP: dual simplex from ``start`` when given and it works, cold primal otherwise."""
        nonlocal iters, explored
        explored += count
        if start is not None:
            warm = dual.solve(lb, ub, start)
            if warm is not None:
                sol, basis = warm
                iters += sol.iterations
                if not sol.ok or data.max_violation(sol.primal, lb, ub) <= data.certify_tol(sol.primal):
                    return sol, basis
        sol, basis = data.solve_with_basis(lb, ub)
        sol = certified(data, sol, lb, ub)
        iters += sol.iterations
        return sol, basis

    root, root_basis = lp(lb0, ub0)
    if not root.ok:
        stats = BnbStats(explored, 0, 0, 0.0)
        return MilpSolution(root.status, root.objective, None, stats, iters, root.objective, True)
    frac = _fractionality(root.primal, bins)
    root_integral = not bool(np.any(frac > INT_TOL))
    if trace:
        trace(f"node 0 depth 0 bound {root.objective:.9g} incumbent inf")
    if root_integral:
        return MilpSolution("optimal", root.objective, root.primal, BnbStats(1, 0, 1, 0.0),
                            iters, root.objective, True)

    inc_x, inc_obj, inc_vertex = None, math.inf, False
    packs = _packing_rows(data, bins)

    def prune_level():
        return inc_obj - 1e-9 * (1.0 + abs(inc_obj))

    def try_round(x, frac, start):
        nonlocal inc_x, inc_obj, inc_vertex, updates
        if not rounding:
            return
        cands = _round_candidates(x, bins, frac)
        for y in cands:
            if data.max_violation(y) <= data.certify_tol(y):
                obj = float(data.c @ y)
                if obj < inc_obj - 1e-12 * (1.0 + abs(obj)):
                    inc_x, inc_obj, inc_vertex = y, obj, False
                    updates += 1
                return
        if explored % HEURISTIC_EVERY != 1:
            return
        # no rounding is feasible as it stands; let the continuous part adapt
        lb, ub = lb0.copy(), ub0.copy()
        lb[bins] = ub[bins] = _packing_round(x, bins, packs)[bins]
        sol, _ = lp(lb, ub, start, count=False)
        if sol.ok and sol.objective < inc_obj - 1e-12 * (1.0 + abs(sol.objective)):
            inc_x, inc_obj, inc_vertex = sol.primal, sol.objective, True
            updates += 1

    try_round(root.primal, frac, root_basis)
    counter = 0
    heap = [(root.objective, 0, counter, lb0, ub0, root.primal, root_basis)]
    limit_hit = False
    while heap:
        bound, negdepth, _, lb, ub, x, basis = heapq.heappop(heap)
        depth = -negdepth
        if bound >= prune_level():
            pruned += 1
            continue
        frac = _fractionality(x, bins)
        j = int(bins[np.argmax(frac)])
        for val in (1.0, 0.0):
            if explored >= node_limit:
                limit_hit = True
                heapq.heappush(heap, (bound, negdepth, -1, lb, ub, x, basis))
                break
            clb, cub = lb.copy(), ub.copy()
            clb[j] = cub[j] = val
            sol, cbasis = lp(clb, cub, basis)
            if trace:
                shown = sol.objective if sol.ok else math.inf
                trace(f"node {explored - 1} depth {depth + 1} bound {shown:.9g} incumbent {inc_obj:.9g}")
            if not sol.ok or sol.objective >= prune_level():
                pruned += 1
                continue
            cfrac = _fractionality(sol.primal, bins)
            if not np.any(cfrac > INT_TOL):
                inc_x, inc_obj, inc_vertex = sol.primal, sol.objective, True
                updates += 1
                continue
            try_round(sol.primal, cfrac, cbasis)
            counter += 1
            heapq.heappush(heap, (sol.objective, -(depth + 1), counter, clb, cub, sol.primal, cbasis))
        if limit_hit:
            break

    open_bound = min((h[0] for h in heap), default=math.inf)
    if inc_x is not None and not inc_vertex:
        lb, ub = lb0.copy(), ub0.copy()
        lb[bins] = ub[bins] = np.round(inc_x[bins])
        sol = certified(data, data.solve(lb, ub), lb, ub)
        iters += sol.iterations
        if sol.ok and sol.objective <= inc_obj + 1e-9 * (1.0 + abs(inc_obj)):
            inc_x, inc_obj = sol.primal, sol.objective
    if inc_x is None:
        status = "node_limit" if limit_hit else "infeasible"
        stats = BnbStats(explored, pruned, updates, math.inf)
        return MilpSolution(status, math.inf, None, stats, iters, root.objective, root_integral)
    gap = max(0.0, inc_obj - open_bound) if limit_hit else 0.0
    status = "node_limit" if limit_hit and gap > 1e-9 * (1.0 + abs(inc_obj)) else "optimal"
    if status == "optimal":
        gap = 0.0
    stats = BnbStats(explored, pruned, updates, gap)
    return MilpSolution(status, inc_obj, inc_x, stats, iters, root.objective, root_integral)
