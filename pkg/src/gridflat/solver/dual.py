"""Bounded dual simplex used to re-solve branch-and-bound nodes from a parent basis.

A child node differs from its parent only in a few variable bounds, so the
parent's optimal basis stays dual feasible and a handful of dual pivots
usually restore primal feasibility. Any breakdown is reported as ``None``
and the caller falls back to the cold primal simplex.
"""

from __future__ import annotations

import copy
from collections import OrderedDict
import numpy as np

from .simplex import INF, Basis, OPT_TOL, PIV_TOL, REFACTOR_EVERY, LpData, LpSolution, NumericalError, \
    _DenseInverse, _Tableau, _factor

CACHE_SIZE = 128


class DualSimplex:
    """Re-solvable form ``A x + s = b`` of an :class:`LpData`."""

    def __init__(self, data: LpData):
        self.data = data
        m, n = data.A.shape
        self.m, self.n = m, n
        A = data.A.toarray() if m * n <= 60_000 else data.A
        self.tab = _Tableau(A, np.zeros(0, dtype=int), np.zeros(0))
        s = data.sense
        self.s_lb = np.where(s > 0, -INF, 0.0)
        self.s_ub = np.where(s < 0, INF, 0.0)
        self.b = np.asarray(data.rhs, dtype=float)
        self.cost = np.concatenate([data.c, np.zeros(m)])
        self.dtol = OPT_TOL * (1.0 + float(np.max(np.abs(data.c), initial=0.0)))
        self.ptol = 1e-9 * (1.0 + float(np.max(np.abs(self.b), initial=0.0)))
        self.max_iter = 20 * (m + n) + 200
        self._cache = OrderedDict()

    def _factor(self, basis):
        """Factor ``basis``, reusing a recent exact factorisation of the same columns."""
        key = basis.tobytes()
        hit = self._cache.get(key)
        if hit is not None:
            self._cache.move_to_end(key)
            return copy.deepcopy(hit)
        return _factor(self.tab, basis)

    def _remember(self, basis, factor):
        if factor.updates == 0 and isinstance(factor, _DenseInverse):
            self._cache[basis.tobytes()] = copy.deepcopy(factor)
            if len(self._cache) > CACHE_SIZE:
                self._cache.popitem(last=False)

    def solve(self, lb, ub, start: Basis):
        """Return ``(LpSolution, Basis)`` or ``None`` when the warm start fails."""
        try:
            return self._solve(np.asarray(lb, dtype=float), np.asarray(ub, dtype=float), start)
        except (NumericalError, FloatingPointError, np.linalg.LinAlgError):
            return None

    def _solve(self, lb, ub, start):
        n, m, tab = self.n, self.m, self.tab
        if np.any(lb > ub):
            return LpSolution("infeasible", INF, np.full(n, np.nan), 0), start
        L = np.concatenate([lb, self.s_lb])
        U = np.concatenate([ub, self.s_ub])
        basis = start.basis.copy()
        x = start.point.copy()
        is_basic = np.zeros(n + m, dtype=bool)
        is_basic[basis] = True
        factor = self._factor(basis)
        cost = self.cost

        def reduced():
            return cost - tab.rmatvec(factor.btran(cost[basis]))

        # place nonbasics on the bound their reduced cost asks for
        d = reduced()
        nb = ~is_basic
        lo_ok, hi_ok = np.isfinite(L), np.isfinite(U)
        want_lo = nb & (d > self.dtol)
        want_hi = nb & (d < -self.dtol)
        if np.any(want_lo & ~lo_ok & (L < U)) or np.any(want_hi & ~hi_ok & (L < U)):
            return None
        x[want_lo] = L[want_lo]
        x[want_hi] = U[want_hi]
        rest = nb & ~want_lo & ~want_hi & (lo_ok | hi_ok) & (x != L) & (x != U)
        x[rest] = np.where(lo_ok[rest], L[rest], U[rest])
        fixed = nb & (L == U)
        x[fixed] = L[fixed]

        def basics():
            xn = x.copy()
            xn[basis] = 0.0
            x[basis] = factor.ftran(self.b - tab.matvec(xn))

        basics()
        iters = 0
        while True:
            xb, lB, uB = x[basis], L[basis], U[basis]
            low = lB - xb
            high = xb - uB
            infeas = np.maximum(low, high)
            r = int(np.argmax(infeas))
            if infeas[r] <= self.ptol:
                break
            if iters >= self.max_iter:
                return None
            iters += 1
            to_lower = low[r] > high[r]
            e = np.zeros(m)
            e[r] = 1.0
            rho = factor.btran(e)
            alpha_r = tab.rmatvec(rho)
            d = reduced()
            # the leaving value must rise (to_lower) or fall; dx_B[r]/dx_j = -alpha_r[j]
            sgn = -1.0 if to_lower else 1.0
            a = sgn * alpha_r
            at_lo = x <= L
            at_hi = x >= U
            movable = ~is_basic & (L < U)
            apt = PIV_TOL * max(1.0, float(np.max(np.abs(alpha_r[movable]), initial=0.0)))
            up = movable & ~at_hi & (a > apt)
            down = movable & ~at_lo & (a < -apt)
            cand = np.flatnonzero(up | down)
            if cand.size == 0:
                return LpSolution("infeasible", INF, np.full(n, np.nan), iters), start
            ratio = np.abs(np.clip(np.where(up[cand], d[cand], -d[cand]), 0.0, None)) / np.abs(a[cand])
            best = ratio.min()
            ties = cand[ratio <= best + 1e-12 + 1e-9 * best]
            big = np.abs(alpha_r[ties])
            ties = ties[big >= 0.1 * big.max()]
            q = int(ties[0])
            leave = basis[r]
            x[leave] = lB[r] if to_lower else uB[r]
            alpha = factor.ftran(tab.column(q))
            basis[r] = q
            is_basic[leave] = False
            is_basic[q] = True
            factor.update(r, alpha)
            if factor.updates >= REFACTOR_EVERY:
                factor = _factor(tab, basis)
            basics()

        if factor.updates:
            factor = _factor(tab, basis)
            basics()
        self._remember(basis, factor)
        d = reduced()
        nbm = ~is_basic & (L < U)
        bad = nbm & (((d < -self.dtol) & (x < U)) | ((d > self.dtol) & (x > L)))
        if bad.any():
            return None
        primal = x[:n].copy()
        sol = LpSolution("optimal", float(self.data.c @ primal), primal, iters)
        return sol, Basis(basis, x)
