"""Bounded-variable primal simplex.

Every row ``a_i x  (<=|=|>=)  b_i`` gets a logical ``s_i`` so that
``A x + s = b`` with ``s_i`` in ``[0, inf)``, ``[0, 0]`` or ``(-inf, 0]``.
Rows whose logical cannot start feasible receive an artificial; phase 1
drives the artificials to zero, phase 2 optimises the real cost.

The basis inverse is held either as an explicit dense matrix (small
problems) or as a sparse LU plus product-form eta file.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu

INF = math.inf

FEAS_TOL = 1e-7
OPT_TOL = 1e-9
PIV_TOL = 1e-9
STALL_LIMIT = 1000
REFACTOR_EVERY = 64
DENSE_ROWS = 250


class NumericalError(RuntimeError):
    """Simplex breakdown: singular basis, iteration cap, or a returned point
    that fails the independent feasibility check."""


@dataclass(frozen=True)
class Basis:
    """Basic columns of ``[x | s]`` for ``A x + s = b`` and the point they produce."""

    basis: np.ndarray
    point: np.ndarray


@dataclass(frozen=True)
class LpSolution:
    status: str
    objective: float
    primal: np.ndarray
    iterations: int

    @property
    def ok(self) -> bool:
        return self.status == "optimal"


class _DenseInverse:
    def __init__(self, B):
        try:
            self.binv = np.linalg.inv(B)
        except np.linalg.LinAlgError as exc:
            raise NumericalError("singular basis") from exc
        if not np.all(np.isfinite(self.binv)):
            raise NumericalError("singular basis")
        self.updates = 0

    def ftran(self, v):
        return self.binv @ v

    def btran(self, v):
        return v @ self.binv

    def update(self, p, alpha):
        row = self.binv[p] / alpha[p]
        self.binv -= np.outer(alpha, row)
        self.binv[p] = row
        self.updates += 1


class _LuEta:
    def __init__(self, B):
        try:
            self.lu = splu(sp.csc_matrix(B), permc_spec="COLAMD")
        except RuntimeError as exc:
            raise NumericalError(f"singular basis: {exc}") from exc
        self.etas = []
        self.updates = 0

    def ftran(self, v):
        z = self.lu.solve(np.asarray(v, dtype=float))
        for p, a in self.etas:
            zp = z[p] / a[p]
            z -= a * zp
            z[p] = zp
        return z

    def btran(self, v):
        w = np.array(v, dtype=float)
        for p, a in reversed(self.etas):
            w[p] = (w[p] - (a @ w - a[p] * w[p])) / a[p]
        return self.lu.solve(w, trans="T")

    def update(self, p, alpha):
        self.etas.append((p, alpha.copy()))
        self.updates += 1


class _Tableau:
    """Column access and products for ``[A | I | artificials]``."""

    def __init__(self, A, art_rows, art_sign):
        self.A = A
        self.dense = isinstance(A, np.ndarray)
        self.m, self.n = A.shape
        self.art_rows = art_rows
        self.art_sign = art_sign
        if not self.dense:
            self.csc = A.tocsc()
            self.csc.sort_indices()
            self.At = self.csc.T.tocsr()

    @property
    def N(self):
        return self.n + self.m + len(self.art_rows)

    def column(self, j):
        col = np.zeros(self.m)
        if j < self.n:
            if self.dense:
                return self.A[:, j].astype(float, copy=True)
            lo, hi = self.csc.indptr[j], self.csc.indptr[j + 1]
            col[self.csc.indices[lo:hi]] = self.csc.data[lo:hi]
        elif j < self.n + self.m:
            col[j - self.n] = 1.0
        else:
            k = j - self.n - self.m
            col[self.art_rows[k]] = self.art_sign[k]
        return col

    def matvec(self, x):
        out = self.A @ x[: self.n] + x[self.n: self.n + self.m]
        if len(self.art_rows):
            np.add.at(out, self.art_rows, self.art_sign * x[self.n + self.m:])
        return out

    def rmatvec(self, y):
        d = np.empty(self.N)
        d[: self.n] = (self.A.T @ y) if self.dense else (self.At @ y)
        d[self.n: self.n + self.m] = y
        d[self.n + self.m:] = self.art_sign * y[self.art_rows]
        return d

    def basis_matrix(self, basis):
        if self.dense or self.m <= DENSE_ROWS:
            B = np.zeros((self.m, self.m))
            for k, j in enumerate(basis):
                B[:, k] = self.column(j)
            return B
        rows, cols, vals = [], [], []
        for k, j in enumerate(basis):
            if j < self.n:
                lo, hi = self.csc.indptr[j], self.csc.indptr[j + 1]
                rows.extend(self.csc.indices[lo:hi])
                vals.extend(self.csc.data[lo:hi])
                cols.extend([k] * (hi - lo))
            elif j < self.n + self.m:
                rows.append(j - self.n)
                vals.append(1.0)
                cols.append(k)
            else:
                a = j - self.n - self.m
                rows.append(self.art_rows[a])
                vals.append(self.art_sign[a])
                cols.append(k)
        return sp.csc_matrix((vals, (rows, cols)), shape=(self.m, self.m))


def _factor(tab, basis):
    B = tab.basis_matrix(basis)
    if isinstance(B, np.ndarray):
        return _DenseInverse(B)
    return _LuEta(B)


def simplex(c, A, b, sense, lb, ub, max_iter=None):
    """Minimise ``c @ x`` subject to ``A x (sense) b`` and ``lb <= x <= ub``.

    ``sense`` holds -1 for ``<=``, 0 for ``=`` and +1 for ``>=``.
    Returns ``(status, x, iterations, basis)``; ``basis`` indexes
    ``[x | logicals | artificials]`` and is None unless optimal.
    """
    m, n = A.shape
    b = np.asarray(b, dtype=float)
    lb = np.asarray(lb, dtype=float)
    ub = np.asarray(ub, dtype=float)
    if np.any(lb > ub):
        return "infeasible", None, 0, None

    x_s = np.where(np.isfinite(lb), lb, np.where(np.isfinite(ub), ub, 0.0))
    s_lb = np.where(sense > 0, -INF, 0.0)
    s_ub = np.where(sense < 0, INF, 0.0)
    resid = b - (A @ x_s) if n else b.copy()
    s_val = np.clip(resid, s_lb, s_ub)
    gap = resid - s_val
    scale_b = 1.0 + (np.max(np.abs(b)) if m else 0.0)
    needs_art = np.abs(gap) > FEAS_TOL * scale_b * 1e-3
    art_rows = np.flatnonzero(needs_art)
    art_sign = np.sign(gap[art_rows])
    na = len(art_rows)

    tab = _Tableau(A, art_rows, art_sign)
    N = tab.N
    L = np.concatenate([lb, s_lb, np.zeros(na)])
    U = np.concatenate([ub, s_ub, np.full(na, INF)])
    x = np.concatenate([x_s, np.where(needs_art, s_val, resid), np.abs(gap[art_rows])])
    basis = np.arange(n, n + m)
    basis[art_rows] = n + m + np.arange(na)
    is_basic = np.zeros(N, dtype=bool)
    is_basic[basis] = True

    cost2 = np.concatenate([np.asarray(c, dtype=float), np.zeros(m + na)])
    cost1 = np.zeros(N)
    cost1[n + m:] = 1.0

    if max_iter is None:
        max_iter = 50 * (m + n) + 1000
    iters = 0
    factor = _factor(tab, basis)

    def refactor():
        nonlocal factor
        factor = _factor(tab, basis)
        xn = x.copy()
        xn[basis] = 0.0
        x[basis] = factor.ftran(b - tab.matvec(xn))

    def run(cost, phase):
        nonlocal iters
        dtol = OPT_TOL * (1.0 + np.max(np.abs(cost)))
        stall = 0
        bland = False
        while True:
            if phase == 1 and x[n + m:].sum() <= FEAS_TOL * scale_b * 1e-3:
                return "optimal"
            if iters >= max_iter:
                raise NumericalError(f"iteration limit {max_iter} reached in phase {phase}")
            y = factor.btran(cost[basis])
            d = cost - tab.rmatvec(y)
            elig = ~is_basic & (((d < -dtol) & (x < U)) | ((d > dtol) & (x > L)))
            cand = np.flatnonzero(elig)
            if cand.size == 0:
                return "optimal"
            if bland:
                q = int(cand[0])
            else:
                q = int(cand[np.argmax(np.abs(d[cand]))])
            dirn = 1.0 if d[q] < 0 else -1.0
            alpha = factor.ftran(tab.column(q))
            g = dirn * alpha
            xb, lB, uB = x[basis], L[basis], U[basis]
            ratio = np.full(m, INF)
            # pivots are judged relative to the column so roundoff is never chosen
            ptol = PIV_TOL * max(1.0, float(np.max(np.abs(g), initial=0.0)))
            dec = (g > ptol) & np.isfinite(lB)
            inc = (g < -ptol) & np.isfinite(uB)
            ratio[dec] = (xb[dec] - lB[dec]) / g[dec]
            ratio[inc] = (uB[inc] - xb[inc]) / -g[inc]
            np.maximum(ratio, 0.0, out=ratio)
            rmin = ratio.min() if m else INF
            flip = U[q] - L[q]
            iters += 1
            if flip <= rmin:
                if not math.isfinite(flip):
                    if phase == 1:
                        raise NumericalError("phase 1 reported unbounded")
                    return "unbounded"
                delta = flip
                x[q] = U[q] if dirn > 0 else L[q]
                x[basis] = xb - delta * g
                p = -1
            else:
                delta = rmin
                ties = np.flatnonzero(ratio <= rmin + 1e-12 + 1e-9 * rmin)
                if not bland and ties.size > 1:
                    big = np.abs(g[ties])
                    ties = ties[big >= 0.1 * big.max()]
                p = int(ties[np.argmin(basis[ties])])
                leave = basis[p]
                x[q] += dirn * delta
                x[basis] = xb - delta * g
                x[leave] = lB[p] if g[p] > 0 else uB[p]
                basis[p] = q
                is_basic[leave] = False
                is_basic[q] = True
                factor.update(p, alpha)
                if factor.updates >= REFACTOR_EVERY:
                    refactor()
            if delta <= 1e-12:
                stall += 1
                if stall >= STALL_LIMIT:
                    bland = True
            else:
                stall = 0
                bland = False

    if na:
        run(cost1, 1)
        refactor()
        if x[n + m:].sum() > FEAS_TOL * scale_b:
            return "infeasible", None, iters, None
        U[n + m:] = 0.0
        nb = ~is_basic
        nb[: n + m] = False
        x[nb] = 0.0
    status = run(cost2, 2)
    if status != "optimal":
        return status, None, iters, None
    refactor()
    x[basis] += factor.ftran(b - tab.matvec(x))
    # an artificial left basic at zero stands in for its row's logical
    arts = basis >= n + m
    basis[arts] = n + art_rows[basis[arts] - n - m]
    return "optimal", x[:n].copy(), iters, basis


@dataclass
class LpData:
    """Arrays of a problem, prepared once and re-solved under bound changes."""

    c: np.ndarray
    A: sp.csc_matrix
    sense: np.ndarray
    rhs: np.ndarray
    lb: np.ndarray
    ub: np.ndarray

    @classmethod
    def from_problem(cls, problem):
        c, A, sense, rhs, lb, ub = problem.arrays
        return cls(c, A.tocsc(), sense, rhs, lb, ub)

    def solve(self, lb=None, ub=None, max_iter=None) -> LpSolution:
        return self.solve_with_basis(lb, ub, max_iter)[0]

    def solve_with_basis(self, lb=None, ub=None, max_iter=None):
        """Like :meth:`solve`, also returning the optimal :class:`Basis` (or None)."""
        lb = self.lb if lb is None else np.asarray(lb, dtype=float)
        ub = self.ub if ub is None else np.asarray(ub, dtype=float)
        n = len(self.c)
        if np.any(lb > ub):
            return LpSolution("infeasible", INF, np.full(n, np.nan), 0), None

        # presolve: substitute fixed columns, drop rows left empty
        fixed = lb == ub
        free = np.flatnonzero(~fixed)
        A = self.A
        rhs = self.rhs - A[:, fixed] @ lb[fixed] if fixed.any() else self.rhs.copy()
        Ar = A[:, free].tocsr()
        nnz = np.diff(Ar.indptr)
        empty = nnz == 0
        rows = np.arange(len(rhs))
        if empty.any():
            r = -rhs[empty]
            s = self.sense[empty]
            tol = FEAS_TOL * (1.0 + np.abs(rhs[empty]))
            bad = ((s < 0) & (r > tol)) | ((s > 0) & (r < -tol)) | ((s == 0) & (np.abs(r) > tol))
            if bad.any():
                return LpSolution("infeasible", INF, np.full(n, np.nan), 0), None
            keep = ~empty
            Ar, rhs, sense, rows = Ar[keep], rhs[keep], self.sense[keep], rows[keep]
        else:
            sense = self.sense
        m, k = Ar.shape
        Ause = Ar.toarray() if m * k <= 60_000 else Ar
        status, xr, iters, basis = simplex(self.c[free], Ause, rhs, sense, lb[free], ub[free], max_iter)
        if status != "optimal":
            obj = -INF if status == "unbounded" else INF
            return LpSolution(status, obj, np.full(n, np.nan), iters), None
        x = lb.copy()
        x[free] = xr
        # map the reduced basis back: structurals by column, logicals by row,
        # and every dropped row keeps its own logical basic
        full = np.empty(len(basis), dtype=int)
        structural = basis < k
        full[structural] = free[basis[structural]]
        full[~structural] = n + rows[basis[~structural] - k]
        dropped = n + np.flatnonzero(empty)
        point = np.concatenate([x, self.rhs - self.A @ x])
        sol = LpSolution("optimal", float(self.c @ x), x, iters)
        return sol, Basis(np.concatenate([full, dropped]), point)

    def max_violation(self, x, lb=None, ub=None) -> float:
        lb = self.lb if lb is None else lb
        ub = self.ub if ub is None else ub
        worst = max(float(np.max(lb - x, initial=0.0)), float(np.max(x - ub, initial=0.0)))
        if len(self.rhs):
            r = self.A @ x - self.rhs
            s = self.sense
            v = np.where(s < 0, np.maximum(r, 0), np.where(s > 0, np.maximum(-r, 0), np.abs(r)))
            worst = max(worst, float(v.max()))
        return worst

    def certify_tol(self, x) -> float:
        big = max(1.0, float(np.max(np.abs(self.rhs), initial=0.0)), float(np.max(np.abs(x), initial=0.0)))
        return FEAS_TOL * big


def certified(data: LpData, sol: LpSolution, lb=None, ub=None) -> LpSolution:
    """Re-check an optimal point against the original rows and bounds."""
    if sol.ok:
        viol = data.max_violation(sol.primal, lb, ub)
        if viol > data.certify_tol(sol.primal):
            raise NumericalError(f"returned point violates constraints by {viol:.3g}")
    return sol


def solve_lp(problem, *, lb=None, ub=None, max_iter=None) -> LpSolution:
    """Solve the continuous relaxation of ``problem`` (binary markers ignored).

    ``lb``/``ub`` override the variable bounds without rebuilding the problem.
    """
    data = LpData.from_problem(problem)
    return certified(data, data.solve(lb, ub, max_iter), lb, ub)
