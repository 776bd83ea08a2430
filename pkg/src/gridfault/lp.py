"""Self-contained linear-program solver and alternative-system feasibility
tester.

The solver is a bounded-variable revised simplex with Bland's anti-cycling
rule and a dense (LAPACK) basis factorization, two-phase with artificial
variables. Problem sizes here stay small (tens to low hundreds of rows), so
robustness and bit-for-bit determinism are preferred over sparse machinery.
Columns are pre-scaled by their infinity norms to tame the wide dynamic range
of 1/r_e weights.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla

from .errors import NumericalBreakdown

FEAS_TOL = 1e-8       # feasibility tolerance (phase-1 objective, residuals)
BOUND_TOL = 1e-9      # bound respect on returned solutions
DUAL_TOL = 1e-9       # reduced-cost threshold for entering candidates
RATIO_TOL = 1e-9      # pivot eligibility in the ratio test
SINGULAR_TOL = 1e-12  # basis LU diagonal threshold
ALT_MARGIN = 1e-8     # strict-inequality margin for the alternative system

_AT_LOWER, _AT_UPPER, _FREE, _BASIC = 0, 1, 2, 3


@dataclass
class LpProblem:
    """min c@x  s.t.  a_eq@x = b_eq,  a_le@x <= b_le,  lower <= x <= upper."""

    c: np.ndarray
    a_eq: np.ndarray | None = None
    b_eq: np.ndarray | None = None
    a_le: np.ndarray | None = None
    b_le: np.ndarray | None = None
    lower: np.ndarray | None = None
    upper: np.ndarray | None = None

    def __post_init__(self):
        self.c = np.atleast_1d(np.asarray(self.c, dtype=float))
        n = self.c.size
        if not np.all(np.isfinite(self.c)):
            raise ValueError("objective coefficients must be finite")

        def block(a, b, name):
            if a is None:
                return np.zeros((0, n)), np.zeros(0)
            a = np.atleast_2d(np.asarray(a, dtype=float))
            b = np.atleast_1d(np.asarray(b, dtype=float))
            if a.shape[1] != n or a.shape[0] != b.size:
                raise ValueError(f"inconsistent {name} block shapes")
            return a, b

        self.a_eq, self.b_eq = block(self.a_eq, self.b_eq, "equality")
        self.a_le, self.b_le = block(self.a_le, self.b_le, "inequality")
        self.lower = (
            np.full(n, -np.inf) if self.lower is None
            else np.atleast_1d(np.asarray(self.lower, dtype=float))
        )
        self.upper = (
            np.full(n, np.inf) if self.upper is None
            else np.atleast_1d(np.asarray(self.upper, dtype=float))
        )
        if self.lower.size != n or self.upper.size != n:
            raise ValueError("bound vectors must match the variable count")
        if np.any(self.lower > self.upper):
            raise ValueError("lower bound exceeds upper bound")

    @property
    def n(self) -> int:
        return self.c.size


@dataclass
class LpOutcome:
    status: str                     # "optimal" | "infeasible" | "unbounded"
    x: np.ndarray | None = None
    objective: float | None = None
    max_residual: float = 0.0


class _Tableau:
    """Working state for one simplex run over A x = b, lo <= x <= up."""

    def __init__(self, A, b, lo, up):
        self.A = A
        self.b = b
        self.lo = lo
        self.up = up
        self.m, self.ntot = A.shape
        self.x = np.zeros(self.ntot)
        self.vstat = np.empty(self.ntot, dtype=np.int8)
        self.basis = np.empty(self.m, dtype=np.int64)

    def _factor(self):
        B = self.A[:, self.basis]
        lu, piv = sla.lu_factor(B, check_finite=False)
        diag = np.abs(np.diag(lu))
        if diag.size and diag.min() <= SINGULAR_TOL * max(1.0, diag.max()):
            raise NumericalBreakdown("singular basis (pivot below threshold)")
        return lu, piv

    def optimize(self, c: np.ndarray, max_iter: int) -> str:
        A, b, lo, up = self.A, self.b, self.lo, self.up
        enterable_range = (up - lo) > 0  # fixed variables never enter

        for _ in range(max_iter):
            lu_piv = self._factor()
            # refresh basic values from the nonbasic point (controls drift)
            x_nb = self.x.copy()
            x_nb[self.basis] = 0.0
            xb = sla.lu_solve(lu_piv, b - A @ x_nb, check_finite=False)
            self.x[self.basis] = xb

            y = sla.lu_solve(lu_piv, c[self.basis], trans=1, check_finite=False)
            d = c - A.T @ y

            nb_low = (self.vstat == _AT_LOWER) & (d < -DUAL_TOL) & enterable_range
            nb_up = (self.vstat == _AT_UPPER) & (d > DUAL_TOL) & enterable_range
            nb_free = (self.vstat == _FREE) & (np.abs(d) > DUAL_TOL)
            candidates = np.flatnonzero(nb_low | nb_up | nb_free)
            if candidates.size == 0:
                return "optimal"
            j = int(candidates[0])  # Bland: smallest index
            direction = 1.0 if (self.vstat[j] == _AT_LOWER or
                                (self.vstat[j] == _FREE and d[j] < 0)) else -1.0

            w = sla.lu_solve(lu_piv, A[:, j], check_finite=False)
            delta = -direction * w  # per-unit change of basic values

            best_t = up[j] - lo[j]  # bound flip distance (may be inf)
            leave_pos = -1
            leave_to = _AT_LOWER
            for i in range(self.m):
                di = delta[i]
                k = self.basis[i]
                if di < -RATIO_TOL:
                    if lo[k] == -np.inf:
                        continue
                    t = (self.x[k] - lo[k]) / (-di)
                    to = _AT_LOWER
                elif di > RATIO_TOL:
                    if up[k] == np.inf:
                        continue
                    t = (up[k] - self.x[k]) / di
                    to = _AT_UPPER
                else:
                    continue
                if t < best_t - RATIO_TOL:
                    best_t, leave_pos, leave_to = t, i, to
                elif t < best_t + RATIO_TOL and leave_pos >= 0 and k < self.basis[leave_pos]:
                    # Bland tie-break: smallest leaving variable index
                    best_t, leave_pos, leave_to = min(t, best_t), i, to

            if not np.isfinite(best_t):
                return "unbounded"
            t = max(best_t, 0.0)

            self.x[j] += direction * t
            self.x[self.basis] += delta * t
            if leave_pos < 0:
                # entering variable runs to its opposite bound; basis unchanged
                self.vstat[j] = _AT_UPPER if direction > 0 else _AT_LOWER
                self.x[j] = up[j] if direction > 0 else lo[j]
            else:
                k = self.basis[leave_pos]
                self.vstat[k] = leave_to
                self.x[k] = lo[k] if leave_to == _AT_LOWER else up[k]
                self.basis[leave_pos] = j
                self.vstat[j] = _BASIC
        raise NumericalBreakdown("simplex iteration limit reached")


def _solve_boundless(problem: LpProblem) -> LpOutcome:
    """No constraint rows: optimize each variable against its own bounds."""
    x = np.zeros(problem.n)
    for j in range(problem.n):
        lo, up, cj = problem.lower[j], problem.upper[j], problem.c[j]
        if cj > 0:
            if lo == -np.inf:
                return LpOutcome(status="unbounded")
            x[j] = lo
        elif cj < 0:
            if up == np.inf:
                return LpOutcome(status="unbounded")
            x[j] = up
        else:
            x[j] = lo if lo > -np.inf else (up if up < np.inf else 0.0)
    return LpOutcome(status="optimal", x=x, objective=float(problem.c @ x))


def solve(problem: LpProblem, max_iter: int | None = None) -> LpOutcome:
    """Deterministic two-phase bounded simplex. Repeated runs on identical
    input bytes produce identical output bytes (fixed pivot rule)."""
    n = problem.n
    m_eq = problem.a_eq.shape[0]
    m_le = problem.a_le.shape[0]
    m = m_eq + m_le
    if m == 0:
        return _solve_boundless(problem)

    A_rows = np.vstack([problem.a_eq, problem.a_le])
    b = np.concatenate([problem.b_eq, problem.b_le])

    # column scaling by infinity norms
    colmax = np.abs(A_rows).max(axis=0) if m else np.ones(n)
    scale = np.where(colmax > 1e-12, colmax, 1.0)
    A_s = A_rows / scale
    c_s = problem.c / scale
    lo_s = problem.lower * scale
    up_s = problem.upper * scale

    # slacks for <= rows, then artificials for every row
    ntot = n + m_le + m
    A = np.zeros((m, ntot))
    A[:, :n] = A_s
    if m_le:
        A[m_eq:, n:n + m_le] = np.eye(m_le)
    lo = np.concatenate([lo_s, np.zeros(m_le), np.zeros(m)])
    up = np.concatenate([up_s, np.full(m_le, np.inf), np.full(m, np.inf)])

    tab = _Tableau(A, b, lo, up)
    # start structurals/slacks at a finite bound (or 0 when free)
    for j in range(n + m_le):
        if lo[j] > -np.inf:
            tab.x[j] = lo[j]
            tab.vstat[j] = _AT_LOWER
        elif up[j] < np.inf:
            tab.x[j] = up[j]
            tab.vstat[j] = _AT_UPPER
        else:
            tab.x[j] = 0.0
            tab.vstat[j] = _FREE
    resid = b - A[:, :n + m_le] @ tab.x[:n + m_le]
    for i in range(m):
        j = n + m_le + i
        A[i, j] = 1.0 if resid[i] >= 0 else -1.0
        tab.x[j] = abs(resid[i])
        tab.vstat[j] = _BASIC
        tab.basis[i] = j

    if max_iter is None:
        max_iter = 200 * (m + ntot) + 2000

    c1 = np.zeros(ntot)
    c1[n + m_le:] = 1.0
    status = tab.optimize(c1, max_iter)
    if status != "optimal":
        raise NumericalBreakdown("phase 1 terminated abnormally")
    phase1_obj = float(c1 @ tab.x)
    if phase1_obj > FEAS_TOL * max(1.0, np.abs(b).max() if m else 1.0):
        return LpOutcome(status="infeasible")

    # pin artificials at zero for phase 2 (basic ones may linger, degenerate)
    tab.up[n + m_le:] = 0.0
    c2 = np.zeros(ntot)
    c2[:n] = c_s
    status = tab.optimize(c2, max_iter)
    if status == "unbounded":
        return LpOutcome(status="unbounded")

    x = tab.x[:n] / scale
    x = np.clip(x, problem.lower, problem.upper)
    res = 0.0
    if m_eq:
        res = max(res, float(np.abs(problem.a_eq @ x - problem.b_eq).max()))
    if m_le:
        res = max(res, float(np.maximum(problem.a_le @ x - problem.b_le, 0.0).max()))
    return LpOutcome(status="optimal", x=x, objective=float(problem.c @ x), max_residual=res)


def alternative_feasible(A: np.ndarray, g: np.ndarray) -> tuple[bool, np.ndarray | None]:
    """Decide whether there is z >= 0 with A z = 0 and g@z < 0.

    The feasible set is a cone, so the search is normalized by 1@z <= 1 and
    the system is declared feasible iff the minimized g@z falls below
    -ALT_MARGIN; the witness z is returned when it exists.
    """
    A = np.atleast_2d(np.asarray(A, dtype=float))
    g = np.atleast_1d(np.asarray(g, dtype=float))
    if A.shape[1] != g.size:
        raise ValueError("A and g are dimension-inconsistent")
    nz = g.size
    problem = LpProblem(
        c=g,
        a_eq=A,
        b_eq=np.zeros(A.shape[0]),
        a_le=np.ones((1, nz)),
        b_le=np.ones(1),
        lower=np.zeros(nz),
        upper=np.full(nz, np.inf),
    )
    out = solve(problem)
    if out.status != "optimal":  # z = 0 is always feasible and the set is bounded
        raise NumericalBreakdown(f"alternative-system LP ended with status {out.status}")
    if out.objective < -ALT_MARGIN:
        return True, out.x
    return False, None
