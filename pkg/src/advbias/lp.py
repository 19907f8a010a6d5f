"""Dense two-phase simplex for small linear programs.

Solves ``min c @ x`` subject to ``A_ub @ x <= b_ub``, ``A_eq @ x == b_eq``
and ``lo <= x <= hi``. Pivoting follows Bland's rule, so the method cannot
cycle; it is meant for a few dozen variables at most.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, InfeasibleLP, UnboundedLP

MAX_VARS = 32
TOL = 1e-9


@dataclass
class LPProblem:
    c: np.ndarray
    A_ub: np.ndarray | None = None
    b_ub: np.ndarray | None = None
    A_eq: np.ndarray | None = None
    b_eq: np.ndarray | None = None
    bounds: list | None = None  # per-variable (lo, hi); None means (0, inf)

    def __post_init__(self):
        self.c = np.asarray(self.c, dtype=float).ravel()
        n = self.c.shape[0]
        self.A_ub, self.b_ub = _rows(self.A_ub, self.b_ub, n, "inequality")
        self.A_eq, self.b_eq = _rows(self.A_eq, self.b_eq, n, "equality")
        if self.bounds is None:
            self.bounds = [(0.0, np.inf)] * n
        if len(self.bounds) != n:
            raise ConfigError("one (lo, hi) pair per variable is required")
        bounds = []
        for lo, hi in self.bounds:
            lo = -np.inf if lo is None else float(lo)
            hi = np.inf if hi is None else float(hi)
            if lo > hi:
                raise ConfigError(f"bound lo={lo} exceeds hi={hi}")
            bounds.append((lo, hi))
        self.bounds = bounds

    @property
    def n(self) -> int:
        return self.c.shape[0]


def _rows(A, b, n, what):
    if A is None:
        return np.zeros((0, n)), np.zeros(0)
    A = np.atleast_2d(np.asarray(A, dtype=float))
    b = np.asarray(b, dtype=float).ravel()
    if A.shape[1] != n or A.shape[0] != b.shape[0]:
        raise ConfigError(f"{what} constraint dimension mismatch")
    return A, b


@dataclass
class LPResult:
    x: np.ndarray
    fun: float


def solve_small_lp(problem: LPProblem) -> LPResult:
    """Return an optimal vertex of ``problem``.

    Raises
    ------
    InfeasibleLP, UnboundedLP
    """
    if problem.n > MAX_VARS:
        raise ConfigError(f"at most {MAX_VARS} variables are supported")
    n = problem.n
    # x = offset + T @ u with u >= 0
    cols, offset = [], np.zeros(n)
    extra_ub = []
    for j, (lo, hi) in enumerate(problem.bounds):
        e = np.zeros(n)
        e[j] = 1.0
        if np.isfinite(lo):
            offset[j] = lo
            cols.append(e)
            if np.isfinite(hi):
                extra_ub.append((len(cols) - 1, hi - lo))
        elif np.isfinite(hi):
            offset[j] = hi
            cols.append(-e)
            extra_ub.append(None)
        else:
            cols.extend([e, -e])
    T = np.array(cols).T
    nu = T.shape[1]

    A_ub = problem.A_ub @ T
    b_ub = problem.b_ub - problem.A_ub @ offset
    bound_rows = [(i, v) for i, v in (b for b in extra_ub if b is not None)]
    if bound_rows:
        B = np.zeros((len(bound_rows), nu))
        for r, (i, _) in enumerate(bound_rows):
            B[r, i] = 1.0
        A_ub = np.vstack([A_ub, B])
        b_ub = np.concatenate([b_ub, [v for _, v in bound_rows]])
    A_eq = problem.A_eq @ T
    b_eq = problem.b_eq - problem.A_eq @ offset

    m_ub, m_eq = A_ub.shape[0], A_eq.shape[0]
    # standard form: [A_ub I; A_eq 0] [u; slack] = b
    A = np.zeros((m_ub + m_eq, nu + m_ub))
    A[:m_ub, :nu] = A_ub
    A[:m_ub, nu:] = np.eye(m_ub)
    A[m_ub:, :nu] = A_eq
    b = np.concatenate([b_ub, b_eq])
    cost = np.concatenate([problem.c @ T, np.zeros(m_ub)])

    u = _two_phase(A, b, cost)[:nu]
    x = offset + T @ u
    return LPResult(x, float(problem.c @ x))


def _two_phase(A, b, cost):
    m, N = A.shape
    A = A.copy()
    b = b.copy()
    neg = b < 0
    A[neg] *= -1
    b[neg] *= -1

    # phase 1 tableau with one artificial per row
    tab = np.zeros((m + 1, N + m + 1))
    tab[:m, :N] = A
    tab[:m, N:N + m] = np.eye(m)
    tab[:m, -1] = b
    basis = list(range(N, N + m))
    tab[m, :] = 0.0
    tab[m, N:N + m] = 1.0
    for i in range(m):
        tab[m] -= tab[i]
    _run(tab, basis, N + m)
    if tab[m, -1] < -1e-7 * max(1.0, np.abs(b).max(initial=0.0)):
        raise InfeasibleLP("linear program is infeasible")

    # drive artificials out of the basis; drop redundant rows
    keep = []
    for i in range(m):
        if basis[i] >= N:
            row = tab[i, :N]
            j = next((j for j in range(N) if abs(row[j]) > TOL), None)
            if j is None:
                continue
            _pivot(tab, i, j)
            basis[i] = j
        keep.append(i)
    tab2 = np.zeros((len(keep) + 1, N + 1))
    tab2[:-1, :N] = tab[keep, :N]
    tab2[:-1, -1] = tab[keep, -1]
    basis = [basis[i] for i in keep]

    tab2[-1, :N] = cost
    tab2[-1, -1] = 0.0
    for i, j in enumerate(basis):
        if tab2[-1, j] != 0:
            tab2[-1] -= tab2[-1, j] * tab2[i]
    _run(tab2, basis, N)

    x = np.zeros(N)
    for i, j in enumerate(basis):
        x[j] = tab2[i, -1]
    return np.maximum(x, 0.0)


def _pivot(tab, r, j):
    tab[r] /= tab[r, j]
    for i in range(tab.shape[0]):
        if i != r and tab[i, j] != 0:
            tab[i] -= tab[i, j] * tab[r]


def _run(tab, basis, ncols):
    m = tab.shape[0] - 1
    for _ in range(50_000):
        red = tab[m, :ncols]
        entering = next((j for j in range(ncols) if red[j] < -TOL), None)
        if entering is None:
            return
        col = tab[:m, entering]
        best, leave = np.inf, None
        for i in range(m):
            if col[i] > TOL:
                ratio = tab[i, -1] / col[i]
                if ratio < best - TOL or (abs(ratio - best) <= TOL and basis[i] < basis[leave]):
                    best, leave = ratio, i
        if leave is None:
            raise UnboundedLP("linear program is unbounded")
        _pivot(tab, leave, entering)
        basis[leave] = entering
    raise InfeasibleLP("simplex iteration limit reached")
