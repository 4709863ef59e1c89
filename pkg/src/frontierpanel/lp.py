"""Dense two-phase primal simplex.

Small dense LP core used by every DEA evaluation.
Problems are stated as::

    minimize    c @ x
    subject to  A[i] @ x  (<=, =, >=)  b[i]
                lower <= x <= upper

Bland's smallest-index rule is used for both the entering and the leaving
variable, so the method terminates on degenerate problems.  The pivoting
loop is compiled with numba.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from numba import njit

PIVOT_TOL = 1e-9
FEAS_TOL = 1e-8

OPTIMAL = "optimal"
INFEASIBLE = "infeasible"
UNBOUNDED = "unbounded"

_RELATIONS = ("<=", "=", ">=")


@dataclass(frozen=True)
class LpProblem:
    """Minimization problem in row form.

    ``relations`` holds one of ``"<="``, ``"="``, ``">="`` per row of ``A``.
    ``lower`` defaults to zero; ``upper`` defaults to +inf.
    """

    c: np.ndarray
    A: np.ndarray
    relations: Sequence[str]
    b: np.ndarray
    lower: np.ndarray | None = None
    upper: np.ndarray | None = None

    def __post_init__(self):
        c = np.asarray(self.c, dtype=float).ravel()
        n = c.size
        A = np.asarray(self.A, dtype=float)
        if A.size == 0:
            A = A.reshape(0, n)
        if A.ndim != 2 or A.shape[1] != n:
            raise ValueError(
                f"constraint matrix has shape {A.shape}, expected (k, {n})")
        b = np.asarray(self.b, dtype=float).ravel()
        if b.size != A.shape[0]:
            raise ValueError(f"{b.size} right-hand sides for {A.shape[0]} rows")
        rel = tuple(self.relations)
        if len(rel) != A.shape[0]:
            raise ValueError(f"{len(rel)} relations for {A.shape[0]} rows")
        bad = [r for r in rel if r not in _RELATIONS]
        if bad:
            raise ValueError(f"unknown relation(s) {bad}")
        if not (np.all(np.isfinite(c)) and np.all(np.isfinite(A))
                and np.all(np.isfinite(b))):
            raise ValueError("objective, matrix and rhs must be finite")
        lower = np.zeros(n) if self.lower is None else np.asarray(self.lower, dtype=float).ravel()
        upper = np.full(n, np.inf) if self.upper is None else np.asarray(self.upper, dtype=float).ravel()
        if lower.size != n or upper.size != n:
            raise ValueError("bounds must have one entry per variable")
        if not np.all(np.isfinite(lower)):
            raise ValueError("lower bounds must be finite")
        if np.any(np.isnan(upper)):
            raise ValueError("upper bounds must not be NaN")
        object.__setattr__(self, "c", c)
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "b", b)
        object.__setattr__(self, "relations", rel)
        object.__setattr__(self, "lower", lower)
        object.__setattr__(self, "upper", upper)

    @property
    def n_vars(self) -> int:
        return self.c.size

    @classmethod
    def from_constraints(cls, c, constraints, lower=None, upper=None):
        """Build from a list of ``(coefs, relation, rhs)`` triples."""
        c = np.asarray(c, dtype=float).ravel()
        if constraints:
            rows, rels, rhs = zip(*constraints)
            lengths = {len(r) for r in rows}
            if lengths != {c.size}:
                raise ValueError(
                    f"coefficient vectors have lengths {sorted(lengths)}, "
                    f"objective has {c.size}")
            A = np.array(rows, dtype=float)
        else:
            A, rels, rhs = np.zeros((0, c.size)), (), ()
        return cls(c, A, rels, np.array(rhs, dtype=float), lower, upper)

    def is_feasible(self, x, tol: float = FEAS_TOL) -> bool:
        """Check ``x`` against every row and bound, independent of any solver."""
        x = np.asarray(x, dtype=float)
        if np.any(x < self.lower - tol) or np.any(x > self.upper + tol):
            return False
        lhs = self.A @ x
        for v, rel, rhs in zip(lhs, self.relations, self.b):
            scale = tol * max(1.0, abs(rhs))
            if rel == "<=" and v > rhs + scale:
                return False
            if rel == ">=" and v < rhs - scale:
                return False
            if rel == "=" and abs(v - rhs) > scale:
                return False
        return True


@dataclass
class LpSolution:
    status: str
    objective_value: float = np.nan
    x: np.ndarray = field(default_factory=lambda: np.empty(0))
    iterations: int = 0

    @property
    def ok(self) -> bool:
        return self.status == OPTIMAL


@njit(cache=True)
def _pivot(T, row, col):
    rows, cols = T.shape
    piv = T[row, col]
    for k in range(cols):
        T[row, k] /= piv
    for i in range(rows):
        if i == row:
            continue
        f = T[i, col]
        if f != 0.0:
            for k in range(cols):
                T[i, k] -= f * T[row, k]


@njit(cache=True)
def _simplex_kernel(T, basis, n_cols, max_iter, tol):
    """Bland's-rule iterations; returns (status code, iterations).

    Status 0 = optimal, 1 = unbounded, 2 = iteration limit.  The last row
    of ``T`` holds reduced costs, the last column the basic values.
    """
    m = T.shape[0] - 1
    rhs = T.shape[1] - 1
    it = 0
    while True:
        col = -1
        for j in range(n_cols):
            if T[m, j] < -tol:
                col = j
                break
        if col < 0:
            return 0, it
        best = np.inf
        for i in range(m):
            if T[i, col] > tol:
                r = T[i, rhs] / T[i, col]
                if r < best:
                    best = r
        if best == np.inf:
            return 1, it
        cutoff = best + tol * max(1.0, abs(best))
        row = -1
        for i in range(m):
            if T[i, col] > tol and T[i, rhs] / T[i, col] <= cutoff:
                if row < 0 or basis[i] < basis[row]:
                    row = i
        _pivot(T, row, col)
        basis[row] = col
        it += 1
        if it > max_iter:
            return 2, it


def _run_simplex(T, basis, n_cols, max_iter):
    """Minimize over the tableau whose last row holds reduced costs.

    Returns (status, iterations). Only the first ``n_cols`` columns may enter.
    """
    code, it = _simplex_kernel(T, basis, n_cols, max_iter, PIVOT_TOL)
    if code == 2:
        raise RuntimeError(f"simplex exceeded {max_iter} iterations")
    return (OPTIMAL if code == 0 else UNBOUNDED), it


def solve_lp(problem: LpProblem) -> LpSolution:
    """Solve ``problem`` with the two-phase simplex method.

    Infeasible and unbounded problems are reported through
    ``LpSolution.status``; they do not raise.
    """
    p = problem
    n = p.n_vars
    lower, upper = p.lower, p.upper

    # shift x = lower + x' so every structural variable is >= 0
    A = p.A
    b = p.b - A @ lower
    rels = list(p.relations)
    finite_ub = np.flatnonzero(np.isfinite(upper))
    if finite_ub.size:
        extra = np.zeros((finite_ub.size, n))
        extra[np.arange(finite_ub.size), finite_ub] = 1.0
        A = np.vstack([A, extra])
        b = np.concatenate([b, upper[finite_ub] - lower[finite_ub]])
        rels += ["<="] * finite_ub.size
        if np.any(b[-finite_ub.size:] < -FEAS_TOL):
            return LpSolution(INFEASIBLE)

    m = A.shape[0]
    A = A.copy()
    for i in range(m):
        if b[i] < 0:
            A[i] = -A[i]
            b[i] = -b[i]
            rels[i] = {"<=": ">=", ">=": "<=", "=": "="}[rels[i]]

    n_slack = sum(r != "=" for r in rels)
    n_art = sum(r != "<=" for r in rels)
    n_cols = n + n_slack + n_art
    T = np.zeros((m + 1, n_cols + 1))
    T[:m, :n] = A
    T[:m, -1] = b
    basis = np.empty(m, dtype=np.int64)
    s = n
    a = n + n_slack
    for i, rel in enumerate(rels):
        if rel == "<=":
            T[i, s] = 1.0
            basis[i] = s
            s += 1
        else:
            if rel == ">=":
                T[i, s] = -1.0
                s += 1
            T[i, a] = 1.0
            basis[i] = a
            a += 1

    max_iter = 50 * (m + n_cols) + 1000
    iters = 0
    art_start = n + n_slack
    if n_art:
        # phase 1: minimize the sum of artificials
        art_rows = np.flatnonzero(basis >= art_start)
        T[m, :] = -T[art_rows].sum(axis=0)
        T[m, art_start:n_cols] = 0.0
        _, it = _run_simplex(T, basis, n_cols, max_iter)
        iters += it
        if -T[m, -1] > FEAS_TOL * max(1.0, np.abs(b).max(initial=0.0)):
            return LpSolution(INFEASIBLE, iterations=iters)
        # drive zero-level artificials out of the basis; drop redundant rows
        keep = np.ones(m + 1, dtype=bool)
        for i in np.flatnonzero(basis >= art_start):
            nz = np.flatnonzero(np.abs(T[i, :art_start]) > PIVOT_TOL)
            if nz.size:
                _pivot(T, i, nz[0])
                basis[i] = nz[0]
            else:
                keep[i] = False
        T = np.delete(T, np.s_[art_start:n_cols], axis=1)[keep]
        basis = basis[keep[:m]]
        m = basis.size
        n_cols = art_start

    cost = np.zeros(n_cols)
    cost[:n] = p.c
    T[m, :n_cols] = cost - cost[basis] @ T[:m, :n_cols]
    T[m, -1] = -cost[basis] @ T[:m, -1]
    status, it = _run_simplex(T, basis, n_cols, max_iter)
    iters += it
    if status == UNBOUNDED:
        return LpSolution(UNBOUNDED, iterations=iters)

    xs = np.zeros(n_cols)
    xs[basis] = T[:m, -1]
    x = lower + np.clip(xs[:n], 0.0, None)
    x = np.minimum(x, upper)
    return LpSolution(OPTIMAL, float(p.c @ x), x, iters)
