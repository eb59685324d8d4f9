"""Dense linear-programming kernel.

A two-phase tableau simplex with Bland's anti-cycling rule. Problems are
small (a few hundred variables at most), so everything stays dense in numpy.
"""

import logging
import math
from dataclasses import dataclass, field
from typing import Any, Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from core.errors import InputError, SolverError

logger = logging.getLogger(__name__)

OPTIMAL = "optimal"
INFEASIBLE = "infeasible"
UNBOUNDED = "unbounded"

SENSES = ("<=", ">=", "=")

# Used when a call passes no tolerance or pivot limit of its own.
SOLVER_SETTINGS: Dict[str, Any] = {"tol": 1e-9, "max_iter": 50000}


def configure_solver(tol: Optional[float] = None, max_iter: Optional[int] = None) -> None:
    if tol is not None:
        if not 0.0 < float(tol) < 1e-3:
            raise InputError(f"LP tolerance must lie in (0, 1e-3), got {tol}")
        SOLVER_SETTINGS["tol"] = float(tol)
    if max_iter is not None:
        if int(max_iter) < 1:
            raise InputError(f"LP pivot limit must be positive, got {max_iter}")
        SOLVER_SETTINGS["max_iter"] = int(max_iter)
    logger.debug(f"LP solver settings: {SOLVER_SETTINGS}")


@dataclass
class SolveResult:
    status: str
    value: float = math.nan
    x: Optional[np.ndarray] = None
    meta: Dict[str, Any] = field(default_factory=dict)

    @property
    def optimal(self) -> bool:
        return self.status == OPTIMAL


@dataclass
class GeneralLP:
    """min (or max) c.x  s.t.  A x (senses) b,  lower <= x <= upper."""

    c: np.ndarray
    A: np.ndarray
    senses: Tuple[str, ...]
    b: np.ndarray
    lower: Optional[np.ndarray] = None
    upper: Optional[np.ndarray] = None
    maximize: bool = False

    def __post_init__(self):
        self.c = np.asarray(self.c, dtype=float).reshape(-1)
        n = self.c.size
        self.A = np.asarray(self.A, dtype=float).reshape(-1, n) if np.size(self.A) else np.zeros((0, n))
        self.b = np.asarray(self.b, dtype=float).reshape(-1)
        self.senses = tuple(self.senses)
        self.lower = np.zeros(n) if self.lower is None else np.asarray(self.lower, dtype=float).reshape(-1)
        self.upper = np.full(n, math.inf) if self.upper is None else np.asarray(self.upper, dtype=float).reshape(-1)
        rows = self.A.shape[0]
        if self.b.size != rows or len(self.senses) != rows:
            raise InputError(f"LP has {rows} rows but {self.b.size} right-hand sides and {len(self.senses)} senses")
        if self.lower.size != n or self.upper.size != n:
            raise InputError("LP bounds do not match the number of variables")
        if any(s not in SENSES for s in self.senses):
            raise InputError(f"Unknown constraint sense in {self.senses}")
        if not (np.all(np.isfinite(self.c)) and np.all(np.isfinite(self.A)) and np.all(np.isfinite(self.b))):
            raise InputError("LP data must be finite")

    @property
    def num_variables(self) -> int:
        return self.c.size


class LPBuilder:
    """Incremental construction of a GeneralLP with named variables."""

    def __init__(self):
        self._index: Dict[Any, int] = {}
        self._lower: List[float] = []
        self._upper: List[float] = []
        self._cost: List[float] = []
        self._rows: List[Tuple[Dict[int, float], str, float]] = []
        self.maximize = False

    def add_variable(self, name: Any = None, lower: float = 0.0, upper: float = math.inf, cost: float = 0.0) -> int:
        idx = len(self._cost)
        if name is not None:
            if name in self._index:
                raise InputError(f"Duplicate LP variable {name!r}")
            self._index[name] = idx
        self._lower.append(lower)
        self._upper.append(upper)
        self._cost.append(cost)
        return idx

    def index(self, name: Any) -> int:
        return self._index[name]

    def has(self, name: Any) -> bool:
        return name in self._index

    def set_bounds(self, idx: int, lower: Optional[float] = None, upper: Optional[float] = None) -> None:
        if lower is not None:
            self._lower[idx] = lower
        if upper is not None:
            self._upper[idx] = upper

    def add_constraint(self, coeffs: Mapping[int, float], sense: str, rhs: float) -> None:
        if sense not in SENSES:
            raise InputError(f"Unknown constraint sense {sense!r}")
        row: Dict[int, float] = {}
        for idx, value in coeffs.items():
            row[idx] = row.get(idx, 0.0) + float(value)
        self._rows.append((row, sense, float(rhs)))

    def set_objective(self, coeffs: Mapping[int, float], maximize: bool = False) -> None:
        self._cost = [0.0] * len(self._cost)
        for idx, value in coeffs.items():
            self._cost[idx] += float(value)
        self.maximize = maximize

    @property
    def num_variables(self) -> int:
        return len(self._cost)

    def build(self) -> GeneralLP:
        n = len(self._cost)
        A = np.zeros((len(self._rows), n))
        senses, b = [], []
        for i, (row, sense, rhs) in enumerate(self._rows):
            for idx, value in row.items():
                A[i, idx] = value
            senses.append(sense)
            b.append(rhs)
        return GeneralLP(np.array(self._cost), A, tuple(senses), np.array(b), np.array(self._lower), np.array(self._upper), self.maximize)


def _pivot(T: np.ndarray, basis: List[int], row: int, col: int) -> None:
    T[row] /= T[row, col]
    column = T[:, col].copy()
    column[row] = 0.0
    T -= np.outer(column, T[row])
    basis[row] = col


def _simplex(T: np.ndarray, basis: List[int], ncols: int, tol: float, max_iter: int) -> str:
    for _ in range(max_iter):
        reduced = T[-1, :ncols]
        entering = np.flatnonzero(reduced < -tol)
        if entering.size == 0:
            return OPTIMAL
        col = int(entering[0])
        column = T[:-1, col]
        rows = np.flatnonzero(column > tol)
        if rows.size == 0:
            return UNBOUNDED
        ratios = T[rows, -1] / column[rows]
        best = ratios.min()
        ties = rows[ratios <= best + tol]
        row = int(min(ties, key=lambda i: basis[i]))
        _pivot(T, basis, row, col)
    raise SolverError(f"Simplex did not terminate within {max_iter} pivots")


def _standard_form(lp: GeneralLP, tol: float):
    """Map bounded variables onto non-negative columns; returns the pieces and a decoder."""
    n = lp.num_variables
    columns: List[np.ndarray] = []
    costs: List[float] = []
    decode: List[Tuple[str, List[int], float]] = []
    rhs = lp.b.copy()
    const = 0.0
    c = -lp.c if lp.maximize else lp.c
    extra_rows: List[Tuple[int, float]] = []
    for j in range(n):
        lo, hi = lp.lower[j], lp.upper[j]
        if lo > hi + tol:
            return None
        a_col = lp.A[:, j]
        if math.isfinite(lo):
            rhs -= a_col * lo
            const += c[j] * lo
            columns.append(a_col.copy())
            costs.append(c[j])
            decode.append(("shift", [len(columns) - 1], lo))
            if math.isfinite(hi):
                extra_rows.append((len(columns) - 1, hi - lo))
        elif math.isfinite(hi):
            rhs -= a_col * hi
            const += c[j] * hi
            columns.append(-a_col)
            costs.append(-c[j])
            decode.append(("mirror", [len(columns) - 1], hi))
        else:
            columns.append(a_col.copy())
            costs.append(c[j])
            columns.append(-a_col)
            costs.append(-c[j])
            decode.append(("free", [len(columns) - 2, len(columns) - 1], 0.0))
    ncols = len(columns)
    rows = lp.A.shape[0] + len(extra_rows)
    A = np.zeros((rows, ncols))
    if columns:
        A[: lp.A.shape[0], :] = np.column_stack(columns) if lp.A.shape[0] else np.zeros((0, ncols))
    senses = list(lp.senses)
    b = list(rhs)
    for k, (col, bound) in enumerate(extra_rows):
        A[lp.A.shape[0] + k, col] = 1.0
        senses.append("<=")
        b.append(bound)
    return A, senses, np.array(b, dtype=float), np.array(costs, dtype=float), const, decode


def lp_solve(lp: GeneralLP, tol: Optional[float] = None, max_iter: Optional[int] = None) -> SolveResult:
    """Solve a GeneralLP; the returned value is in the caller's sense (min or max)."""
    tol = SOLVER_SETTINGS["tol"] if tol is None else tol
    max_iter = SOLVER_SETTINGS["max_iter"] if max_iter is None else max_iter
    form = _standard_form(lp, tol)
    if form is None:
        return SolveResult(INFEASIBLE, meta={"reason": "empty variable bounds"})
    A, senses, b, cost, const, decode = form
    rows, ncols = A.shape

    slack_cols = []
    for i, sense in enumerate(senses):
        if sense == "=":
            continue
        col = np.zeros(rows)
        col[i] = 1.0 if sense == "<=" else -1.0
        slack_cols.append(col)
    if slack_cols:
        A = np.hstack([A, np.column_stack(slack_cols)])
    N = A.shape[1]
    full_cost = np.concatenate([cost, np.zeros(N - ncols)])

    negative = b < 0
    A[negative] *= -1.0
    b = np.where(negative, -b, b)

    # phase 1: one artificial per row
    T = np.zeros((rows + 1, N + rows + 1))
    T[:rows, :N] = A
    T[:rows, N : N + rows] = np.eye(rows)
    T[:rows, -1] = b
    T[-1, :N] = -A.sum(axis=0)
    T[-1, -1] = -b.sum()
    basis = list(range(N, N + rows))
    status = _simplex(T, basis, N + rows, tol, max_iter)
    if status != OPTIMAL or -T[-1, -1] > 1e-7 * max(1.0, float(b.sum())):
        logger.debug(f"LP infeasible: phase-1 residual {-T[-1, -1]:.3g}")
        return SolveResult(INFEASIBLE)

    keep = []
    for i in range(rows):
        if basis[i] >= N:
            candidates = np.flatnonzero(np.abs(T[i, :N]) > tol)
            if candidates.size:
                j = int(candidates[np.argmax(np.abs(T[i, candidates]))])
                _pivot(T, basis, i, j)
            else:
                continue
        keep.append(i)
    T2 = np.vstack([T[keep][:, list(range(N)) + [N + rows]], np.zeros((1, N + 1))])
    basis = [basis[i] for i in keep]
    T2[-1, :N] = full_cost
    for i, j in enumerate(basis):
        T2[-1] -= full_cost[j] * T2[i]

    status = _simplex(T2, basis, N, tol, max_iter)
    if status == UNBOUNDED:
        return SolveResult(UNBOUNDED, value=math.inf if lp.maximize else -math.inf)

    y = np.zeros(N)
    y[basis] = T2[:-1, -1]
    x = np.zeros(lp.num_variables)
    for j, (kind, cols, offset) in enumerate(decode):
        if kind == "shift":
            x[j] = offset + y[cols[0]]
        elif kind == "mirror":
            x[j] = offset - y[cols[0]]
        else:
            x[j] = y[cols[0]] - y[cols[1]]
    value = float(lp.c @ x)
    residual = 0.0
    if lp.A.shape[0]:
        lhs = lp.A @ x
        gaps = []
        for i, sense in enumerate(lp.senses):
            if sense == "<=":
                gaps.append(max(0.0, lhs[i] - lp.b[i]))
            elif sense == ">=":
                gaps.append(max(0.0, lp.b[i] - lhs[i]))
            else:
                gaps.append(abs(lhs[i] - lp.b[i]))
        residual = float(max(gaps))
    return SolveResult(OPTIMAL, value=value, x=x, meta={"residual": residual})


def solve_builder(builder: LPBuilder, tol: Optional[float] = None, max_iter: Optional[int] = None) -> SolveResult:
    return lp_solve(builder.build(), tol=tol, max_iter=max_iter)
