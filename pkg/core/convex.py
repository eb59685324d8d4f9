"""Per-pair convex programs for a single (b, a, Q) deviation.

For a B-agent with salience ``s`` whose partner beats candidate ``a`` by the
attribute gap ``gap = u(partner) - u(a)``, these programs ask how far ``s``
must move (post-normalized, supported on ``Q``) before ``s_hat . gap <= 0``.
p in {1, inf} are linear programs; p = 2 is solved exactly by enumerating the
active faces of the least-distance problem.
"""

import itertools
import logging
import math
from dataclasses import dataclass
from typing import FrozenSet, Iterable, Iterator, List, Optional, Tuple

import numpy as np

from core.errors import InputError, UnsupportedDimensionError
from core.lp import INFEASIBLE, OPTIMAL, LPBuilder, SolveResult, lp_solve
from core.market import TOL, NormLike, implied_scale, parse_norm

logger = logging.getLogger(__name__)

LAMBDA_MIN = 1e-9
L2_DIMENSION_CAP = 8


@dataclass(frozen=True, eq=False)
class PairProgram:
    base: np.ndarray
    gap: np.ndarray
    support: FrozenSet[int]
    norm: float

    def __init__(self, base, gap, support: Iterable[int], norm: NormLike):
        base = np.asarray(base, dtype=float).reshape(-1)
        gap = np.asarray(gap, dtype=float).reshape(-1)
        if base.shape != gap.shape:
            raise InputError(f"Gap has length {gap.size}, salience has {base.size}")
        support = frozenset(int(i) for i in support)
        if any(i < 0 or i >= base.size for i in support):
            raise InputError(f"Support {sorted(support)} out of range for m={base.size}")
        object.__setattr__(self, "base", base)
        object.__setattr__(self, "gap", gap)
        object.__setattr__(self, "support", support)
        object.__setattr__(self, "norm", parse_norm(norm))

    @property
    def m(self) -> int:
        return self.base.size

    @property
    def off_support(self) -> List[int]:
        return [i for i in range(self.m) if i not in self.support]

    @property
    def scaled(self) -> bool:
        """Whether lambda is a real decision variable."""
        return any(self.base[i] > TOL for i in self.off_support)

    def margin(self, s_hat: np.ndarray) -> float:
        return float(np.dot(s_hat, self.gap))


def supports(m: int, k: int) -> Iterator[FrozenSet[int]]:
    """Supports of size min(k, m) in lexicographic order.

    Smaller supports are never needed: the feasible set only grows with Q.
    """
    size = max(0, min(int(k), m))
    for combo in itertools.combinations(range(m), size):
        yield frozenset(combo)


def _base_lp(prog: PairProgram, radius: Optional[float]) -> Tuple[LPBuilder, List[int], Optional[int], Optional[int]]:
    builder = LPBuilder()
    s = prog.base
    shat = [builder.add_variable(("s", i)) for i in range(prog.m)]
    lam = builder.add_variable("lambda", lower=LAMBDA_MIN) if prog.scaled else None
    for i in prog.off_support:
        if lam is None:
            builder.add_constraint({shat[i]: 1.0}, "=", 0.0)
        else:
            builder.add_constraint({shat[i]: 1.0, lam: -s[i]}, "=", 0.0)
    builder.add_constraint({j: 1.0 for j in shat}, "=", 1.0)

    r_var = None
    if radius is None:
        r_var = builder.add_variable("r")
    if radius is not None and math.isinf(radius):
        return builder, shat, lam, r_var

    if math.isinf(prog.norm):
        for i in range(prog.m):
            if r_var is None:
                builder.add_constraint({shat[i]: 1.0}, "<=", s[i] + radius)
                builder.add_constraint({shat[i]: -1.0}, "<=", -s[i] + radius)
            else:
                builder.add_constraint({shat[i]: 1.0, r_var: -1.0}, "<=", s[i])
                builder.add_constraint({shat[i]: -1.0, r_var: -1.0}, "<=", -s[i])
    elif prog.norm == 1.0:
        dev = [builder.add_variable(("e", i)) for i in range(prog.m)]
        for i in range(prog.m):
            builder.add_constraint({shat[i]: 1.0, dev[i]: -1.0}, "<=", s[i])
            builder.add_constraint({shat[i]: -1.0, dev[i]: -1.0}, "<=", -s[i])
        total = {d: 1.0 for d in dev}
        if r_var is None:
            builder.add_constraint(total, "<=", radius)
        else:
            total[r_var] = -1.0
            builder.add_constraint(total, "<=", 0.0)
    else:
        raise InputError("Linear pair programs only cover p in {1, inf}")
    return builder, shat, lam, r_var


def _witness(prog: PairProgram, x: np.ndarray, shat: List[int], lam: Optional[int]) -> Tuple[np.ndarray, float]:
    s_hat = np.clip(x[shat], 0.0, None)
    s_hat = s_hat / s_hat.sum()
    scale = float(x[lam]) if lam is not None else implied_scale(prog.base, s_hat, prog.support)
    return s_hat, scale


def _l2_min_radius(prog: PairProgram) -> SolveResult:
    """Exact least-distance solve by enumerating active inequality sets."""
    if prog.m > L2_DIMENSION_CAP:
        raise UnsupportedDimensionError(f"p=2 pair programs are limited to m <= {L2_DIMENSION_CAP}")
    s = prog.base
    q = sorted(prog.support)
    off = prog.off_support
    use_lam = prog.scaled
    t = float(s[off].sum()) if off else 0.0
    sigma = float(np.sum(s[off] ** 2)) if off else 0.0

    dim = len(q) + (1 if use_lam else 0)
    z0 = np.concatenate([s[q], [1.0] if use_lam else []])
    weights = np.concatenate([np.ones(len(q)), [sigma] if use_lam else []])

    eq_row = np.concatenate([np.ones(len(q)), [t] if use_lam else []])
    rows = [np.concatenate([prog.gap[q], [float(np.dot(s[off], prog.gap[off]))] if use_lam else []])]
    rhs = [0.0]
    for j in range(len(q)):
        row = np.zeros(dim)
        row[j] = -1.0
        rows.append(row)
        rhs.append(0.0)
    if use_lam:
        row = np.zeros(dim)
        row[-1] = -1.0
        rows.append(row)
        rhs.append(-LAMBDA_MIN)
    G = np.array(rows)
    h = np.array(rhs)
    w_inv = 1.0 / weights

    best_obj, best_z = math.inf, None
    for size in range(0, dim):
        for active in itertools.combinations(range(len(rows)), size):
            A = np.vstack([eq_row] + [G[i] for i in active])
            b = np.concatenate([[1.0], h[list(active)]])
            M = (A * w_inv) @ A.T
            nu = np.linalg.lstsq(M, A @ z0 - b, rcond=None)[0]
            z = z0 - w_inv * (A.T @ nu)
            if np.max(np.abs(A @ z - b)) > 1e-9:
                continue
            if np.any(G @ z > h + 1e-10):
                continue
            obj = float(np.sum(weights * (z - z0) ** 2))
            if obj < best_obj - 1e-15:
                best_obj, best_z = obj, z
    if best_z is None:
        return SolveResult(INFEASIBLE, value=math.inf)

    s_hat = np.zeros(prog.m)
    s_hat[q] = best_z[: len(q)]
    scale = float(best_z[-1]) if use_lam else 1.0
    if use_lam:
        s_hat[off] = scale * s[off]
    s_hat = np.clip(s_hat, 0.0, None)
    s_hat = s_hat / s_hat.sum()
    radius = float(np.linalg.norm(s_hat - s))
    return SolveResult(OPTIMAL, value=radius, x=s_hat, meta={"scale": scale, "support": q})


def pair_min_radius(prog: PairProgram) -> SolveResult:
    """Minimum post-normalized distance at which b weakly prefers the candidate.

    Returns status "infeasible" with value +inf when no admissible point of
    the simplex reaches a non-positive margin.
    """
    if prog.margin(prog.base) <= 0.0:
        return SolveResult(OPTIMAL, value=0.0, x=prog.base.copy(), meta={"scale": 1.0, "support": sorted(prog.support)})
    if prog.norm == 2.0:
        return _l2_min_radius(prog)
    builder, shat, lam, r_var = _base_lp(prog, None)
    builder.add_constraint({shat[i]: prog.gap[i] for i in range(prog.m)}, "<=", 0.0)
    builder.set_objective({r_var: 1.0})
    result = lp_solve(builder.build())
    if not result.optimal:
        return SolveResult(INFEASIBLE, value=math.inf)
    s_hat, scale = _witness(prog, result.x, shat, lam)
    return SolveResult(OPTIMAL, value=max(0.0, result.value), x=s_hat, meta={"scale": scale, "support": sorted(prog.support)})


def min_margin(prog: PairProgram, radius: float = math.inf) -> SolveResult:
    """Smallest margin s_hat . gap over admissible points within the radius (p in {1, inf}, or unbounded radius)."""
    if not math.isinf(radius) and prog.norm == 2.0:
        raise InputError("min_margin with a finite radius needs p in {1, inf}")
    builder, shat, lam, _ = _base_lp(prog, radius)
    builder.set_objective({shat[i]: prog.gap[i] for i in range(prog.m)})
    result = lp_solve(builder.build())
    if not result.optimal:
        return SolveResult(INFEASIBLE, value=math.inf)
    s_hat, scale = _witness(prog, result.x, shat, lam)
    return SolveResult(OPTIMAL, value=prog.margin(s_hat), x=s_hat, meta={"scale": scale})


def pair_feasible(prog: PairProgram, r: float) -> SolveResult:
    """Whether some admissible s_hat within distance r has s_hat . gap <= 0.

    The witness is pushed as far into the blocking side as the radius allows,
    so a negative margin is returned whenever one exists.
    """
    if r < 0:
        raise InputError(f"Radius must be non-negative, got {r}")
    if prog.norm == 2.0:
        boundary = pair_min_radius(prog)
        if not boundary.optimal or boundary.value > r + TOL:
            return SolveResult(INFEASIBLE, value=boundary.value, meta={"min_radius": boundary.value})
        deepest = min_margin(prog)
        point = boundary.x
        if deepest.optimal:
            step = float(np.linalg.norm(deepest.x - boundary.x))
            eps = 1.0 if step <= TOL or math.isinf(r) else min(1.0, max(0.0, r - boundary.value) / step)
            point = boundary.x + eps * (deepest.x - boundary.x)
            point = np.clip(point, 0.0, None)
            point = point / point.sum()
        margin = prog.margin(point)
        scale = implied_scale(prog.base, point, prog.support)
        return SolveResult(OPTIMAL, value=margin, x=point, meta={"scale": scale, "min_radius": boundary.value})

    result = min_margin(prog, r)
    if not result.optimal or result.value > TOL:
        return SolveResult(INFEASIBLE, value=result.value, meta={"margin": result.value})
    return SolveResult(OPTIMAL, value=result.value, x=result.x, meta={"scale": result.meta["scale"], "margin": result.value})
