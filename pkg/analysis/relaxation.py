"""LP relaxations over the stable-marriage (Rothblum) polytope.

Provides the global robustness upper bound by bisection, its restriction to
the sublattice above a down-set, and the cost lower bound with vulnerability
cuts.
"""

import logging
import math
from dataclasses import dataclass
from typing import Any, Callable, Dict, Iterable, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from analysis.robustness import ThresholdOracle
from core.errors import InputError, UnsupportedNormError
from core.lp import LPBuilder, SolveResult, lp_solve
from core.market import TOL, Instance, Matching, NormLike, Profile, dual_norm, parse_norm
from core.stable import RotationPoset, build_rotation_poset, matching_from_downset

logger = logging.getLogger(__name__)

MODES = ("threshold", "holder")
INTEGRALITY_TOL = 1e-6

Pair = Tuple[str, str]
Constraint = Tuple[Mapping[Pair, float], str, float]


def simplex_diameter(p: NormLike) -> float:
    p = parse_norm(p)
    if math.isinf(p):
        return 1.0
    return 2.0 if p == 1.0 else math.sqrt(2.0)


@dataclass
class FractionalMatching:
    y: Dict[Pair, float]

    def is_integral(self, tol: float = INTEGRALITY_TOL) -> bool:
        return all(min(abs(v), abs(1.0 - v)) <= tol for v in self.y.values())

    def to_matching(self) -> Optional[Matching]:
        if not self.is_integral():
            return None
        return Matching({a: b for (a, b), v in self.y.items() if v > 0.5})

    def partner_attributes(self, instance: Instance, b: str) -> np.ndarray:
        """The fractional partner vector sum_a y_ab u(a)."""
        return sum(self.y[(a, b)] * instance.u(a) for a in instance.a_agents)

    def to_dict(self) -> Dict[str, Any]:
        return {"y": [{"a": a, "b": b, "value": v} for (a, b), v in self.y.items() if abs(v) > 1e-12]}


def support_norm(v: Sequence[float], k: int, p_dual: NormLike) -> float:
    """Dual norm of the positive part of v restricted to its k largest entries."""
    positive = np.sort(np.clip(np.asarray(v, dtype=float), 0.0, None))[::-1][: max(1, int(k))]
    return float(np.linalg.norm(positive, ord=parse_norm(p_dual)))


def _rothblum(instance: Instance, S: Optional[Profile], include: Optional[Callable[[str, str, str], bool]] = None) -> Tuple[LPBuilder, Dict[Pair, int]]:
    """Assignment rows plus one stability row per pair; ``include(b, incumbent, a)`` filters incumbents."""
    prefs = instance.preferences(S)
    builder = LPBuilder()
    y = {(a, b): builder.add_variable(("y", a, b), upper=1.0) for a in instance.a_agents for b in instance.b_agents}
    for a in instance.a_agents:
        builder.add_constraint({y[(a, b)]: 1.0 for b in instance.b_agents}, "=", 1.0)
    for b in instance.b_agents:
        builder.add_constraint({y[(a, b)]: 1.0 for a in instance.a_agents}, "=", 1.0)
    for a in instance.a_agents:
        for b in instance.b_agents:
            row = {y[(a, other)]: 1.0 for other in prefs.a_prefs[a][: prefs.a_rank[a][b] + 1]}
            for incumbent in prefs.b_prefs[b][: prefs.b_rank[b][a]]:
                if include is None or include(b, incumbent, a):
                    row[y[(incumbent, b)]] = 1.0
            builder.add_constraint(row, ">=", 1.0)
    return builder, y


def _fractional(result: SolveResult, y: Dict[Pair, int]) -> Optional[FractionalMatching]:
    if not result.optimal:
        return None
    return FractionalMatching({pair: float(np.clip(result.x[idx], 0.0, 1.0)) for pair, idx in y.items()})


def _add_extra(builder: LPBuilder, y: Dict[Pair, int], extra: Optional[Iterable[Constraint]]) -> None:
    for coeffs, sense, rhs in extra or ():
        builder.add_constraint({y[pair]: value for pair, value in coeffs.items()}, sense, rhs)


def rothblum_feasible(instance: Instance, S: Optional[Profile] = None, extra_constraints: Optional[Iterable[Constraint]] = None, objective: Optional[Mapping[Pair, float]] = None) -> SolveResult:
    """LP over the stable-marriage polytope; the fractional point is in ``meta["fractional"]``."""
    builder, y = _rothblum(instance, S)
    _add_extra(builder, y, extra_constraints)
    if objective:
        builder.set_objective({y[pair]: value for pair, value in objective.items()})
    result = lp_solve(builder.build())
    result.meta["fractional"] = _fractional(result, y)
    return result


def zero_pairs_constraints(pairs: Iterable[Pair]) -> List[Constraint]:
    return [({pair: 1.0}, "=", 0.0) for pair in pairs]


def _epigraph(builder: LPBuilder, terms: List[Tuple[float, Dict[int, float]]], k: int, p: float, allow_approximation: bool) -> int:
    """Epigraph variable g >= ||(v)_+^(k)||_{p*} for v_i = const_i + sum coef x; returns the index of g."""
    q = dual_norm(p)
    if q == 2.0:
        if not allow_approximation:
            raise UnsupportedNormError("p=2 has no linear epigraph; enable the norm-equivalence approximation")
        q = math.inf
    g = builder.add_variable()
    if math.isinf(q):
        for const, coeffs in terms:
            row = {g: 1.0}
            for idx, coef in coeffs.items():
                row[idx] = row.get(idx, 0.0) - coef
            builder.add_constraint(row, ">=", const)
        return g
    theta = builder.add_variable()
    slack = [builder.add_variable() for _ in terms]
    row = {g: 1.0, theta: -float(k)}
    for w in slack:
        row[w] = -1.0
    builder.add_constraint(row, ">=", 0.0)
    for w, (const, coeffs) in zip(slack, terms):
        row = {w: 1.0, theta: 1.0}
        for idx, coef in coeffs.items():
            row[idx] = row.get(idx, 0.0) - coef
        builder.add_constraint(row, ">=", const)
    return g


def epigraph_value(v: Sequence[float], k: int, p: NormLike, allow_approximation: bool = False) -> float:
    """Smallest feasible epigraph value for a constant vector v."""
    builder = LPBuilder()
    g = _epigraph(builder, [(float(x), {}) for x in v], int(k), parse_norm(p), allow_approximation)
    builder.set_objective({g: 1.0})
    return lp_solve(builder.build()).value


def _holder_rows(builder: LPBuilder, y: Dict[Pair, int], instance: Instance, S: Optional[Profile], r: float, k: int, p: float, allow_approximation: bool) -> None:
    """Margin >= r * epigraph, relaxed by a big-M term whenever a holds b or better."""
    prefs = instance.preferences(S)
    rows = instance.profile(S)
    scale = max(float(np.max(instance.u(a))) for a in instance.a_agents) + 1.0
    big_m = 2.0 * scale + r * k * scale
    for a in instance.a_agents:
        for b in instance.b_agents:
            s = rows[b]
            terms = []
            for i in range(instance.m):
                coeffs = {y[(other, b)]: -float(instance.u(other)[i]) for other in instance.a_agents}
                terms.append((float(instance.u(a)[i]), coeffs))
            g = _epigraph(builder, terms, k, p, allow_approximation)
            row = {y[(other, b)]: float(np.dot(s, instance.u(other) - instance.u(a))) for other in instance.a_agents}
            row[g] = -r
            for better in prefs.a_prefs[a][: prefs.a_rank[a][b] + 1]:
                row[y[(a, better)]] = row.get(y[(a, better)], 0.0) + big_m
            builder.add_constraint(row, ">=", 0.0)


def _ub_solve(instance: Instance, S: Optional[Profile], r: float, k: Optional[int], p: NormLike, mode: str, oracle: Optional[ThresholdOracle], zero_pairs: Iterable[Pair], allow_approximation: bool) -> SolveResult:
    if mode not in MODES:
        raise InputError(f"Unknown relaxation mode {mode!r}; use one of {MODES}")
    if r < 0:
        raise InputError(f"Radius must be non-negative, got {r}")
    p = parse_norm(p)
    if mode == "threshold":
        oracle = oracle or ThresholdOracle(instance, S, k, p)
        builder, y = _rothblum(instance, S, lambda b, incumbent, a: oracle.flip_radius(b, incumbent, a) >= r - 1e-12)
    else:
        budget = instance.m if k is None else min(int(k), instance.m)
        builder, y = _rothblum(instance, S)
        _holder_rows(builder, y, instance, S, r, budget, p, allow_approximation)
    _add_extra(builder, y, zero_pairs_constraints(zero_pairs))
    result = lp_solve(builder.build())
    result.meta["fractional"] = _fractional(result, y)
    return result


def ub_feasible(instance: Instance, S: Optional[Profile], r: float, k: Optional[int], p: NormLike, mode: str = "threshold", oracle: Optional[ThresholdOracle] = None, zero_pairs: Iterable[Pair] = (), allow_approximation: bool = False) -> bool:
    """Whether the relaxation admits a fractional stable matching robust to radius r."""
    return _ub_solve(instance, S, r, k, p, mode, oracle, zero_pairs, allow_approximation).optimal


@dataclass
class UpperBound:
    value: float
    capped: bool = False
    integral: bool = False
    matching: Optional[Matching] = None
    fractional: Optional[FractionalMatching] = None
    iterations: int = 0
    approximate: bool = False

    def to_dict(self) -> Dict[str, Any]:
        return {
            "value": self.value,
            "capped": self.capped,
            "integral": self.integral,
            "matching": self.matching.to_list() if self.matching else None,
            "iterations": self.iterations,
            "approximate": self.approximate,
        }


def global_ub(instance: Instance, S: Optional[Profile], k: Optional[int], p: NormLike, eps_ub: float = 1e-4, mode: str = "threshold", oracle: Optional[ThresholdOracle] = None, zero_pairs: Iterable[Pair] = (), allow_approximation: bool = False) -> UpperBound:
    """Largest relaxation-feasible radius, to additive accuracy eps_ub, by bisection."""
    if eps_ub <= 0:
        raise InputError(f"eps_ub must be positive, got {eps_ub}")
    zero_pairs = list(zero_pairs)
    if mode == "threshold":
        oracle = oracle or ThresholdOracle(instance, S, k, p)

    def solve(r: float) -> SolveResult:
        return _ub_solve(instance, S, r, k, p, mode, oracle, zero_pairs, allow_approximation)

    approximate = mode == "holder" and parse_norm(p) == 2.0
    diameter = simplex_diameter(p)
    start = solve(0.0)
    if not start.optimal:
        logger.warning("Relaxation is infeasible at radius 0")
        return UpperBound(-math.inf, iterations=1, approximate=approximate)
    top = solve(diameter)
    if top.optimal:
        logger.info(f"Relaxation feasible at the simplex diameter {diameter:.6g}; bound is unbounded")
        return _bound(math.inf, top, 2, capped=True, approximate=approximate)

    lo, hi, best, iterations = 0.0, diameter, start, 2
    while hi - lo > eps_ub:
        mid = 0.5 * (lo + hi)
        result = solve(mid)
        iterations += 1
        logger.debug(f"bisection r={mid:.6g}: {'feasible' if result.optimal else 'infeasible'}")
        if result.optimal:
            lo, best = mid, result
        else:
            hi = mid
    return _bound(hi, best, iterations, approximate=approximate)


def _bound(value: float, result: SolveResult, iterations: int, capped: bool = False, approximate: bool = False) -> UpperBound:
    fractional = result.meta.get("fractional")
    integral = fractional is not None and fractional.is_integral()
    matching = fractional.to_matching() if integral else None
    return UpperBound(value, capped, integral, matching, fractional, iterations, approximate)


def sublattice_exclusions(instance: Instance, S: Optional[Profile], mu: Matching) -> List[Pair]:
    """Pairs (a, b) where b already holds someone it ranks above a."""
    prefs = instance.preferences(S)
    return [
        (a, b)
        for b in instance.b_agents
        for a in prefs.b_prefs[b][prefs.b_rank[b][mu.partner_of(b)] + 1 :]
    ]


def restricted_ub(instance: Instance, S: Optional[Profile], D: Iterable[int], k: Optional[int], p: NormLike, eps_ub: float = 1e-4, poset: Optional[RotationPoset] = None, mode: str = "threshold", oracle: Optional[ThresholdOracle] = None, allow_approximation: bool = False) -> UpperBound:
    """Upper bound over the stable matchings reachable from the down-set D."""
    poset = poset or build_rotation_poset(instance, S)
    mu = matching_from_downset(poset, D)
    return global_ub(instance, S, k, p, eps_ub, mode, oracle, sublattice_exclusions(instance, S, mu), allow_approximation)


def vulnerability_cuts(instance: Instance, oracle: ThresholdOracle, tau: float) -> List[Constraint]:
    """y_ab' + y_a'b <= 1 whenever b prefers a to a' after some perturbation below tau and b >_a b'."""
    cuts = []
    for a in instance.a_agents:
        prefs = instance.a_prefs[a]
        for i, b in enumerate(prefs):
            for b_low in prefs[i + 1 :]:
                for other in instance.a_agents:
                    if other == a:
                        continue
                    if oracle.flip_radius(b, other, a) < tau - 1e-9:
                        cuts.append(({(a, b_low): 1.0, (other, b): 1.0}, "<=", 1.0))
    return cuts


def cost_lb(instance: Instance, S: Optional[Profile], costs: Optional[Mapping[str, Mapping[str, float]]], tau: float, k: Optional[int], p: NormLike, oracle: Optional[ThresholdOracle] = None) -> float:
    """LP lower bound on the cheapest stable matching with robustness radius >= tau."""
    if tau < 0:
        raise InputError(f"tau must be non-negative, got {tau}")
    costs = costs if costs is not None else (instance.costs or {})
    oracle = oracle or ThresholdOracle(instance, S, k, p)
    cuts = vulnerability_cuts(instance, oracle, tau)
    objective = {(a, b): float(costs.get(a, {}).get(b, 0.0)) for a in instance.a_agents for b in instance.b_agents}
    result = rothblum_feasible(instance, S, cuts, objective)
    logger.debug(f"cost LB at tau={tau:.6g}: {len(cuts)} cuts, status {result.status}")
    if not result.optimal:
        return math.inf
    return result.value
