"""Robustness of a fixed stable matching against one agent's salience perturbation.

Verification, pairwise flip thresholds, the exact radius r*(mu), dual gaps
and the closed-form base radius.
"""

import logging
import math
from dataclasses import dataclass, field
from typing import Any, Dict, FrozenSet, List, Optional, Tuple

import numpy as np

from core.convex import PairProgram, pair_feasible, pair_min_radius, supports
from core.errors import DegenerateInstanceError, InputError, PreconditionError, UnstableMatchingError
from core.market import (
    TOL,
    Instance,
    Matching,
    NormLike,
    Perturbation,
    Profile,
    blockers,
    blocking_pairs,
    dual_norm,
    make_perturbation,
    norm_label,
    parse_norm,
    vector_norm,
)
from utils.parallel import parallel_map

logger = logging.getLogger(__name__)


def _budget(instance: Instance, k: Optional[int]) -> int:
    if k is None:
        return instance.m
    k = int(k)
    if k < 1:
        raise InputError(f"Support budget k must be >= 1, got {k}")
    return min(k, instance.m)


def require_stable(instance: Instance, S: Optional[Profile], mu: Matching) -> None:
    found = blocking_pairs(instance, S, mu)
    if found:
        raise UnstableMatchingError(found[0])


@dataclass
class PairThreshold:
    """Smallest radius that lets ``challenger`` tie or beat ``incumbent`` in b's eyes."""

    b: str
    incumbent: str
    challenger: str
    radius: float
    support: Optional[FrozenSet[int]] = None
    witness: Optional[Perturbation] = None

    @property
    def finite(self) -> bool:
        return math.isfinite(self.radius)


class ThresholdOracle:
    """Cached flip radii for one instance, profile, budget and norm."""

    def __init__(self, instance: Instance, S: Optional[Profile] = None, k: Optional[int] = None, p: NormLike = "inf"):
        self.instance = instance
        self.rows = instance.profile(S)
        self.k = _budget(instance, k)
        self.p = parse_norm(p)
        self._cache: Dict[Tuple[str, str, str], PairThreshold] = {}
        self.logger = logging.getLogger(__name__)

    def threshold(self, b: str, incumbent: str, challenger: str) -> PairThreshold:
        key = (b, incumbent, challenger)
        cached = self._cache.get(key)
        if cached is not None:
            return cached
        s = self.rows[b]
        gap = self.instance.u(incumbent) - self.instance.u(challenger)
        best = PairThreshold(b, incumbent, challenger, math.inf)
        for Q in supports(self.instance.m, self.k):
            result = pair_min_radius(PairProgram(s, gap, Q, self.p))
            if result.optimal and result.value < best.radius - 1e-12:
                best = PairThreshold(b, incumbent, challenger, result.value, Q, make_perturbation(b, s, result.x, Q))
        self.logger.debug(f"flip radius {b}: {incumbent} -> {challenger} = {best.radius:.9g}")
        self._cache[key] = best
        return best

    def flip_radius(self, b: str, incumbent: str, challenger: str) -> float:
        return self.threshold(b, incumbent, challenger).radius


@dataclass
class VerificationResult:
    robust: bool
    b: Optional[str] = None
    a: Optional[str] = None
    support: Optional[FrozenSet[int]] = None
    witness: Optional[Perturbation] = None
    margin: Optional[float] = None
    attained: bool = True

    def __bool__(self) -> bool:
        return self.robust

    def to_dict(self) -> Dict[str, Any]:
        doc: Dict[str, Any] = {"robust": self.robust}
        if not self.robust:
            doc.update(
                {
                    "blocking_pair": [self.a, self.b],
                    "support": sorted(self.support or ()),
                    "witness": self.witness.to_dict() if self.witness else None,
                    "margin": self.margin,
                    "attained": self.attained,
                }
            )
        return doc


def verify_robust(instance: Instance, S: Optional[Profile], mu: Matching, k: Optional[int], r: float, p: NormLike) -> VerificationResult:
    """Whether mu stays stable under every single-agent (k, r, p) perturbation."""
    if r < 0:
        raise InputError(f"Radius must be non-negative, got {r}")
    require_stable(instance, S, mu)
    k = _budget(instance, k)
    rows = instance.profile(S)
    for b in instance.b_agents:
        partner = mu.partner_of(b)
        s = rows[b]
        for a in blockers(instance, S, mu, b):
            gap = instance.u(partner) - instance.u(a)
            for Q in supports(instance.m, k):
                result = pair_feasible(PairProgram(s, gap, Q, p), r)
                if not result.optimal:
                    continue
                margin = float(result.value)
                attained = margin < -TOL or instance.tie_position[a] < instance.tie_position[partner]
                logger.info(f"Blocking deviation found: ({a}, {b}) with support {sorted(Q)}, margin {margin:.3g}")
                return VerificationResult(False, b, a, Q, make_perturbation(b, s, result.x, Q), margin, attained)
    return VerificationResult(True)


@dataclass
class RobustnessReport:
    radius: float
    critical_pair: Optional[Tuple[str, str, FrozenSet[int]]] = None
    witness: Optional[Perturbation] = None
    per_pair: Dict[Tuple[str, str], float] = field(default_factory=dict)
    k: Optional[int] = None
    p: Optional[str] = None

    @property
    def unbounded(self) -> bool:
        return math.isinf(self.radius)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "radius": self.radius,
            "critical_pair": [self.critical_pair[0], self.critical_pair[1]] if self.critical_pair else None,
            "critical_support": sorted(self.critical_pair[2]) if self.critical_pair else None,
            "witness": self.witness.to_dict() if self.witness else None,
            "per_pair": [{"a": a, "b": b, "radius": value} for (a, b), value in self.per_pair.items()],
            "k": self.k,
            "p": self.p,
        }


def pair_threshold(instance: Instance, S: Optional[Profile], mu: Matching, b: str, a: str, k: Optional[int], p: NormLike, oracle: Optional[ThresholdOracle] = None) -> PairThreshold:
    if a not in blockers(instance, S, mu, b):
        raise PreconditionError(f"{a} does not list {b} above its partner, so ({a}, {b}) can never block")
    oracle = oracle or ThresholdOracle(instance, S, k, p)
    return oracle.threshold(b, mu.partner_of(b), a)


def robustness_radius(instance: Instance, S: Optional[Profile], mu: Matching, k: Optional[int], p: NormLike, workers: int = 1, oracle: Optional[ThresholdOracle] = None) -> RobustnessReport:
    """Exact r*(mu): the smallest flip threshold over all potential blockers."""
    require_stable(instance, S, mu)
    oracle = oracle or ThresholdOracle(instance, S, k, p)
    tasks = sorted((b, a) for b in instance.b_agents for a in blockers(instance, S, mu, b))
    thresholds = parallel_map(lambda task: oracle.threshold(task[0], mu.partner_of(task[0]), task[1]), tasks, workers)

    report = RobustnessReport(min((item.radius for item in thresholds), default=math.inf), k=oracle.k, p=norm_label(p))
    for (b, a), item in zip(tasks, thresholds):
        report.per_pair[(a, b)] = item.radius
        # ties within 1e-12 go to the smallest (b, a) in id order
        if report.critical_pair is None and math.isfinite(item.radius) and item.radius <= report.radius + 1e-12:
            report.critical_pair = (a, b, item.support)
            report.witness = item.witness
    logger.debug(f"Robustness radius {report.radius:.9g} over {len(tasks)} candidate blockers")
    return report


def _check_not_degenerate(instance: Instance) -> None:
    vectors = [instance.u(a) for a in instance.a_agents]
    if all(np.allclose(v, vectors[0], atol=TOL, rtol=0.0) for v in vectors):
        raise DegenerateInstanceError("All attribute vectors are identical; every dual gap is zero")


def dual_gap_at(instance: Instance, partner: str, p: NormLike) -> float:
    """max over a' != partner of ||u(partner) - u(a')|| in the dual norm of p."""
    if instance.n < 2:
        raise PreconditionError("Dual gaps need at least two A-agents")
    _check_not_degenerate(instance)
    q = dual_norm(p)
    u = instance.u(partner)
    return max(vector_norm(u - instance.u(other), q) for other in instance.a_agents if other != partner)


def dual_gap(instance: Instance, mu: Matching, b: str, p: NormLike) -> float:
    return dual_gap_at(instance, mu.partner_of(b), p)


def margin_ratio(instance: Instance, s: np.ndarray, partner: str, p: NormLike, denominator: str = "partner") -> float:
    """min over candidates ranked below partner of margin / dual gap (inf when none).

    With ``denominator="pair"`` each candidate uses ||(u(other) - u(partner))_+|| instead.
    """
    below = [a for a in instance.a_agents if a != partner and instance.prefers(s, partner, a)]
    if not below:
        return math.inf
    q = dual_norm(p)
    gap_max = dual_gap_at(instance, partner, p) if denominator == "partner" else None
    best = math.inf
    for a in below:
        diff = instance.u(partner) - instance.u(a)
        gamma = float(np.dot(s, diff))
        if denominator == "partner":
            denom = gap_max
        else:
            denom = vector_norm(np.clip(-diff, 0.0, None), q)
            if denom <= TOL:
                continue
        best = min(best, max(0.0, gamma) / denom)
    return best


def base_ratios(instance: Instance, S: Optional[Profile], mu: Matching, p: NormLike) -> Dict[str, Dict[str, float]]:
    rows = instance.profile(S)
    return {
        b: {"ratio": margin_ratio(instance, rows[b], mu.partner_of(b), p), "dual_gap": dual_gap(instance, mu, b, p)}
        for b in instance.b_agents
    }


def base_radius(instance: Instance, S: Optional[Profile], mu: Matching, p: NormLike, eps_base: float = 0.01) -> float:
    """(1 - eps_base) * min_b min_{a below partner} gamma(b; a) / U(b)."""
    if not 0.0 <= eps_base < 1.0:
        raise InputError(f"eps_base must lie in [0, 1), got {eps_base}")
    require_stable(instance, S, mu)
    if instance.n == 1:
        return math.inf
    ratios = base_ratios(instance, S, mu, p)
    smallest = min(item["ratio"] for item in ratios.values())
    if math.isinf(smallest):
        return math.inf
    return (1.0 - eps_base) * smallest
