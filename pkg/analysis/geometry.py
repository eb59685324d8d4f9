"""Robustness region of a matching: one polytope factor per B-agent inside the simplex.

Factors are handled in reduced coordinates x = (s_1, ..., s_{m-1}) with
s_m = 1 - sum(x), where the simplex becomes {x >= 0, sum(x) <= 1}. Volumes are
reported relative to the simplex, so the full factor has volume 1.
"""

import itertools
import logging
import math
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Tuple

import numpy as np
from scipy.spatial import ConvexHull, QhullError

from core.errors import InputError, UnsupportedDimensionError
from core.lp import LPBuilder, lp_solve
from core.market import TOL, Instance, Matching, Profile, blockers, is_stable
from utils.parallel import parallel_map

logger = logging.getLogger(__name__)

VERTEX_DIMENSION_CAP = 6
EXACT_DIMENSION_CAP = 4
MIN_SAMPLES = 1000
Z_95 = 1.959963984540054


@dataclass
class RegionFactor:
    b: str
    m: int
    halfspaces: List[np.ndarray] = field(default_factory=list)
    blockers: List[str] = field(default_factory=list)
    vertex_cache: Optional[List[np.ndarray]] = None

    def contains(self, s: np.ndarray, tol: float = TOL) -> bool:
        return all(float(np.dot(w, s)) >= -tol for w in self.halfspaces)

    def reduced(self) -> Tuple[np.ndarray, np.ndarray]:
        """(A, b) with A x <= b describing the factor in reduced coordinates."""
        d = self.m - 1
        rows, rhs = [], []
        for i in range(d):
            row = np.zeros(d)
            row[i] = -1.0
            rows.append(row)
            rhs.append(0.0)
        rows.append(np.ones(d))
        rhs.append(1.0)
        for w in self.halfspaces:
            rows.append(-(w[:d] - w[d]))
            rhs.append(float(w[d]))
        return np.array(rows).reshape(len(rows), d), np.array(rhs)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "b": self.b,
            "halfspaces": [{"normal": w.tolist(), "offset": 0.0, "blocker": a} for w, a in zip(self.halfspaces, self.blockers)],
            "vertices": [v.tolist() for v in self.vertex_cache] if self.vertex_cache is not None else None,
        }


@dataclass
class Membership:
    inside: bool
    stable: bool

    def __bool__(self) -> bool:
        return self.inside


@dataclass
class Region:
    instance: Instance
    matching: Matching
    factors: List[RegionFactor]

    def factor(self, b: str) -> RegionFactor:
        for item in self.factors:
            if item.b == b:
                return item
        raise InputError(f"Unknown B-agent {b!r}")

    def to_dict(self) -> Dict[str, Any]:
        return {"matching": self.matching.to_list(), "factors": [f.to_dict() for f in self.factors]}


def region(instance: Instance, mu: Matching) -> Region:
    """Halfspaces s . (u(partner) - u(a)) >= 0 for every blocker a of every b."""
    factors = []
    for b in instance.b_agents:
        partner = mu.partner_of(b)
        candidates = blockers(instance, None, mu, b)
        normals = [instance.u(partner) - instance.u(a) for a in candidates]
        factors.append(RegionFactor(b, instance.m, normals, list(candidates)))
    return Region(instance, mu, factors)


def contains(reg: Region, S: Optional[Profile] = None) -> Membership:
    """Closed-region membership, reported next to tie-broken stability."""
    rows = reg.instance.profile(S)
    inside = all(f.contains(rows[f.b]) for f in reg.factors)
    return Membership(inside, is_stable(reg.instance, S, reg.matching))


def _lift(x: np.ndarray) -> np.ndarray:
    return np.append(x, 1.0 - float(np.sum(x)))


def _dedupe(points: List[np.ndarray], tol: float = 1e-9) -> List[np.ndarray]:
    unique: List[np.ndarray] = []
    for point in points:
        if not any(np.max(np.abs(point - other)) <= tol for other in unique):
            unique.append(point)
    return sorted(unique, key=lambda v: tuple(np.round(v, 12)))


def vertices(factor: RegionFactor, cap: int = VERTEX_DIMENSION_CAP) -> List[np.ndarray]:
    """All vertices of the factor as points of the simplex."""
    if factor.m > cap:
        raise UnsupportedDimensionError(f"Vertex enumeration is limited to m <= {cap}, got m={factor.m}")
    if factor.vertex_cache is not None:
        return factor.vertex_cache
    d = factor.m - 1
    if d == 0:
        found = [np.ones(1)] if factor.contains(np.ones(1)) else []
        factor.vertex_cache = found
        return found
    A, b = factor.reduced()
    points = []
    for active in itertools.combinations(range(len(b)), d):
        sub = A[list(active)]
        if abs(np.linalg.det(sub)) <= 1e-12:
            continue
        x = np.linalg.solve(sub, b[list(active)])
        if np.all(A @ x <= b + 1e-9):
            points.append(_lift(x))
    factor.vertex_cache = _dedupe(points)
    return factor.vertex_cache


def polygon(factor: RegionFactor) -> List[np.ndarray]:
    """Vertices of a factor on the 2-simplex in counter-clockwise order."""
    if factor.m != 3:
        raise UnsupportedDimensionError(f"Polygons are only drawn for m=3, got m={factor.m}")
    points = vertices(factor)
    if len(points) < 3:
        return points
    center = np.mean([p[:2] for p in points], axis=0)
    return sorted(points, key=lambda p: math.atan2(p[1] - center[1], p[0] - center[0]))


def factor_volume_exact(factor: RegionFactor, cap: int = EXACT_DIMENSION_CAP) -> float:
    if factor.m > cap:
        raise UnsupportedDimensionError(f"Exact volume is limited to m <= {cap}, got m={factor.m}")
    if not factor.halfspaces:
        return 1.0
    d = factor.m - 1
    points = vertices(factor)
    if d == 0:
        return 1.0 if points else 0.0
    if len(points) < d + 1:
        return 0.0
    reduced = np.array([p[:d] for p in points])
    if d == 1:
        return float(reduced.max() - reduced.min())
    try:
        hull = ConvexHull(reduced)
    except QhullError:
        return 0.0
    center = reduced[hull.vertices].mean(axis=0)
    # fan of simplices from the centroid; the standard simplex has volume 1/d!
    return float(sum(abs(np.linalg.det(reduced[facet] - center)) for facet in hull.simplices))


def volume_exact(reg: Region, cap: int = EXACT_DIMENSION_CAP) -> float:
    """Relative volume of the region: the product of its factor volumes."""
    return float(np.prod([factor_volume_exact(f, cap) for f in reg.factors]))


@dataclass
class FactorEstimate:
    b: str
    estimate: float
    rel_variance: float
    method: str
    degenerate: bool = False


@dataclass
class VolumeEstimate:
    estimate: float
    half_width: float
    degenerate: bool
    seed: int
    factors: List[FactorEstimate] = field(default_factory=list)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "estimate": self.estimate,
            "half_width": self.half_width,
            "degenerate": self.degenerate,
            "seed": self.seed,
            "factors": [{"b": f.b, "estimate": f.estimate, "method": f.method, "degenerate": f.degenerate} for f in self.factors],
        }


def chebyshev_center(A: np.ndarray, b: np.ndarray) -> Tuple[np.ndarray, float]:
    """Center and radius of the largest ball inside {x: A x <= b}."""
    builder = LPBuilder()
    xs = [builder.add_variable(lower=-math.inf) for _ in range(A.shape[1])]
    rho = builder.add_variable(upper=1.0)
    for row, rhs in zip(A, b):
        coeffs = {idx: float(v) for idx, v in zip(xs, row)}
        coeffs[rho] = float(np.linalg.norm(row))
        builder.add_constraint(coeffs, "<=", float(rhs))
    builder.set_objective({rho: 1.0}, maximize=True)
    result = lp_solve(builder.build())
    if not result.optimal:
        return np.zeros(A.shape[1]), 0.0
    return np.array([result.x[i] for i in xs]), float(result.x[rho])


def hit_and_run(A: np.ndarray, b: np.ndarray, start: np.ndarray, samples: int, rng: np.random.Generator, burn_in: int = 1000, thinning: int = 10, chains: int = 64) -> np.ndarray:
    """Approximately uniform points in {A x <= b}, from parallel chains started at one interior point."""
    d = A.shape[1]
    X = np.tile(start, (chains, 1))
    rounds = int(math.ceil(samples / chains))
    out = np.empty((rounds * chains, d))
    total = burn_in + rounds * thinning
    kept = 0
    for step in range(total):
        direction = rng.standard_normal((chains, d))
        direction /= np.linalg.norm(direction, axis=1, keepdims=True)
        slack = np.maximum(b[None, :] - X @ A.T, 0.0)
        rate = direction @ A.T
        with np.errstate(divide="ignore", invalid="ignore"):
            bound = slack / rate
        t_hi = np.where(rate > 1e-15, bound, np.inf).min(axis=1)
        t_lo = np.where(rate < -1e-15, bound, -np.inf).max(axis=1)
        X = X + (t_lo + (t_hi - t_lo) * rng.random(chains))[:, None] * direction
        if step >= burn_in and (step - burn_in) % thinning == thinning - 1:
            out[kept * chains : (kept + 1) * chains] = X
            kept += 1
    return out[:samples]


def _fraction(hits: np.ndarray) -> Tuple[float, float]:
    ratio = float(np.mean(hits))
    variance = ratio * (1.0 - ratio) / hits.size
    return ratio, variance


def factor_volume_mc(factor: RegionFactor, samples: int, rng: np.random.Generator, burn_in: int = 1000, thinning: int = 10, chains: int = 64) -> FactorEstimate:
    """Rejection sampling for up to two halfspaces, telescoping hit-and-run beyond."""
    if not factor.halfspaces:
        return FactorEstimate(factor.b, 1.0, 0.0, "exact")
    if len(factor.halfspaces) <= 2:
        points = rng.dirichlet(np.ones(factor.m), samples)
        hits = np.all(points @ np.array(factor.halfspaces).T >= -TOL, axis=1)
        ratio, variance = _fraction(hits)
        if ratio == 0.0:
            return FactorEstimate(factor.b, 0.0, 0.0, "rejection", degenerate=True)
        return FactorEstimate(factor.b, ratio, variance / ratio**2, "rejection")

    d = factor.m - 1
    A, b = factor.reduced()
    base_rows = d + 1
    stages = len(factor.halfspaces)
    per_stage = max(1, samples // stages)
    estimate, rel_variance = 1.0, 0.0
    for j in range(stages):
        rows = base_rows + j
        if j == 0:
            points = rng.dirichlet(np.ones(factor.m), per_stage)[:, :d]
        else:
            center, radius = chebyshev_center(A[:rows], b[:rows])
            if radius <= 1e-12:
                logger.warning(f"Factor {factor.b} has no interior after {j} halfspaces")
                return FactorEstimate(factor.b, 0.0, 0.0, "hit-and-run", degenerate=True)
            points = hit_and_run(A[:rows], b[:rows], center, per_stage, rng, burn_in, thinning, chains)
        ratio, variance = _fraction(points @ A[rows] <= b[rows] + TOL)
        if ratio == 0.0:
            return FactorEstimate(factor.b, 0.0, 0.0, "hit-and-run", degenerate=True)
        estimate *= ratio
        rel_variance += variance / ratio**2
    return FactorEstimate(factor.b, estimate, rel_variance, "hit-and-run")


def volume_mc(reg: Region, samples: int = 200000, seed: int = 42, burn_in: int = 1000, thinning: int = 10, chains: int = 64, workers: int = 1) -> VolumeEstimate:
    """Monte Carlo relative volume with a 95% half-width from the delta method."""
    if samples < MIN_SAMPLES:
        raise InputError(f"volume_mc needs at least {MIN_SAMPLES} samples, got {samples}")
    children = np.random.SeedSequence(seed).spawn(len(reg.factors))
    estimates = parallel_map(
        lambda item: factor_volume_mc(item[0], samples, np.random.default_rng(item[1]), burn_in, thinning, chains),
        list(zip(reg.factors, children)),
        workers,
    )
    total = float(np.prod([f.estimate for f in estimates]))
    rel_variance = sum(f.rel_variance for f in estimates)
    degenerate = any(f.degenerate for f in estimates)
    half_width = Z_95 * total * math.sqrt(rel_variance)
    logger.info(f"Monte Carlo volume {total:.6g} +/- {half_width:.3g} ({samples} samples per factor, seed {seed})")
    return VolumeEstimate(total, half_width, degenerate, seed, estimates)
