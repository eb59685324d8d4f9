"""Robustness-cost frontier.

The upper side filters pairs by their base margin ratio and picks the cheapest
surviving stable matching as a maximum-weight closure of the rotation poset,
solved with one s-t minimum cut. The lower side is the LP bound with
vulnerability cuts from :mod:`analysis.relaxation`.
"""

import logging
import math
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, FrozenSet, List, Mapping, Optional, Set, Tuple, Union

import networkx as nx

from analysis.relaxation import cost_lb
from analysis.robustness import ThresholdOracle, base_radius, margin_ratio
from core.errors import InputError
from core.market import Instance, Matching, NormLike, Profile
from core.stable import RotationPoset, build_rotation_poset, matching_from_downset
from utils.parallel import parallel_map

logger = logging.getLogger(__name__)

DENOMINATORS = ("partner", "pair")
SOURCE = "source"
SINK = "sink"


@dataclass
class CostTable:
    c: Dict[str, Dict[str, float]]

    @classmethod
    def from_instance(cls, instance: Instance) -> "CostTable":
        return cls({a: {b: instance.cost(a, b) for b in instance.b_agents} for a in instance.a_agents})

    @classmethod
    def coerce(cls, instance: Instance, costs: Union["CostTable", Mapping[str, Mapping[str, float]], None]) -> "CostTable":
        if costs is None:
            return cls.from_instance(instance)
        if isinstance(costs, CostTable):
            return costs
        table = {}
        for a in instance.a_agents:
            row = costs.get(a, {})
            table[a] = {}
            for b in instance.b_agents:
                value = float(row.get(b, math.nan))
                if not math.isfinite(value):
                    raise InputError(f"Cost for ({a}, {b}) is missing or not finite")
                table[a][b] = value
        return cls(table)

    def __call__(self, a: str, b: str) -> float:
        return self.c[a][b]

    def total(self, mu: Matching) -> float:
        return float(sum(self.c[a][b] for a, b in mu.pairs.items()))


@dataclass
class CostSolution:
    feasible: bool
    matching: Optional[Matching] = None
    cost: float = math.inf
    downset: FrozenSet[int] = field(default_factory=frozenset)
    base_radius: Optional[float] = None

    def to_dict(self) -> Dict[str, Any]:
        return {
            "feasible": self.feasible,
            "matching": self.matching.to_list() if self.matching else None,
            "cost": self.cost if self.feasible else "infeasible",
            "downset": sorted(self.downset),
            "base_radius": self.base_radius,
        }


@dataclass
class FrontierPoint:
    tau: float
    c_ub: float
    c_lb: float
    matching_ub: Optional[Matching] = None

    @property
    def feasible(self) -> bool:
        return math.isfinite(self.c_ub)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "tau": self.tau,
            "c_lb": self.c_lb,
            "c_ub": self.c_ub if self.feasible else "infeasible",
            "matching": ";".join(f"{a}:{b}" for a, b in self.matching_ub.key()) if self.matching_ub else "",
        }


def pair_ratio(instance: Instance, S: Optional[Profile], a: str, b: str, p: NormLike, denominator: str = "partner") -> float:
    """Margin ratio of b when matched to a (inf when a is b's last choice)."""
    if denominator not in DENOMINATORS:
        raise InputError(f"Unknown denominator {denominator!r}; use one of {DENOMINATORS}")
    return margin_ratio(instance, instance.salience_row(b, S), a, p, denominator)


def base_feasible_matchings_constraint(instance: Instance, S: Optional[Profile], tau: float, p: NormLike, denominator: str = "partner") -> Callable[[str, str], bool]:
    """Predicate marking (a, b) admissible when b's margin ratio with partner a is at least tau."""
    if tau < 0:
        raise InputError(f"tau must be non-negative, got {tau}")
    ratios = {(a, b): pair_ratio(instance, S, a, b, p, denominator) for a in instance.a_agents for b in instance.b_agents}
    return lambda a, b: ratios[(a, b)] >= tau


def rotation_cost_delta(poset: RotationPoset, rid: int, costs: CostTable) -> float:
    return sum(costs(a, new) - costs(a, old) for a, old, new in poset.rotations[rid].moves())


def literal_rotation_weight(instance: Instance, S: Optional[Profile], poset: RotationPoset, rid: int, tau: float, p: NormLike, costs: CostTable) -> float:
    """Single-scalar weight mixing margin shortfall and cost change; experimental only."""
    shortfall = 0.0
    for a, old, new in poset.rotations[rid].moves():
        shortfall += min(0.0, pair_ratio(instance, S, a, new, p) - tau)
        shortfall -= min(0.0, pair_ratio(instance, S, a, old, p) - tau)
    return shortfall - rotation_cost_delta(poset, rid, costs)


def _closure_graph(poset: RotationPoset, admissible: Callable[[str, str], bool]) -> Tuple[nx.DiGraph, Set[int], Set[int], bool]:
    """Infinite arcs for precedence and admissibility; returns the graph with forced and forbidden rotations."""
    graph = nx.DiGraph()
    graph.add_nodes_from(range(len(poset)))
    for rid in range(len(poset)):
        for pred in poset.direct_predecessors(rid):
            graph.add_edge(rid, pred)
    forced: Set[int] = set()
    forbidden: Set[int] = set()
    for a, b in poset.a_optimal.pairs.items():
        if admissible(a, b):
            continue
        if (a, b) not in poset.eliminator:
            return graph, forced, forbidden, False
        forced.add(poset.eliminator[(a, b)])
    for pair, rid in poset.producer.items():
        if admissible(*pair):
            continue
        if pair in poset.eliminator:
            graph.add_edge(rid, poset.eliminator[pair])
        else:
            forbidden.add(rid)
    return graph, forced, forbidden, True


def min_cost_given_base_radius(
    instance: Instance,
    S: Optional[Profile],
    costs: Union[CostTable, Mapping[str, Mapping[str, float]], None],
    tau: float,
    p: NormLike,
    eps_base: float = 0.01,
    poset: Optional[RotationPoset] = None,
    denominator: str = "partner",
) -> CostSolution:
    """Cheapest stable matching whose every pair passes the tau admissibility filter."""
    table = CostTable.coerce(instance, costs)
    poset = poset or build_rotation_poset(instance, S)
    admissible = base_feasible_matchings_constraint(instance, S, tau, p, denominator)
    graph, forced, forbidden, ok = _closure_graph(poset, admissible)
    if not ok:
        logger.debug(f"tau={tau:.6g}: an inadmissible pair is shared by every stable matching")
        return CostSolution(False)

    required: Set[int] = set(forced)
    for rid in forced:
        required |= nx.descendants(graph, rid)
    if required & forbidden:
        logger.debug(f"tau={tau:.6g}: forced and forbidden rotations collide")
        return CostSolution(False)

    flow = nx.DiGraph()
    flow.add_nodes_from([SOURCE, SINK])
    flow.add_edges_from(graph.edges)
    for rid in range(len(poset)):
        weight = -rotation_cost_delta(poset, rid, table)
        flow.add_node(rid)
        if rid in forced:
            flow.add_edge(SOURCE, rid)
        elif weight > 0:
            flow.add_edge(SOURCE, rid, capacity=weight)
        if rid in forbidden:
            flow.add_edge(rid, SINK)
        elif weight < 0:
            flow.add_edge(rid, SINK, capacity=-weight)
    _, (source_side, _) = nx.minimum_cut(flow, SOURCE, SINK)
    downset = frozenset(node for node in source_side if node != SOURCE)

    mu = matching_from_downset(poset, downset)
    radius = base_radius(instance, S, mu, p, eps_base)
    return CostSolution(True, mu, table.total(mu), downset, radius)


def breakpoints(instance: Instance, S: Optional[Profile], p: NormLike, denominator: str = "partner") -> List[float]:
    """Every finite pair ratio; the upper frontier only changes at these values."""
    values = {
        pair_ratio(instance, S, a, b, p, denominator)
        for a in instance.a_agents
        for b in instance.b_agents
    }
    return sorted(v for v in values if math.isfinite(v))


def frontier(
    instance: Instance,
    S: Optional[Profile],
    costs: Union[CostTable, Mapping[str, Mapping[str, float]], None],
    p: NormLike,
    k: Optional[int],
    eps_base: float = 0.01,
    step: float = 1e-6,
    denominator: str = "partner",
    workers: int = 1,
) -> List[FrontierPoint]:
    """Upper and lower cost bounds at tau = 0, at every breakpoint and just past it."""
    table = CostTable.coerce(instance, costs)
    poset = build_rotation_poset(instance, S)
    oracle = ThresholdOracle(instance, S, k, p)
    bps = breakpoints(instance, S, p, denominator)
    taus = sorted({0.0} | set(bps) | {bp + step for bp in bps})

    def evaluate(tau: float) -> FrontierPoint:
        upper = min_cost_given_base_radius(instance, S, table, tau, p, eps_base, poset, denominator)
        lower = cost_lb(instance, S, table.c, tau, k, p, oracle)
        return FrontierPoint(tau, upper.cost, lower, upper.matching)

    points = parallel_map(evaluate, taus, workers, progress="frontier" if len(taus) > 20 else None)
    for point in points:
        if point.c_lb > point.c_ub + 1e-7:
            logger.warning(f"Cost bounds crossed at tau={point.tau:.6g}: {point.c_lb:.9g} > {point.c_ub:.9g}")
    logger.info(f"Frontier traced at {len(points)} tau values")
    return points
