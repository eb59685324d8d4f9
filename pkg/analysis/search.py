"""Anytime best-first search for the most robust stable matching.

Nodes are down-sets of the rotation poset. Each node carries the relaxation
bound of its sublattice; the incumbent lower bound starts from the
B-optimal matching and only grows.
"""

import heapq
import logging
import math
from dataclasses import dataclass, field
from typing import Any, Dict, FrozenSet, List, Optional, Set, Tuple

from analysis.relaxation import restricted_ub
from analysis.robustness import ThresholdOracle, robustness_radius
from core.errors import InputError
from core.market import Instance, Matching, NormLike, Profile, norm_label
from core.stable import RotationPoset, b_optimal, build_rotation_poset, exposed_rotations, matching_from_downset
from utils.parallel import parallel_map

logger = logging.getLogger(__name__)

CERTIFY_SLACK = 1e-12


def lb_init(instance: Instance, S: Optional[Profile], k: Optional[int], p: NormLike, oracle: Optional[ThresholdOracle] = None) -> Tuple[Matching, float]:
    """The B-optimal matching and its exact radius."""
    mu = b_optimal(instance, S)
    return mu, robustness_radius(instance, S, mu, k, p, oracle=oracle).radius


@dataclass
class SearchNode:
    downset: FrozenSet[int]
    ub: float
    matching: Matching
    exact_radius: Optional[float] = None

    @property
    def key(self) -> Tuple[int, ...]:
        return tuple(sorted(self.downset))

    def priority(self) -> Tuple[float, int, Tuple[int, ...]]:
        return (-self.ub, len(self.downset), self.key)


@dataclass
class SearchState:
    lb: float
    best: Matching
    frontier: List[Tuple[Tuple[float, int, Tuple[int, ...]], SearchNode]] = field(default_factory=list)
    expansions: int = 0
    certified: bool = False
    trace: List[Dict[str, Any]] = field(default_factory=list)
    eps_ub: float = 1e-4
    # bound of the node whose children are being generated
    open_ub: float = -math.inf

    @property
    def frontier_max(self) -> float:
        return self.frontier[0][1].ub if self.frontier else -math.inf

    @property
    def ub_frontier(self) -> float:
        return max(self.lb, self.frontier_max, self.open_ub)

    def push(self, node: SearchNode) -> None:
        heapq.heappush(self.frontier, (node.priority(), node))

    def pop(self) -> SearchNode:
        return heapq.heappop(self.frontier)[1]

    def record(self, event: str, node: Optional[SearchNode] = None, **extra: Any) -> None:
        entry = {"event": event, "lb": self.lb, "ub_frontier": self.ub_frontier, "node": list(node.key) if node else None}
        entry.update(extra)
        self.trace.append(entry)
        logger.debug(f"search {event}: lb={self.lb:.6g} ub_frontier={self.ub_frontier:.6g} node={entry['node']}")

    def to_dict(self) -> Dict[str, Any]:
        return {
            "lb": self.lb,
            "ub_frontier": self.ub_frontier,
            "best": self.best.to_list(),
            "expansions": self.expansions,
            "certified": self.certified,
            "certificate_slack": self.eps_ub,
            "frontier": [{"downset": list(node.key), "ub": node.ub} for _, node in sorted(self.frontier, key=lambda item: item[0])],
        }


def _better(radius: float, mu: Matching, state: SearchState) -> bool:
    if radius > state.lb:
        return True
    return radius == state.lb and mu.key() < state.best.key()


def most_robust_anytime(
    instance: Instance,
    S: Optional[Profile],
    k: Optional[int],
    p: NormLike,
    budget: int,
    eps_ub: float = 1e-4,
    mode: str = "threshold",
    workers: int = 1,
    poset: Optional[RotationPoset] = None,
    allow_approximation: bool = False,
) -> SearchState:
    """Best-first search over down-sets; stops when certified or after ``budget`` expansions."""
    if budget < 0:
        raise InputError(f"Search budget must be >= 0, got {budget}")
    poset = poset or build_rotation_poset(instance, S)
    oracle = ThresholdOracle(instance, S, k, p)

    def bound(members: FrozenSet[int]) -> float:
        return restricted_ub(instance, S, members, k, p, eps_ub, poset, mode, oracle, allow_approximation).value

    mu_b, radius_b = lb_init(instance, S, k, p, oracle)
    state = SearchState(lb=radius_b, best=mu_b, eps_ub=eps_ub)
    root = SearchNode(frozenset(), bound(frozenset()), poset.a_optimal)
    state.push(root)
    seen: Set[FrozenSet[int]] = {root.downset}
    state.record("init", root, ub=root.ub)
    logger.info(f"Search started: LB {state.lb:.6g} from the B-optimal matching, root UB {root.ub:.6g} ({norm_label(p)})")

    while True:
        if not state.frontier or state.lb >= state.frontier_max - eps_ub - CERTIFY_SLACK:
            state.certified = True
            state.record("certify")
            break
        if state.expansions >= budget:
            state.record("budget")
            break
        node = state.pop()
        if node.ub <= state.lb:
            state.record("prune", node, ub=node.ub)
            continue

        state.open_ub = node.ub
        node.exact_radius = robustness_radius(instance, S, node.matching, k, p, oracle=oracle).radius
        state.expansions += 1
        if _better(node.exact_radius, node.matching, state):
            state.lb = node.exact_radius
            state.best = node.matching
        state.record("evaluate", node, radius=node.exact_radius, ub=node.ub)

        children = []
        for rid in exposed_rotations(poset, node.downset):
            members = node.downset | {rid}
            if members not in seen:
                seen.add(members)
                children.append(members)
        bounds = parallel_map(bound, children, workers)
        for members, value in zip(children, bounds):
            child = SearchNode(members, min(value, node.ub), matching_from_downset(poset, members))
            if child.ub <= state.lb:
                state.record("prune", child, ub=child.ub)
                continue
            state.push(child)
            state.record("push", child, ub=child.ub)
        state.open_ub = -math.inf

    if state.certified:
        logger.info(f"Search certified after {state.expansions} expansions: radius {state.lb:.6g}")
    else:
        logger.warning(f"Search budget exhausted: LB {state.lb:.6g}, UB {state.ub_frontier:.6g}")
    return state
