"""Stable-matching core: deferred acceptance, rotations and the rotation poset.

Rotations are oriented from the A-optimal matching toward the B-optimal one:
eliminating ``((a_0, b_0), ..., (a_{k-1}, b_{k-1}))`` hands ``b_i`` to
``a_{i+1}``, so every B-agent on the cycle improves and every A-agent worsens.
"""

import itertools
import logging
from collections import deque
from dataclasses import dataclass
from typing import Any, Dict, FrozenSet, Iterable, Iterator, List, Optional, Set, Tuple, Union

import networkx as nx

from core.errors import EnumerationLimitError, InputError, PreconditionError
from core.market import Instance, Matching, Preferences, Profile, resolve_preferences

logger = logging.getLogger(__name__)

BRUTEFORCE_LIMIT = 8
DEFAULT_DOWNSET_CAP = 1_000_000

Market = Union[Instance, Preferences]


def deferred_acceptance(market: Market, S: Optional[Profile] = None, proposing_side: str = "B") -> Matching:
    """Proposer-optimal stable matching; "B" gives mu_B, "A" gives mu_A."""
    prefs = resolve_preferences(market, S)
    side = proposing_side.upper()
    if side not in ("A", "B"):
        raise InputError(f"proposing_side must be 'A' or 'B', got {proposing_side!r}")
    if side == "A":
        lists, rank = prefs.a_prefs, prefs.b_rank
    else:
        lists, rank = prefs.b_prefs, prefs.a_rank

    free = deque(lists)
    next_choice = {p: 0 for p in lists}
    held: Dict[str, str] = {}
    proposals = 0
    while free:
        proposer = free.popleft()
        receiver = lists[proposer][next_choice[proposer]]
        next_choice[proposer] += 1
        proposals += 1
        current = held.get(receiver)
        if current is None:
            held[receiver] = proposer
        elif rank[receiver][proposer] < rank[receiver][current]:
            held[receiver] = proposer
            free.append(current)
        else:
            free.append(proposer)
    logger.debug(f"{side}-proposing deferred acceptance finished after {proposals} proposals")

    if side == "A":
        by_a = {a: b for b, a in held.items()}
    else:
        by_a = held
    return Matching({a: by_a[a] for a in prefs.a_agents})


def enumerate_stable_bruteforce(market: Market, S: Optional[Profile] = None) -> List[Matching]:
    """All stable matchings by scanning every bijection (oracle scale only)."""
    prefs = resolve_preferences(market, S)
    if prefs.n > BRUTEFORCE_LIMIT:
        raise EnumerationLimitError(f"Brute-force enumeration is limited to n <= {BRUTEFORCE_LIMIT}, got n={prefs.n}")
    found = []
    for perm in itertools.permutations(prefs.b_agents):
        mu = Matching(dict(zip(prefs.a_agents, perm)))
        if _is_stable_fast(prefs, mu):
            found.append(mu)
    return sorted(found, key=Matching.key)


def _is_stable_fast(prefs: Preferences, mu: Matching) -> bool:
    for a in prefs.a_agents:
        current = prefs.a_rank[a][mu.partner(a)]
        for b in prefs.a_prefs[a][:current]:
            if prefs.b_prefers(b, a, mu.partner_of(b)):
                return False
    return True


@dataclass(frozen=True)
class Rotation:
    id: int
    cycle: Tuple[Tuple[str, str], ...]

    def moves(self) -> List[Tuple[str, str, str]]:
        """(a, old partner, new partner) for every A-agent on the cycle."""
        size = len(self.cycle)
        return [(self.cycle[(i + 1) % size][0], self.cycle[(i + 1) % size][1], self.cycle[i][1]) for i in range(size)]

    def produced(self) -> List[Tuple[str, str]]:
        return [(a, new) for a, _, new in self.moves()]

    def to_dict(self) -> Dict[str, Any]:
        return {"id": self.id, "cycle": [list(pair) for pair in self.cycle]}


def _next_map(prefs: Preferences, pairs: Dict[str, str]) -> Dict[str, str]:
    inverse = {b: a for a, b in pairs.items()}
    successor = {}
    for a in prefs.a_agents:
        start = prefs.a_rank[a][pairs[a]]
        for b in prefs.a_prefs[a][start + 1 :]:
            if prefs.b_prefers(b, a, inverse[b]):
                successor[a] = inverse[b]
                break
    return successor


def _exposed_cycles(prefs: Preferences, pairs: Dict[str, str]) -> List[Tuple[Tuple[str, str], ...]]:
    """Cycles of the successor map, each written as a rotation and ordered canonically."""
    successor = _next_map(prefs, pairs)
    order = {a: i for i, a in enumerate(prefs.a_agents)}
    color: Dict[str, int] = {}
    cycles = []
    for start in prefs.a_agents:
        path = []
        x = start
        while x in successor and color.get(x, 0) == 0:
            color[x] = 1
            path.append(x)
            x = successor[x]
        if color.get(x, 0) == 1:
            loop = path[path.index(x) :]
            agents = [loop[0]] + loop[:0:-1]
            pivot = min(range(len(agents)), key=lambda i: order[agents[i]])
            agents = agents[pivot:] + agents[:pivot]
            cycles.append(tuple((a, pairs[a]) for a in agents))
        for y in path:
            color[y] = 2
    cycles.sort(key=lambda cyc: order[cyc[0][0]])
    return cycles


def _apply(pairs: Dict[str, str], rotation: Rotation) -> Dict[str, str]:
    updated = dict(pairs)
    for a, _, new in rotation.moves():
        updated[a] = new
    return updated


class RotationPoset:
    """Rotations with their covering relation; down-sets encode stable matchings."""

    def __init__(self, prefs: Preferences, rotations: List[Rotation], covers: List[Tuple[int, int]], a_optimal: Matching, b_optimal: Matching):
        self.prefs = prefs
        self.rotations = rotations
        self.covers = sorted(covers)
        self.a_optimal = a_optimal
        self.b_optimal = b_optimal
        self.graph = nx.DiGraph()
        self.graph.add_nodes_from(range(len(rotations)))
        self.graph.add_edges_from(self.covers)
        self.producer: Dict[Tuple[str, str], int] = {}
        self.eliminator: Dict[Tuple[str, str], int] = {}
        for rot in rotations:
            for pair in rot.cycle:
                self.eliminator[pair] = rot.id
            for pair in rot.produced():
                self.producer[pair] = rot.id

    def __len__(self) -> int:
        return len(self.rotations)

    def direct_predecessors(self, rid: int) -> List[int]:
        return sorted(self.graph.predecessors(rid))

    def is_downset(self, members: Iterable[int]) -> bool:
        members = set(members)
        return all(set(self.direct_predecessors(rid)) <= members for rid in members)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "rotations": [rot.to_dict() for rot in self.rotations],
            "covers": [list(edge) for edge in self.covers],
        }


def build_rotation_poset(market: Market, S: Optional[Profile] = None) -> RotationPoset:
    """Discover all rotations along one maximal chain mu_A -> mu_B and their precedence."""
    prefs = resolve_preferences(market, S)
    mu_a = deferred_acceptance(prefs, proposing_side="A")
    mu_b = deferred_acceptance(prefs, proposing_side="B")

    pairs = dict(mu_a.pairs)
    rotations: List[Rotation] = []
    producer: Dict[Tuple[str, str], int] = {}
    crossings: Dict[str, List[Tuple[int, str, str]]] = {}
    edges: Set[Tuple[int, int]] = set()
    while True:
        cycles = _exposed_cycles(prefs, pairs)
        if not cycles:
            break
        rot = Rotation(len(rotations), cycles[0])
        for pair in rot.cycle:
            if pair in producer:
                edges.add((producer[pair], rot.id))
        for a, old, new in rot.moves():
            producer[(a, new)] = rot.id
        size = len(rot.cycle)
        for i, (a, b) in enumerate(rot.cycle):
            crossings.setdefault(b, []).append((rot.id, a, rot.cycle[(i + 1) % size][0]))
        rotations.append(rot)
        pairs = _apply(pairs, rot)

    if pairs != mu_b.pairs:
        logger.warning("Rotation chain did not end at the B-optimal matching")

    for rot in rotations:
        for a, old, new in rot.moves():
            lo, hi = prefs.a_rank[a][old], prefs.a_rank[a][new]
            for b_star in prefs.a_prefs[a][lo + 1 : hi]:
                rank = prefs.b_rank[b_star]
                for rid, before, after in crossings.get(b_star, []):
                    if rid != rot.id and rank[before] > rank[a] > rank[after]:
                        edges.add((rid, rot.id))

    graph = nx.DiGraph()
    graph.add_nodes_from(range(len(rotations)))
    graph.add_edges_from(edges)
    covers = list(nx.transitive_reduction(graph).edges) if edges else []
    logger.debug(f"Rotation poset: {len(rotations)} rotations, {len(covers)} covering edges")
    return RotationPoset(prefs, rotations, covers, mu_a, mu_b)


def eliminate(mu: Matching, rho: Rotation, prefs: Optional[Preferences] = None) -> Matching:
    """Eliminate an exposed rotation; with preferences given, exposure is checked in full."""
    for a, b in rho.cycle:
        if mu.pairs.get(a) != b:
            raise PreconditionError(f"Rotation {rho.id} is not exposed: {a} is not matched to {b}")
    if prefs is not None:
        successor = _next_map(prefs, mu.pairs)
        size = len(rho.cycle)
        for i in range(size):
            a_next = rho.cycle[(i + 1) % size][0]
            if successor.get(a_next) != rho.cycle[i][0]:
                raise PreconditionError(f"Rotation {rho.id} is not exposed at this matching")
    return Matching(_apply(mu.pairs, rho))


def matching_from_downset(poset: RotationPoset, D: Iterable[int]) -> Matching:
    members = set(D)
    unknown = members - set(range(len(poset)))
    if unknown:
        raise PreconditionError(f"Unknown rotation ids {sorted(unknown)}")
    if not poset.is_downset(members):
        raise PreconditionError(f"{sorted(members)} is not closed under predecessors")
    pairs = dict(poset.a_optimal.pairs)
    for rid in sorted(members):
        pairs = _apply(pairs, poset.rotations[rid])
    return Matching(pairs)


def exposed_rotations(poset: RotationPoset, D: Iterable[int]) -> List[int]:
    """Minimal rotations outside the down-set D."""
    members = set(D)
    return [rid for rid in range(len(poset)) if rid not in members and set(poset.direct_predecessors(rid)) <= members]


def iter_downsets(poset: RotationPoset, cap: int = DEFAULT_DOWNSET_CAP) -> Iterator[FrozenSet[int]]:
    """Every down-set, by deciding rotations in id order (a linear extension)."""
    total = len(poset)
    preds = [set(poset.direct_predecessors(rid)) for rid in range(total)]
    produced = 0
    stack: List[Tuple[int, FrozenSet[int]]] = [(0, frozenset())]
    while stack:
        position, members = stack.pop()
        if position == total:
            produced += 1
            if produced > cap:
                raise EnumerationLimitError(f"More than {cap} stable matchings; enumeration refused")
            yield members
            continue
        stack.append((position + 1, members))
        if preds[position] <= members:
            stack.append((position + 1, members | {position}))


def enumerate_downsets(poset: RotationPoset, cap: int = DEFAULT_DOWNSET_CAP) -> List[FrozenSet[int]]:
    return sorted(iter_downsets(poset, cap), key=lambda d: (len(d), sorted(d)))


def enumerate_stable(poset: RotationPoset, cap: int = DEFAULT_DOWNSET_CAP) -> List[Matching]:
    return sorted((matching_from_downset(poset, d) for d in iter_downsets(poset, cap)), key=Matching.key)


def a_optimal(market: Market, S: Optional[Profile] = None) -> Matching:
    return deferred_acceptance(market, S, proposing_side="A")


def b_optimal(market: Market, S: Optional[Profile] = None) -> Matching:
    return deferred_acceptance(market, S, proposing_side="B")
