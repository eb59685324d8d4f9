"""Market model: instances, salience-induced rankings, stability and perturbations.

Side A carries attribute vectors and static strict preference lists; side B
ranks A by the salience-weighted score ``s(b) . u(a)`` with a public
tie-break order. Perturbations of a salience vector are post-normalized: a
support ``Q`` is free, every coordinate outside ``Q`` is rescaled by a common
factor ``lambda`` and the result lies on the simplex.
"""

import logging
import math
from dataclasses import dataclass, field
from functools import cached_property, cmp_to_key
from typing import Any, Dict, FrozenSet, Iterable, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np

from core.errors import DegeneratePerturbationError, InputError, InstanceValidationError

logger = logging.getLogger(__name__)

TOL = 1e-9

NormLike = Union[int, float, str]
Profile = Mapping[str, Sequence[float]]


def parse_norm(p: NormLike) -> float:
    """Return 1.0, 2.0 or math.inf for the accepted spellings of a norm."""
    if isinstance(p, str):
        label = p.strip().lower()
        if label in ("inf", "infinity", "max"):
            return math.inf
        try:
            p = float(label)
        except ValueError:
            raise InputError(f"Unsupported norm: {p!r} (use 1, 2 or inf)")
    value = float(p)
    if value in (1.0, 2.0) or math.isinf(value):
        return math.inf if math.isinf(value) else value
    raise InputError(f"Unsupported norm: {p!r} (use 1, 2 or inf)")


def dual_norm(p: NormLike) -> float:
    """Hölder conjugate of p."""
    p = parse_norm(p)
    if p == 1.0:
        return math.inf
    if math.isinf(p):
        return 1.0
    return 2.0


def norm_label(p: NormLike) -> str:
    p = parse_norm(p)
    return "inf" if math.isinf(p) else str(int(p))


def vector_norm(v: Sequence[float], p: NormLike) -> float:
    return float(np.linalg.norm(np.asarray(v, dtype=float), ord=parse_norm(p)))


def as_salience(values: Sequence[float], name: str = "salience") -> np.ndarray:
    """Validate a simplex point, repairing drift up to TOL by renormalizing."""
    vec = np.asarray(values, dtype=float).reshape(-1)
    if not np.all(np.isfinite(vec)):
        raise InstanceValidationError("non_simplex", name, "entries must be finite")
    if np.any(vec < -TOL):
        raise InstanceValidationError("non_simplex", name, f"negative weight {float(vec.min()):.9g}")
    vec = np.clip(vec, 0.0, None)
    total = float(vec.sum())
    if abs(total - 1.0) > TOL:
        raise InstanceValidationError("non_simplex", name, f"row sum {total:.9g}")
    return vec / total


def score(s: Sequence[float], u: Sequence[float]) -> float:
    """Salience-weighted score of a candidate."""
    s = np.asarray(s, dtype=float)
    u = np.asarray(u, dtype=float)
    if s.shape != u.shape:
        raise InputError(f"Dimension mismatch: salience has {s.size} entries, attributes have {u.size}")
    return float(np.dot(s, u))


class Matching:
    """A perfect matching A -> B with its inverse."""

    def __init__(self, pairs: Mapping[str, str]):
        self.pairs: Dict[str, str] = dict(pairs)
        self.inverse: Dict[str, str] = {}
        for a, b in self.pairs.items():
            if b in self.inverse:
                raise InputError(f"Not a bijection: {b} assigned to {self.inverse[b]} and {a}")
            self.inverse[b] = a

    def partner(self, a: str) -> str:
        return self.pairs[a]

    def partner_of(self, b: str) -> str:
        return self.inverse[b]

    def key(self) -> Tuple[Tuple[str, str], ...]:
        return tuple(sorted(self.pairs.items()))

    def to_list(self) -> List[List[str]]:
        return [[a, b] for a, b in self.pairs.items()]

    def __eq__(self, other: object) -> bool:
        return isinstance(other, Matching) and self.key() == other.key()

    def __hash__(self) -> int:
        return hash(self.key())

    def __len__(self) -> int:
        return len(self.pairs)

    def __repr__(self) -> str:
        body = ", ".join(f"{a}->{b}" for a, b in self.pairs.items())
        return f"Matching({body})"


@dataclass(frozen=True, eq=False)
class Preferences:
    """Strict ordinal preference lists for both sides."""

    a_prefs: Dict[str, Tuple[str, ...]]
    b_prefs: Dict[str, Tuple[str, ...]]

    @cached_property
    def a_agents(self) -> Tuple[str, ...]:
        return tuple(self.a_prefs)

    @cached_property
    def b_agents(self) -> Tuple[str, ...]:
        return tuple(self.b_prefs)

    @property
    def n(self) -> int:
        return len(self.a_prefs)

    @cached_property
    def a_rank(self) -> Dict[str, Dict[str, int]]:
        return {a: {b: i for i, b in enumerate(lst)} for a, lst in self.a_prefs.items()}

    @cached_property
    def b_rank(self) -> Dict[str, Dict[str, int]]:
        return {b: {a: i for i, a in enumerate(lst)} for b, lst in self.b_prefs.items()}

    def a_prefers(self, a: str, b1: str, b2: str) -> bool:
        """True iff a strictly prefers b1 to b2."""
        rank = self.a_rank[a]
        return rank[b1] < rank[b2]

    def b_prefers(self, b: str, a1: str, a2: str) -> bool:
        rank = self.b_rank[b]
        return rank[a1] < rank[a2]

    def is_blocking(self, mu: Matching, a: str, b: str) -> bool:
        if mu.partner(a) == b:
            return False
        return self.a_prefers(a, b, mu.partner(a)) and self.b_prefers(b, a, mu.partner_of(b))

    def blocking_pairs(self, mu: Matching) -> List[Tuple[str, str]]:
        pairs = []
        for a in self.a_agents:
            current = self.a_rank[a][mu.partner(a)]
            for b in self.a_prefs[a][:current]:
                if self.b_prefers(b, a, mu.partner_of(b)):
                    pairs.append((a, b))
        return pairs

    def is_stable(self, mu: Matching) -> bool:
        return not self.blocking_pairs(mu)

    def with_b_list(self, b: str, order: Sequence[str]) -> "Preferences":
        b_prefs = dict(self.b_prefs)
        b_prefs[b] = tuple(order)
        return Preferences(dict(self.a_prefs), b_prefs)

    def with_a_list(self, a: str, order: Sequence[str]) -> "Preferences":
        a_prefs = dict(self.a_prefs)
        a_prefs[a] = tuple(order)
        return Preferences(a_prefs, dict(self.b_prefs))


def _check_permutation(values: Sequence[str], universe: Sequence[str], name: str) -> Tuple[str, ...]:
    values = tuple(values)
    if len(values) != len(universe) or set(values) != set(universe):
        raise InstanceValidationError("non_permutation", name, f"expected a permutation of {list(universe)}")
    return values


@dataclass(frozen=True, eq=False)
class Instance:
    """A salience market: attributes and static lists of A, salience rows of B."""

    a_agents: Tuple[str, ...]
    b_agents: Tuple[str, ...]
    attributes: Dict[str, np.ndarray]
    a_prefs: Dict[str, Tuple[str, ...]]
    salience: Dict[str, np.ndarray]
    tie_break: Tuple[str, ...]
    costs: Optional[Dict[str, Dict[str, float]]] = field(default=None)

    def __post_init__(self):
        a_agents = tuple(self.a_agents)
        b_agents = tuple(self.b_agents)
        if not a_agents:
            raise InstanceValidationError("missing_field", "a_agents", "at least one agent required")
        if len(set(a_agents)) != len(a_agents) or len(set(b_agents)) != len(b_agents):
            raise InstanceValidationError("non_permutation", "agents", "agent ids must be unique")
        if len(a_agents) != len(b_agents):
            raise InstanceValidationError(
                "dimension_mismatch", "b_agents", f"|A|={len(a_agents)} but |B|={len(b_agents)}"
            )

        attributes = {}
        dim = None
        for a in a_agents:
            if a not in self.attributes:
                raise InstanceValidationError("missing_field", f"attributes.{a}", "attribute vector missing")
            vec = np.asarray(self.attributes[a], dtype=float).reshape(-1)
            if dim is None:
                dim = vec.size
            if vec.size != dim:
                raise InstanceValidationError(
                    "dimension_mismatch", f"attributes.{a}", f"length {vec.size}, expected {dim}"
                )
            if not np.all(np.isfinite(vec)) or np.any(vec < 0):
                raise InstanceValidationError("negative_attribute", f"attributes.{a}", "entries must be finite and >= 0")
            attributes[a] = vec
        if dim is None or dim < 2:
            raise InstanceValidationError("dimension_mismatch", "attributes", "attribute dimension m must be >= 2")
        unknown = set(self.attributes) - set(a_agents)
        if unknown:
            raise InstanceValidationError("unknown_agent", "attributes", f"unknown agents {sorted(unknown)}")

        a_prefs = {}
        for a in a_agents:
            if a not in self.a_prefs:
                raise InstanceValidationError("missing_field", f"a_prefs.{a}", "preference list missing")
            a_prefs[a] = _check_permutation(self.a_prefs[a], b_agents, f"a_prefs.{a}")

        salience = {}
        for b in b_agents:
            if b not in self.salience:
                raise InstanceValidationError("missing_field", f"salience.{b}", "salience row missing")
            row = as_salience(self.salience[b], f"salience.{b}")
            if row.size != dim:
                raise InstanceValidationError("dimension_mismatch", f"salience.{b}", f"length {row.size}, expected {dim}")
            salience[b] = row
        unknown = set(self.salience) - set(b_agents)
        if unknown:
            raise InstanceValidationError("unknown_agent", "salience", f"unknown agents {sorted(unknown)}")

        tie_break = _check_permutation(self.tie_break, a_agents, "tie_break")

        costs = None
        if self.costs is not None:
            costs = {}
            unknown = set(self.costs) - set(a_agents)
            if unknown:
                raise InstanceValidationError("unknown_agent", "costs", f"unknown agents {sorted(unknown)}")
            for a in a_agents:
                row = self.costs.get(a, {})
                extra = set(row) - set(b_agents)
                if extra:
                    raise InstanceValidationError("unknown_agent", f"costs.{a}", f"unknown agents {sorted(extra)}")
                costs[a] = {}
                for b in b_agents:
                    if b not in row:
                        raise InstanceValidationError("missing_field", f"costs.{a}.{b}", "cost entry missing")
                    value = float(row[b])
                    if not math.isfinite(value):
                        raise InstanceValidationError("missing_field", f"costs.{a}.{b}", "cost must be finite")
                    costs[a][b] = value

        object.__setattr__(self, "a_agents", a_agents)
        object.__setattr__(self, "b_agents", b_agents)
        object.__setattr__(self, "attributes", attributes)
        object.__setattr__(self, "a_prefs", a_prefs)
        object.__setattr__(self, "salience", salience)
        object.__setattr__(self, "tie_break", tie_break)
        object.__setattr__(self, "costs", costs)

    @property
    def n(self) -> int:
        return len(self.a_agents)

    @property
    def m(self) -> int:
        return int(next(iter(self.attributes.values())).size)

    @cached_property
    def tie_position(self) -> Dict[str, int]:
        return {a: i for i, a in enumerate(self.tie_break)}

    @cached_property
    def a_rank(self) -> Dict[str, Dict[str, int]]:
        return {a: {b: i for i, b in enumerate(lst)} for a, lst in self.a_prefs.items()}

    def u(self, a: str) -> np.ndarray:
        try:
            return self.attributes[a]
        except KeyError:
            raise InputError(f"Unknown A-agent: {a}")

    def profile(self, S: Optional[Profile] = None) -> Dict[str, np.ndarray]:
        """Salience rows with any supplied rows overriding the instance's own."""
        if S is None:
            return self.salience
        rows = dict(self.salience)
        for b, row in S.items():
            if b not in rows:
                raise InputError(f"Unknown B-agent in profile: {b}")
            vec = as_salience(row, f"salience.{b}")
            if vec.size != self.m:
                raise InputError(f"Dimension mismatch for salience.{b}")
            rows[b] = vec
        return rows

    def salience_row(self, b: str, S: Optional[Profile] = None) -> np.ndarray:
        if b not in self.salience:
            raise InputError(f"Unknown B-agent: {b}")
        if S is not None and b in S:
            return as_salience(S[b], f"salience.{b}")
        return self.salience[b]

    def prefers(self, s: np.ndarray, a1: str, a2: str) -> bool:
        """True iff a B-agent with salience s strictly prefers a1 to a2."""
        diff = score(s, self.u(a1)) - score(s, self.u(a2))
        if diff > TOL:
            return True
        if diff < -TOL:
            return False
        return self.tie_position[a1] < self.tie_position[a2]

    def ranking(self, s: np.ndarray) -> List[str]:
        def compare(a1: str, a2: str) -> int:
            if a1 == a2:
                return 0
            return -1 if self.prefers(s, a1, a2) else 1

        return sorted(self.a_agents, key=cmp_to_key(compare))

    def preferences(self, S: Optional[Profile] = None) -> Preferences:
        rows = self.profile(S)
        b_prefs = {b: tuple(self.ranking(rows[b])) for b in self.b_agents}
        return Preferences(dict(self.a_prefs), b_prefs)

    def cost(self, a: str, b: str) -> float:
        if self.costs is None:
            return 0.0
        return self.costs[a][b]

    def to_dict(self) -> Dict[str, Any]:
        doc: Dict[str, Any] = {
            "m": self.m,
            "a_agents": list(self.a_agents),
            "b_agents": list(self.b_agents),
            "attributes": {a: self.attributes[a].tolist() for a in self.a_agents},
            "a_prefs": {a: list(self.a_prefs[a]) for a in self.a_agents},
            "salience": {b: self.salience[b].tolist() for b in self.b_agents},
            "tie_break": list(self.tie_break),
        }
        if self.costs is not None:
            doc["costs"] = {a: dict(self.costs[a]) for a in self.a_agents}
        return doc


def resolve_preferences(market: Union[Instance, Preferences], S: Optional[Profile] = None) -> Preferences:
    if isinstance(market, Preferences):
        return market
    return market.preferences(S)


def _check_matching(instance: Instance, mu: Matching) -> None:
    if set(mu.pairs) != set(instance.a_agents) or set(mu.inverse) != set(instance.b_agents):
        raise InputError("Matching does not cover the agents of the instance")


def induced_ranking(instance: Instance, S: Optional[Profile], b: str) -> List[str]:
    """A-agents in decreasing score order for b, ties broken by tie_break."""
    return instance.ranking(instance.salience_row(b, S))


def is_blocking_pair(instance: Instance, S: Optional[Profile], mu: Matching, a: str, b: str) -> bool:
    _check_matching(instance, mu)
    if mu.partner(a) == b:
        return False
    if not instance.a_rank[a][b] < instance.a_rank[a][mu.partner(a)]:
        return False
    return instance.prefers(instance.salience_row(b, S), a, mu.partner_of(b))


def blocking_pairs(instance: Instance, S: Optional[Profile], mu: Matching) -> List[Tuple[str, str]]:
    _check_matching(instance, mu)
    rows = instance.profile(S)
    found = []
    for b in instance.b_agents:
        for a in blockers(instance, S, mu, b):
            if instance.prefers(rows[b], a, mu.partner_of(b)):
                found.append((a, b))
    return found


def is_stable(instance: Instance, S: Optional[Profile], mu: Matching) -> bool:
    return not blocking_pairs(instance, S, mu)


def blockers(instance: Instance, S: Optional[Profile], mu: Matching, b: str) -> List[str]:
    """The set H_mu(b) of A-agents who list b above their partner, in A order."""
    if b not in mu.inverse:
        raise InputError(f"Unknown B-agent: {b}")
    return [a for a in instance.a_agents if instance.a_rank[a][b] < instance.a_rank[a][mu.partner(a)]]


@dataclass(frozen=True)
class Perturbation:
    """Post-normalized perturbation of one B-agent's salience vector."""

    agent: str
    support: FrozenSet[int]
    new_vector: np.ndarray
    scale: float

    def to_dict(self) -> Dict[str, Any]:
        return {
            "agent": self.agent,
            "support": sorted(self.support),
            "new_vector": [float(x) for x in self.new_vector],
            "scale": float(self.scale),
        }


def apply_perturbation(s: Sequence[float], delta: Sequence[float]) -> np.ndarray:
    """Pre-normalization form: returns (s + delta) / T with T = sum(s + delta)."""
    s = np.asarray(s, dtype=float)
    delta = np.asarray(delta, dtype=float)
    if s.shape != delta.shape:
        raise InputError("Dimension mismatch between salience vector and perturbation")
    moved = s + delta
    if np.any(moved < -TOL):
        raise InputError(f"Perturbed component is negative: {float(moved.min()):.9g}")
    moved = np.clip(moved, 0.0, None)
    total = float(moved.sum())
    if total <= 1e-12:
        raise DegeneratePerturbationError(f"Normalization constant T={total:.3g} is not positive")
    return moved / total


def perturbation_distance(s: Sequence[float], s_hat: Sequence[float], p: NormLike) -> float:
    return vector_norm(np.asarray(s_hat, dtype=float) - np.asarray(s, dtype=float), p)


def implied_scale(s: Sequence[float], s_hat: Sequence[float], support: Iterable[int]) -> float:
    """The common off-support factor lambda, recorded as 1 when it is unconstrained."""
    s = np.asarray(s, dtype=float)
    s_hat = np.asarray(s_hat, dtype=float)
    off = [i for i in range(s.size) if i not in set(support)]
    base = float(s[off].sum()) if off else 0.0
    if base <= TOL:
        return 1.0
    return float(s_hat[off].sum()) / base


def make_perturbation(agent: str, s: Sequence[float], s_hat: Sequence[float], support: Iterable[int]) -> Perturbation:
    support = frozenset(int(i) for i in support)
    return Perturbation(agent, support, np.asarray(s_hat, dtype=float), implied_scale(s, s_hat, support))


def is_admissible(s: Sequence[float], pert: Perturbation, k: int, r: float, p: NormLike) -> bool:
    s = np.asarray(s, dtype=float)
    s_hat = np.asarray(pert.new_vector, dtype=float)
    if len(pert.support) > k or pert.scale <= 0:
        return False
    if np.any(s_hat < -TOL) or abs(float(s_hat.sum()) - 1.0) > TOL:
        return False
    for i in range(s.size):
        if i not in pert.support and abs(s_hat[i] - pert.scale * s[i]) > TOL:
            return False
    return perturbation_distance(s, s_hat, p) <= r + TOL
