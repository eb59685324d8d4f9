"""Random markets and the one-swap robustness study.

An adjacent swap in b's list reorders exactly one pair of candidates. It can
only create a blocking pair for mu when it demotes b's partner below the
candidate right after it, so the fast check looks at that successor alone.
The naive oracle re-checks stability after every adjacent swap.
"""

import logging
import math
from dataclasses import dataclass
from typing import Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from scipy import stats

from core.errors import InputError, PreconditionError
from core.market import Instance, Matching, Preferences
from core.stable import DEFAULT_DOWNSET_CAP, build_rotation_poset, deferred_acceptance, iter_downsets, matching_from_downset
from utils.parallel import parallel_map

logger = logging.getLogger(__name__)

MODES = ("any-stable", "b-optimal")
SWEEP_COLUMNS = ["n", "trials", "mode", "fraction", "ci_low", "ci_high", "seed"]

SeedLike = Union[int, np.random.SeedSequence, Sequence[int]]


@dataclass(frozen=True)
class OrdinalInstance:
    prefs: Preferences
    seed: Optional[int] = None

    @property
    def n(self) -> int:
        return self.prefs.n


def _agents(prefix: str, n: int) -> List[str]:
    return [f"{prefix}{i + 1}" for i in range(n)]


def _rng(seed: SeedLike) -> np.random.Generator:
    return np.random.default_rng(seed)


def random_ordinal_instance(n: int, seed: SeedLike) -> OrdinalInstance:
    """Both sides draw i.i.d. uniform preference lists."""
    if n < 1:
        raise InputError(f"n must be >= 1, got {n}")
    rng = _rng(seed)
    a_agents, b_agents = _agents("a", n), _agents("b", n)
    a_prefs = {a: tuple(b_agents[i] for i in rng.permutation(n)) for a in a_agents}
    b_prefs = {b: tuple(a_agents[i] for i in rng.permutation(n)) for b in b_agents}
    return OrdinalInstance(Preferences(a_prefs, b_prefs), seed if isinstance(seed, int) else None)


def random_salience_instance(n: int, m: int, seed: SeedLike, costs: bool = False) -> Instance:
    """Uniform attributes on [0,1]^m, flat-Dirichlet salience rows, uniform A-side lists."""
    if n < 1 or m < 2:
        raise InputError(f"Need n >= 1 and m >= 2, got n={n}, m={m}")
    rng = _rng(seed)
    a_agents, b_agents = _agents("a", n), _agents("b", n)
    attributes = {a: rng.random(m) for a in a_agents}
    salience = {b: rng.dirichlet(np.ones(m)) for b in b_agents}
    a_prefs = {a: tuple(b_agents[i] for i in rng.permutation(n)) for a in a_agents}
    cost_table = None
    if costs:
        cost_table = {a: {b: float(rng.random()) for b in b_agents} for a in a_agents}
    return Instance(tuple(a_agents), tuple(b_agents), attributes, a_prefs, salience, tuple(a_agents), cost_table)


def _prefs(inst: Union[OrdinalInstance, Preferences]) -> Preferences:
    return inst.prefs if isinstance(inst, OrdinalInstance) else inst


def _check_side(side: str) -> str:
    side = side.upper()
    if side not in ("A", "B"):
        raise InputError(f"swap side must be 'A' or 'B', got {side!r}")
    return side


def is_one_swap_robust(inst: Union[OrdinalInstance, Preferences], mu: Matching, side: str = "B") -> bool:
    """No single adjacent swap in one list of ``side`` makes mu unstable."""
    prefs = _prefs(inst)
    side = _check_side(side)
    if not prefs.is_stable(mu):
        raise PreconditionError("One-swap robustness is only defined for stable matchings")
    if side == "B":
        for b, order in prefs.b_prefs.items():
            position = prefs.b_rank[b][mu.partner_of(b)]
            if position + 1 < len(order):
                successor = order[position + 1]
                if prefs.a_prefers(successor, b, mu.partner(successor)):
                    return False
    else:
        for a, order in prefs.a_prefs.items():
            position = prefs.a_rank[a][mu.partner(a)]
            if position + 1 < len(order):
                successor = order[position + 1]
                if prefs.b_prefers(successor, a, mu.partner_of(successor)):
                    return False
    return True


def naive_one_swap_robust(inst: Union[OrdinalInstance, Preferences], mu: Matching, side: str = "B") -> bool:
    prefs = _prefs(inst)
    side = _check_side(side)
    if not prefs.is_stable(mu):
        raise PreconditionError("One-swap robustness is only defined for stable matchings")
    lists = prefs.b_prefs if side == "B" else prefs.a_prefs
    for agent, order in lists.items():
        for i in range(len(order) - 1):
            swapped = list(order)
            swapped[i], swapped[i + 1] = swapped[i + 1], swapped[i]
            changed = prefs.with_b_list(agent, swapped) if side == "B" else prefs.with_a_list(agent, swapped)
            if not changed.is_stable(mu):
                return False
    return True


def wilson_interval(successes: int, trials: int, confidence: float = 0.95) -> Tuple[float, float]:
    if trials <= 0:
        return 0.0, 1.0
    z = float(stats.norm.ppf(0.5 + confidence / 2.0))
    p = successes / trials
    denom = 1.0 + z * z / trials
    center = (p + z * z / (2 * trials)) / denom
    half = z * math.sqrt(p * (1 - p) / trials + z * z / (4 * trials * trials)) / denom
    low, high = center - half, center + half
    # the bounds touch 0 and 1 exactly when every trial fails or succeeds
    low = 0.0 if low < 1e-15 else low
    high = 1.0 if high > 1.0 - 1e-15 else high
    return low, high


def trial_robust(n: int, trial_seed: np.random.SeedSequence, mode: str, side: str = "B", cap: int = DEFAULT_DOWNSET_CAP) -> bool:
    inst = random_ordinal_instance(n, trial_seed)
    if mode == "b-optimal":
        return is_one_swap_robust(inst, deferred_acceptance(inst.prefs, proposing_side="B"), side)
    poset = build_rotation_poset(inst.prefs)
    return any(is_one_swap_robust(inst, matching_from_downset(poset, d), side) for d in iter_downsets(poset, cap))


def one_swap_sweep(
    n_values: Iterable[int],
    trials: int,
    seed: int,
    mode: str = "b-optimal",
    workers: int = 1,
    swap_side: str = "B",
    cap: int = DEFAULT_DOWNSET_CAP,
) -> pd.DataFrame:
    """Fraction of random markets with a one-swap robust stable matching, per n."""
    if trials < 1:
        raise InputError(f"trials must be >= 1, got {trials}")
    if mode not in MODES:
        raise InputError(f"Unknown sweep mode {mode!r}; use one of {MODES}")
    side = _check_side(swap_side)
    rows = []
    for n in n_values:
        seeds = [np.random.SeedSequence([seed, n, t]) for t in range(trials)]
        outcomes = parallel_map(lambda s: trial_robust(n, s, mode, side, cap), seeds, workers, progress=f"n={n}")
        successes = int(sum(outcomes))
        low, high = wilson_interval(successes, trials)
        rows.append({"n": n, "trials": trials, "mode": mode, "fraction": successes / trials, "ci_low": low, "ci_high": high, "seed": seed})
        logger.info(f"n={n}: {successes}/{trials} one-swap robust ({mode}, {side}-side swaps)")
    return pd.DataFrame(rows, columns=SWEEP_COLUMNS)
