import math
import os
import sys

import numpy as np
import pytest

sys.path.append(os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from analysis.experiments import random_salience_instance
from analysis.robustness import robustness_radius
from analysis.search import SearchNode, SearchState, lb_init, most_robust_anytime
from core.errors import InputError
from core.market import Matching
from core.stable import build_rotation_poset, enumerate_stable

MU_A = Matching({"a1": "b1", "a2": "b2"})
MU_B = Matching({"a1": "b2", "a2": "b1"})


def test_lb_init_uses_b_optimal(two_sm):
    mu, radius = lb_init(two_sm, None, 2, "inf")
    assert mu == MU_B
    assert radius == pytest.approx(0.1, abs=1e-9)


def test_search_certifies_unbounded_optimum(two_sm):
    state = most_robust_anytime(two_sm, None, 2, "inf", budget=10)
    assert state.certified
    assert state.best == MU_A
    assert math.isinf(state.lb)
    assert state.expansions == 1
    events = [entry["event"] for entry in state.trace]
    assert events[0] == "init"
    assert events[-1] == "certify"
    assert "evaluate" in events


def test_zero_budget_keeps_incumbent(two_sm):
    state = most_robust_anytime(two_sm, None, 2, "inf", budget=0)
    assert not state.certified
    assert state.best == MU_B
    assert state.lb == pytest.approx(0.1, abs=1e-9)
    assert math.isinf(state.ub_frontier)
    assert state.trace[-1]["event"] == "budget"


def test_unique_matching_certified_without_expansion(running_example):
    state = most_robust_anytime(running_example, None, 2, "inf", budget=0, eps_ub=1e-4)
    assert state.certified
    assert state.lb == pytest.approx(0.2, abs=1e-9)
    assert state.expansions == 0
    doc = state.to_dict()
    assert doc["best"] == [["a1", "b1"], ["a2", "b2"]]
    assert doc["certificate_slack"] == 1e-4


def test_negative_budget(two_sm):
    with pytest.raises(InputError):
        most_robust_anytime(two_sm, None, 2, "inf", budget=-1)


def test_frontier_ordering():
    state = SearchState(lb=0.0, best=MU_A)
    state.push(SearchNode(frozenset({0}), 0.3, MU_B))
    state.push(SearchNode(frozenset(), 0.5, MU_A))
    state.push(SearchNode(frozenset({1}), 0.5, MU_B))
    assert state.frontier_max == 0.5
    assert state.pop().downset == frozenset()
    assert state.pop().downset == frozenset({1})
    assert state.pop().ub == 0.3
    assert state.frontier_max == -math.inf
    assert state.ub_frontier == 0.0


@pytest.mark.parametrize("seed", range(12))
def test_certified_search_matches_enumeration(seed):
    rng = np.random.default_rng(500 + seed)
    n = int(rng.integers(3, 5))
    inst = random_salience_instance(n, 3, 500 + seed)
    p = [1, math.inf][seed % 2]
    eps = 1e-4
    state = most_robust_anytime(inst, None, 2, p, budget=10_000, eps_ub=eps)
    assert state.certified

    radii = [robustness_radius(inst, None, mu, 2, p).radius for mu in enumerate_stable(build_rotation_poset(inst))]
    best = max(radii)
    if math.isinf(best):
        assert math.isinf(state.lb)
    else:
        assert state.lb <= best + 1e-9
        assert state.lb >= best - eps - 1e-9
    assert robustness_radius(inst, None, state.best, 2, p).radius == pytest.approx(state.lb, abs=1e-12)


@pytest.mark.parametrize("seed", range(10))
def test_trace_bounds_are_monotone_and_bracket_optimum(seed):
    rng = np.random.default_rng(1600 + seed)
    m = int(rng.integers(2, 4))
    inst = random_salience_instance(int(rng.integers(3, 6)), m, 1600 + seed)
    p = ["inf", "1", "2"][seed % 3]
    k = 1 + seed % m
    eps = 1e-4
    state = most_robust_anytime(inst, None, k, p, budget=10_000, eps_ub=eps)
    optimum = max(robustness_radius(inst, None, mu, k, p).radius for mu in enumerate_stable(build_rotation_poset(inst)))

    lbs = [entry["lb"] for entry in state.trace]
    ubs = [entry["ub_frontier"] for entry in state.trace]
    assert all(later >= earlier for earlier, later in zip(lbs, lbs[1:]))
    assert all(later <= earlier for earlier, later in zip(ubs, ubs[1:]))
    for lb, ub in zip(lbs, ubs):
        assert lb <= optimum + 1e-12
        assert optimum <= ub + eps
