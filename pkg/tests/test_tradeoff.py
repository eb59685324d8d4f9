import math
import os
import sys
import unittest
from pathlib import Path

import numpy as np
import pytest

sys.path.append(os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from analysis.experiments import random_salience_instance
from analysis.relaxation import cost_lb, vulnerability_cuts
from analysis.robustness import ThresholdOracle, base_radius, robustness_radius
from analysis.tradeoff import (
    CostTable,
    base_feasible_matchings_constraint,
    breakpoints,
    frontier,
    literal_rotation_weight,
    min_cost_given_base_radius,
    pair_ratio,
    rotation_cost_delta,
)
from core.errors import InputError
from core.market import Matching
from core.stable import build_rotation_poset, enumerate_stable
from interfaces.instance_io import parse_instance

TEST_DATA = Path(__file__).parent / "test_data"
MU_A = Matching({"a1": "b1", "a2": "b2"})
MU_B = Matching({"a1": "b2", "a2": "b1"})


class TestTwoStableTradeoff(unittest.TestCase):
    @classmethod
    def setUpClass(cls):
        cls.instance = parse_instance(str(TEST_DATA / "two_sm.json"))
        cls.poset = build_rotation_poset(cls.instance)
        cls.costs = CostTable.from_instance(cls.instance)

    def test_cost_table(self):
        self.assertEqual(self.costs.total(MU_A), 2.0)
        self.assertEqual(self.costs.total(MU_B), 0.0)
        self.assertEqual(rotation_cost_delta(self.poset, 0, self.costs), -2.0)

    def test_pair_ratios(self):
        self.assertAlmostEqual(pair_ratio(self.instance, None, "a2", "b1", "inf"), 0.1, places=9)
        self.assertAlmostEqual(pair_ratio(self.instance, None, "a1", "b2", "inf"), 0.1, places=9)
        self.assertTrue(math.isinf(pair_ratio(self.instance, None, "a1", "b1", "inf")))
        admissible = base_feasible_matchings_constraint(self.instance, None, 0.15, "inf")
        self.assertTrue(admissible("a1", "b1"))
        self.assertFalse(admissible("a2", "b1"))

    def test_cheapest_without_robustness(self):
        solution = min_cost_given_base_radius(self.instance, None, None, 0.0, "inf")
        self.assertTrue(solution.feasible)
        self.assertEqual(solution.matching, MU_B)
        self.assertEqual(solution.cost, 0.0)
        self.assertEqual(solution.downset, frozenset({0}))
        self.assertAlmostEqual(solution.base_radius, 0.099, places=9)

    def test_robustness_forces_expensive_matching(self):
        solution = min_cost_given_base_radius(self.instance, None, None, 0.15, "inf")
        self.assertTrue(solution.feasible)
        self.assertEqual(solution.matching, MU_A)
        self.assertEqual(solution.cost, 2.0)
        self.assertEqual(solution.downset, frozenset())
        self.assertTrue(math.isinf(solution.base_radius))

    def test_breakpoints(self):
        bps = breakpoints(self.instance, None, "inf")
        self.assertEqual(len(bps), 1)
        self.assertAlmostEqual(bps[0], 0.1, places=9)

    def test_frontier(self):
        points = frontier(self.instance, None, None, "inf", 2)
        self.assertEqual(len(points), 3)
        self.assertEqual(points[0].tau, 0.0)
        self.assertEqual(points[0].c_ub, 0.0)
        self.assertEqual(points[1].c_ub, 0.0)
        self.assertEqual(points[2].c_ub, 2.0)
        self.assertAlmostEqual(points[2].c_lb, 1.0, places=7)
        for point in points:
            self.assertLessEqual(point.c_lb, point.c_ub + 1e-7)
        self.assertEqual(points[2].to_dict()["matching"], "a1:b1;a2:b2")

    def test_literal_weight(self):
        self.assertAlmostEqual(literal_rotation_weight(self.instance, None, self.poset, 0, 0.0, "inf", self.costs), 2.0)


def test_infeasible_when_shared_pair_fails(running_example):
    solution = min_cost_given_base_radius(running_example, None, None, 0.3, "inf")
    assert not solution.feasible
    assert math.isinf(solution.cost)
    assert solution.to_dict()["cost"] == "infeasible"
    points = frontier(running_example, None, None, "inf", 2)
    assert not points[-1].feasible
    assert points[-1].to_dict()["c_ub"] == "infeasible"


def test_cost_table_requires_every_pair(two_sm):
    with pytest.raises(InputError):
        CostTable.coerce(two_sm, {"a1": {"b1": 1.0}})
    with pytest.raises(InputError):
        pair_ratio(two_sm, None, "a1", "b1", "inf", denominator="gap")
    with pytest.raises(InputError):
        base_feasible_matchings_constraint(two_sm, None, -0.5, "inf")


def _brute_min_cost(inst, costs, tau, p):
    best = math.inf
    admissible = base_feasible_matchings_constraint(inst, None, tau, p)
    for mu in enumerate_stable(build_rotation_poset(inst)):
        if all(admissible(a, b) for a, b in mu.pairs.items()):
            best = min(best, costs.total(mu))
    return best


@pytest.mark.parametrize("seed", range(15))
def test_closure_matches_enumeration(seed):
    rng = np.random.default_rng(700 + seed)
    inst = random_salience_instance(int(rng.integers(3, 6)), 2, 700 + seed, costs=True)
    costs = CostTable.from_instance(inst)
    poset = build_rotation_poset(inst)
    for tau in [0.0] + breakpoints(inst, None, "inf"):
        solution = min_cost_given_base_radius(inst, None, costs, tau, "inf", poset=poset)
        expected = _brute_min_cost(inst, costs, tau, "inf")
        if math.isinf(expected):
            assert not solution.feasible
        else:
            assert solution.feasible
            assert solution.cost == pytest.approx(expected, abs=1e-9)
            assert solution.base_radius == pytest.approx(base_radius(inst, None, solution.matching, "inf", 0.01))


@pytest.mark.parametrize("seed", range(10))
def test_cost_bounds_bracket_cheapest_robust_matching(seed):
    rng = np.random.default_rng(800 + seed)
    m = 2 + seed % 2
    p = ["inf", "1"][seed % 2]
    inst = random_salience_instance(int(rng.integers(3, 5)), m, 800 + seed, costs=True)
    costs = CostTable.from_instance(inst)
    poset = build_rotation_poset(inst)
    oracle = ThresholdOracle(inst, None, m, p)
    radii = [(mu, robustness_radius(inst, None, mu, m, p).radius) for mu in enumerate_stable(poset)]
    taus = {0.0}
    for bp in breakpoints(inst, None, p):
        taus.update(max(0.0, bp + d) for d in (-1e-6, 0.0, 1e-6))
    for tau in sorted(taus):
        robust = [mu for mu, r in radii if r >= tau - 1e-9]
        exact = min((costs.total(mu) for mu in robust), default=math.inf)
        assert cost_lb(inst, None, costs.c, tau, m, p, oracle) <= exact + 1e-7
        upper = min_cost_given_base_radius(inst, None, costs, tau, p, poset=poset)
        assert exact <= upper.cost + 1e-9
        if upper.feasible:
            assert robustness_radius(inst, None, upper.matching, m, p).radius >= tau - 1e-9
        for coef, _, rhs in vulnerability_cuts(inst, oracle, tau):
            for mu in robust:
                assert sum(c for (a, b), c in coef.items() if mu.pairs[a] == b) <= rhs


if __name__ == "__main__":
    unittest.main()
