import math
import os
import sys
import unittest
from pathlib import Path

import numpy as np
import pytest

sys.path.append(os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from analysis.experiments import random_salience_instance
from analysis.robustness import (
    ThresholdOracle,
    base_radius,
    dual_gap,
    pair_threshold,
    robustness_radius,
    verify_robust,
)
from core.errors import DegenerateInstanceError, InputError, PreconditionError, UnstableMatchingError
from core.market import Instance, Matching, is_admissible, is_blocking_pair
from core.stable import build_rotation_poset, enumerate_stable
from interfaces.instance_io import parse_instance

TEST_DATA = Path(__file__).parent / "test_data"
MU = Matching({"a1": "b1", "a2": "b2"})
MU_A = Matching({"a1": "b1", "a2": "b2"})
MU_B = Matching({"a1": "b2", "a2": "b1"})


class TestRunningExampleRobustness(unittest.TestCase):
    @classmethod
    def setUpClass(cls):
        cls.instance = parse_instance(str(TEST_DATA / "running_example.json"))

    def test_radius(self):
        report = robustness_radius(self.instance, None, MU, 2, "inf")
        self.assertAlmostEqual(report.radius, 0.2, places=9)
        self.assertEqual(report.critical_pair[:2], ("a2", "b1"))
        self.assertEqual(report.to_dict()["critical_pair"], ["a2", "b1"])

    def test_radius_other_norms(self):
        self.assertAlmostEqual(robustness_radius(self.instance, None, MU, 2, 1).radius, 0.4, places=9)
        self.assertAlmostEqual(robustness_radius(self.instance, None, MU, 2, 2).radius, 0.2 * math.sqrt(2), places=9)

    def test_verify_below_radius(self):
        self.assertTrue(verify_robust(self.instance, None, MU, 2, 0.19, "inf"))

    def test_verify_l1_witness(self):
        result = verify_robust(self.instance, None, MU, 2, 0.5, 1)
        self.assertFalse(result.robust)
        self.assertEqual((result.a, result.b), ("a2", "b1"))
        self.assertTrue(result.attained)
        self.assertTrue(is_admissible(self.instance.salience["b1"], result.witness, 2, 0.5, 1))
        self.assertTrue(is_blocking_pair(self.instance, {"b1": result.witness.new_vector}, MU, "a2", "b1"))

    def test_pair_threshold(self):
        self.assertAlmostEqual(pair_threshold(self.instance, None, MU, "b1", "a2", 2, "inf").radius, 0.2, places=9)
        single = pair_threshold(self.instance, None, MU, "b1", "a2", 1, "inf").radius
        self.assertAlmostEqual(single, 0.2, places=9)
        with self.assertRaises(PreconditionError):
            pair_threshold(self.instance, None, MU, "b2", "a1", 2, "inf")

    def test_dual_gap_and_base(self):
        self.assertAlmostEqual(dual_gap(self.instance, MU, "b1", "inf"), 0.8, places=9)
        self.assertAlmostEqual(base_radius(self.instance, None, MU, "inf", 0.01), 0.198, places=9)

    def test_unstable_matching_rejected(self):
        with self.assertRaises(UnstableMatchingError) as ctx:
            robustness_radius(self.instance, None, Matching({"a1": "b2", "a2": "b1"}), 2, "inf")
        self.assertIsNotNone(ctx.exception.blocking_pair)

    def test_bad_arguments(self):
        with self.assertRaises(InputError):
            verify_robust(self.instance, None, MU, 2, -0.1, "inf")
        with self.assertRaises(InputError):
            verify_robust(self.instance, None, MU, 0, 0.1, "inf")
        with self.assertRaises(InputError):
            base_radius(self.instance, None, MU, "inf", 1.0)


def test_two_sm_radii(two_sm):
    assert math.isinf(robustness_radius(two_sm, None, MU_A, 2, "inf").radius)
    assert robustness_radius(two_sm, None, MU_B, 2, "inf").radius == pytest.approx(0.1, abs=1e-9)
    assert dual_gap(two_sm, MU_B, "b1", "inf") == pytest.approx(2.0)
    assert base_radius(two_sm, None, MU_B, "inf", 0.01) == pytest.approx(0.099, abs=1e-12)
    assert math.isinf(base_radius(two_sm, None, MU_A, "inf"))


def test_degenerate_attributes():
    inst = Instance(
        ("a1", "a2"),
        ("b1", "b2"),
        {"a1": [0.5, 0.5], "a2": [0.5, 0.5]},
        {"a1": ("b1", "b2"), "a2": ("b1", "b2")},
        {"b1": [0.5, 0.5], "b2": [0.5, 0.5]},
        ("a1", "a2"),
    )
    with pytest.raises(DegenerateInstanceError):
        dual_gap(inst, MU, "b1", "inf")


def test_oracle_caches_thresholds(running_example):
    oracle = ThresholdOracle(running_example, None, 2, "inf")
    first = oracle.threshold("b1", "a1", "a2")
    assert oracle.threshold("b1", "a1", "a2") is first
    assert oracle.flip_radius("b1", "a2", "a1") == 0.0


def test_critical_pair_ties_break_by_id():
    # mirror-image market: both b-agents flip at the same radius
    inst = Instance(
        ("a1", "a2"),
        ("b2", "b1"),
        {"a1": [1.0, 0.0], "a2": [0.0, 1.0]},
        {"a1": ("b2", "b1"), "a2": ("b1", "b2")},
        {"b2": [0.4, 0.6], "b1": [0.6, 0.4]},
        ("a1", "a2"),
    )
    report = robustness_radius(inst, None, MU, 2, "inf")
    assert report.per_pair[("a2", "b1")] == pytest.approx(report.per_pair[("a1", "b2")], abs=1e-12)
    assert report.critical_pair[:2] == ("a2", "b1")
    assert report.radius == min(report.per_pair.values())


def _stable_cases(count, seed0):
    for seed in range(seed0, seed0 + count):
        rng = np.random.default_rng(seed)
        n = int(rng.integers(2, 5))
        m = int(rng.integers(2, 4))
        inst = random_salience_instance(n, m, seed)
        k = int(rng.integers(1, m + 1))
        p = [1, 2, math.inf][seed % 3]
        for mu in enumerate_stable(build_rotation_poset(inst)):
            yield inst, mu, k, p


@pytest.mark.parametrize("case", list(_stable_cases(40, 1000)))
def test_verification_duality(case):
    inst, mu, k, p = case
    radius = robustness_radius(inst, None, mu, k, p).radius
    if not math.isfinite(radius) or radius <= 1e-6:
        return
    assert verify_robust(inst, None, mu, k, 0.9 * radius, p).robust
    assert not verify_robust(inst, None, mu, k, 1.1 * radius, p).robust


@pytest.mark.parametrize("case", list(_stable_cases(40, 2000)))
def test_base_radius_is_inner_bound(case):
    inst, mu, k, p = case
    radius = robustness_radius(inst, None, mu, k, p).radius
    assert base_radius(inst, None, mu, p, 0.0) <= radius + 1e-9
    base = base_radius(inst, None, mu, p, 0.01)
    if math.isfinite(radius) and radius > 0:
        assert base < radius
