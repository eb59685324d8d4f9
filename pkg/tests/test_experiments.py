import os
import sys
import unittest

import numpy as np
import pandas as pd
import pytest

sys.path.append(os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from analysis.experiments import (
    SWEEP_COLUMNS,
    is_one_swap_robust,
    naive_one_swap_robust,
    one_swap_sweep,
    random_ordinal_instance,
    random_salience_instance,
    trial_robust,
    wilson_interval,
)
from core.errors import InputError, PreconditionError
from core.market import Matching, Preferences
from core.stable import build_rotation_poset, deferred_acceptance, enumerate_stable


class TestGenerators(unittest.TestCase):
    def test_ordinal_instance_is_deterministic(self):
        first = random_ordinal_instance(6, 11)
        second = random_ordinal_instance(6, 11)
        self.assertEqual(first.prefs.a_prefs, second.prefs.a_prefs)
        self.assertEqual(first.prefs.b_prefs, second.prefs.b_prefs)
        self.assertEqual(first.n, 6)
        self.assertEqual(first.seed, 11)
        self.assertEqual(first.prefs.a_agents, ("a1", "a2", "a3", "a4", "a5", "a6"))

    def test_salience_instance(self):
        inst = random_salience_instance(4, 3, 5, costs=True)
        self.assertEqual((inst.n, inst.m), (4, 3))
        for b in inst.b_agents:
            self.assertAlmostEqual(float(inst.salience[b].sum()), 1.0, places=12)
        self.assertEqual(set(inst.costs), set(inst.a_agents))
        self.assertEqual(inst.tie_break, inst.a_agents)

    def test_bad_sizes(self):
        with self.assertRaises(InputError):
            random_ordinal_instance(0, 1)
        with self.assertRaises(InputError):
            random_salience_instance(3, 1, 1)


def test_single_pair_is_robust():
    prefs = Preferences({"a1": ("b1",)}, {"b1": ("a1",)})
    mu = Matching({"a1": "b1"})
    assert is_one_swap_robust(prefs, mu)
    assert naive_one_swap_robust(prefs, mu, side="A")
    assert trial_robust(1, np.random.SeedSequence(0), "b-optimal")


def test_demoted_partner_creates_blocking_pair():
    # b1 holds a1 with a2 right behind it, and a2 would rather have b1
    prefs = Preferences(
        {"a1": ("b1", "b2"), "a2": ("b1", "b2")},
        {"b1": ("a1", "a2"), "b2": ("a1", "a2")},
    )
    mu = Matching({"a1": "b1", "a2": "b2"})
    assert not is_one_swap_robust(prefs, mu, side="B")
    assert not naive_one_swap_robust(prefs, mu, side="B")


def test_unstable_matching_rejected():
    prefs = Preferences({"a1": ("b1", "b2"), "a2": ("b1", "b2")}, {"b1": ("a1", "a2"), "b2": ("a1", "a2")})
    with pytest.raises(PreconditionError):
        is_one_swap_robust(prefs, Matching({"a1": "b2", "a2": "b1"}))
    with pytest.raises(InputError):
        is_one_swap_robust(prefs, Matching({"a1": "b1", "a2": "b2"}), side="C")


@pytest.mark.parametrize("side", ["A", "B"])
@pytest.mark.parametrize("seed", range(60))
def test_fast_path_agrees_with_naive(seed, side):
    inst = random_ordinal_instance(2 + seed % 6, seed)
    for mu in enumerate_stable(build_rotation_poset(inst.prefs)):
        assert is_one_swap_robust(inst, mu, side) == naive_one_swap_robust(inst, mu, side)


def test_wilson_interval():
    low, high = wilson_interval(10, 20)
    assert low < 0.5 < high
    assert low == pytest.approx(0.2993, abs=1e-3)
    assert high == pytest.approx(0.7007, abs=1e-3)
    assert wilson_interval(0, 10)[0] == 0.0
    assert wilson_interval(0, 500)[0] == 0.0
    assert wilson_interval(500, 500)[1] == 1.0
    assert wilson_interval(10, 10)[1] == 1.0
    assert wilson_interval(0, 0) == (0.0, 1.0)


def test_sweep_frame():
    frame = one_swap_sweep([1, 4], trials=8, seed=3)
    assert isinstance(frame, pd.DataFrame)
    assert list(frame.columns) == SWEEP_COLUMNS
    assert list(frame["n"]) == [1, 4]
    assert frame.loc[0, "fraction"] == 1.0
    assert (frame["ci_low"] <= frame["fraction"]).all()
    assert (frame["fraction"] <= frame["ci_high"]).all()


def test_sweep_is_reproducible_across_workers():
    serial = one_swap_sweep([5], trials=12, seed=9, mode="any-stable")
    threaded = one_swap_sweep([5], trials=12, seed=9, mode="any-stable", workers=4)
    pd.testing.assert_frame_equal(serial, threaded)


def test_any_stable_dominates_b_optimal():
    b_opt = one_swap_sweep([6], trials=15, seed=4, mode="b-optimal")
    anyone = one_swap_sweep([6], trials=15, seed=4, mode="any-stable")
    assert anyone.loc[0, "fraction"] >= b_opt.loc[0, "fraction"]


def test_b_optimal_robustness_decays_with_market_size():
    frame = one_swap_sweep([4, 8, 16, 32, 64, 128], trials=500, seed=0, mode="b-optimal", workers=4)
    rows = frame.to_dict(orient="records")
    for smaller, larger in zip(rows, rows[1:]):
        assert larger["fraction"] <= smaller["fraction"] or larger["ci_low"] <= smaller["ci_high"]
    assert rows[-1]["fraction"] * 2 <= rows[0]["fraction"]
    assert rows[0]["fraction"] > 0
    for row in rows:
        if row["fraction"] == 0:
            assert row["ci_low"] == 0.0


def test_sweep_rejects_bad_arguments():
    with pytest.raises(InputError):
        one_swap_sweep([4], trials=0, seed=1)
    with pytest.raises(InputError):
        one_swap_sweep([4], trials=3, seed=1, mode="a-optimal")


def test_b_optimal_trial_uses_deferred_acceptance():
    seq = np.random.SeedSequence([2, 5, 0])
    inst = random_ordinal_instance(5, np.random.SeedSequence([2, 5, 0]))
    mu = deferred_acceptance(inst.prefs, proposing_side="B")
    assert trial_robust(5, seq, "b-optimal") == is_one_swap_robust(inst, mu)


if __name__ == "__main__":
    unittest.main()
