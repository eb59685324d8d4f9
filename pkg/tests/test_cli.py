import json
import os
import sys
import unittest
from pathlib import Path

import pandas as pd
import pytest
import yaml

sys.path.append(os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from core.errors import InputError
from core.lp import SOLVER_SETTINGS
from core.market import Matching
from interfaces.cli import EXIT_ERROR, EXIT_FAILED, EXIT_OK, RunConfig, build_parser, main, parse_matching
from interfaces.instance_io import parse_instance

TEST_DIR = Path(__file__).parent
TEST_DATA = TEST_DIR / "test_data"
CONFIG = str(TEST_DIR / "test_config.yaml")
RUNNING = str(TEST_DATA / "running_example.json")
TWO_SM = str(TEST_DATA / "two_sm.json")


def _run(tmp_path, *argv, name="out.json"):
    out = tmp_path / name
    code = main(["--config", CONFIG, "--workers", "1", "-o", str(out), *argv])
    return code, out


def _load(out):
    with open(out, "r") as f:
        return json.load(f)


class TestMatchingArgument(unittest.TestCase):
    @classmethod
    def setUpClass(cls):
        cls.instance = parse_instance(TWO_SM)

    def test_default_is_b_optimal(self):
        self.assertEqual(parse_matching(None, self.instance), Matching({"a1": "b2", "a2": "b1"}))

    def test_explicit(self):
        self.assertEqual(parse_matching("a1:b1, a2:b2", self.instance), Matching({"a1": "b1", "a2": "b2"}))

    def test_rejects_partial_or_unknown(self):
        with self.assertRaises(InputError):
            parse_matching("a1:b1", self.instance)
        with self.assertRaises(InputError):
            parse_matching("a1:b9,a2:b2", self.instance)
        with self.assertRaises(InputError):
            parse_matching("a1-b1,a2-b2", self.instance)


def test_run_config_validation():
    with pytest.raises(InputError):
        RunConfig("radius", eps_base=1.5).validate()
    with pytest.raises(InputError):
        RunConfig("radius", format="xml").validate()
    with pytest.raises(InputError):
        RunConfig("radius", k=3).validate(parse_instance(RUNNING))
    config = RunConfig("radius", p="2")
    config.validate()
    assert config.p == "2"


def test_parser_requires_command():
    with pytest.raises(SystemExit):
        build_parser().parse_args([])


def test_radius_command(tmp_path):
    code, out = _run(tmp_path, "radius", RUNNING)
    assert code == EXIT_OK
    doc = _load(out)
    assert doc["schema_version"] == "1.0"
    assert doc["config"]["command"] == "radius"
    assert doc["config"]["p"] == "inf"
    assert doc["result"]["radius"] == 0.2
    assert doc["result"]["critical_pair"] == ["a2", "b1"]


def test_radius_unbounded(tmp_path):
    code, out = _run(tmp_path, "radius", TWO_SM, "--matching", "a1:b1,a2:b2")
    assert code == EXIT_OK
    assert _load(out)["result"]["radius"] == "unbounded"


def test_verify_exit_codes(tmp_path):
    code, out = _run(tmp_path, "verify", RUNNING, "-r", "0.19")
    assert code == EXIT_OK
    assert _load(out)["result"] == {"robust": True}
    code, out = _run(tmp_path, "verify", RUNNING, "-r", "0.5", "-p", "1")
    assert code == EXIT_FAILED
    result = _load(out)["result"]
    assert result["robust"] is False
    assert result["blocking_pair"] == ["a2", "b1"]


def test_base_command(tmp_path):
    code, out = _run(tmp_path, "base", RUNNING)
    assert code == EXIT_OK
    result = _load(out)["result"]
    assert result["base_radius"] == 0.198
    assert result["per_b"]["b1"]["dual_gap"] == 0.8


def test_search_command_with_trace(tmp_path):
    trace = tmp_path / "trace.jsonl"
    code, out = _run(tmp_path, "search", TWO_SM, "--budget", "10", "--trace", str(trace))
    assert code == EXIT_OK
    result = _load(out)["result"]
    assert result["certified"] is True
    assert result["lb"] == "unbounded"
    assert result["best"] == [["a1", "b1"], ["a2", "b2"]]
    events = [json.loads(line)["event"] for line in trace.read_text().splitlines()]
    assert events[0] == "init" and events[-1] == "certify"


def test_frontier_csv(tmp_path):
    code, out = _run(tmp_path, "frontier", TWO_SM, name="frontier.csv")
    assert code == EXIT_OK
    frame = pd.read_csv(out)
    assert list(frame.columns) == ["tau", "c_lb", "c_ub", "matching"]
    assert len(frame) == 3
    assert list(frame["c_ub"]) == [0, 0, 2]


def test_region_command(tmp_path):
    polygons = tmp_path / "polygons"
    code, out = _run(tmp_path, "region", RUNNING, "--volume", "both", "--samples", "20000", "--polygon-dir", str(polygons))
    assert code == EXIT_OK
    result = _load(out)["result"]
    assert result["volume"] == 0.5
    assert result["volume_mc"]["estimate"] == pytest.approx(0.5, abs=0.02)
    assert result["volume_mc"]["seed"] == 7
    b1 = result["factors"][0]
    assert b1["b"] == "b1"
    assert b1["halfspaces"][0]["blocker"] == "a2"
    assert b1["vertices"] == [[0.5, 0.5], [1.0, 0.0]]
    assert not polygons.exists() or not any(polygons.iterdir())


def test_sweep_csv(tmp_path):
    code, out = _run(tmp_path, "sweep", "--n-values", "1", "3", "--trials", "5", "--seed", "2", name="sweep.csv")
    assert code == EXIT_OK
    frame = pd.read_csv(out)
    assert list(frame.columns) == ["n", "trials", "mode", "fraction", "ci_low", "ci_high", "seed"]
    assert list(frame["n"]) == [1, 3]
    assert frame.loc[0, "fraction"] == 1.0


def test_errors_exit_two(tmp_path, capsys):
    code, _ = _run(tmp_path, "radius", str(tmp_path / "missing.json"))
    assert code == EXIT_ERROR
    assert "not found" in capsys.readouterr().err
    code, _ = _run(tmp_path, "radius", RUNNING, "--matching", "a1:b2,a2:b1")
    assert code == EXIT_ERROR
    code, _ = _run(tmp_path, "radius", RUNNING, "-k", "5")
    assert code == EXIT_ERROR
    code = main(["--config", str(tmp_path / "absent.yaml"), "radius", RUNNING])
    assert code == EXIT_ERROR


def test_unwritable_output_exits_two(tmp_path, capsys):
    out = tmp_path / "no" / "dir" / "out.json"
    code = main(["--config", CONFIG, "--workers", "1", "-o", str(out), "radius", RUNNING])
    assert code == EXIT_ERROR
    assert "Cannot write" in capsys.readouterr().err


def test_non_utf8_instance_exits_two(tmp_path):
    binary = tmp_path / "binary.json"
    binary.write_bytes(b"\xff\xfe\x00{not text")
    code, _ = _run(tmp_path, "radius", str(binary))
    assert code == EXIT_ERROR


def test_numerics_reach_lp_solver(tmp_path, monkeypatch):
    monkeypatch.setitem(SOLVER_SETTINGS, "tol", SOLVER_SETTINGS["tol"])
    monkeypatch.setitem(SOLVER_SETTINGS, "max_iter", SOLVER_SETTINGS["max_iter"])
    config = tmp_path / "numerics.yaml"
    config.write_text(yaml.safe_dump({"numerics": {"lp_tolerance": 1e-8, "lp_max_iterations": 20000}, "logging": {"level": "WARNING"}}))
    out = tmp_path / "out.json"
    code = main(["--config", str(config), "--workers", "1", "-o", str(out), "radius", RUNNING])
    assert code == EXIT_OK
    assert SOLVER_SETTINGS == {"tol": 1e-8, "max_iter": 20000}
    assert _load(out)["result"]["radius"] == pytest.approx(0.2, abs=1e-6)


if __name__ == "__main__":
    unittest.main()
