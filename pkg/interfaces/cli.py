"""Command-line entry point.

Exit codes: 0 when the computation succeeded or the property holds, 1 when
the property fails (``verify`` finds a deviation), 2 on any error.
"""

import argparse
import logging
import os
import sys
from dataclasses import asdict, dataclass
from typing import Any, Dict, List, Optional

from analysis.experiments import MODES as SWEEP_MODES
from analysis.experiments import one_swap_sweep
from analysis.geometry import region, vertices, volume_exact, volume_mc
from analysis.relaxation import MODES as RELAXATION_MODES
from analysis.robustness import base_radius, base_ratios, robustness_radius, verify_robust
from analysis.search import most_robust_anytime
from analysis.tradeoff import DENOMINATORS, frontier
from core.errors import InputError, SalienceMatchError
from core.lp import configure_solver
from core.market import Instance, Matching, norm_label, parse_norm
from core.stable import b_optimal
from interfaces.instance_io import parse_instance
from interfaces.reports import frontier_frame, polygon_frames, write_csv, write_json, write_jsonl
from utils.config import ConfigError, find_config, load_config, resolve_workers, setup_logging

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_FAILED = 1
EXIT_ERROR = 2
DEFAULT_CONFIG = "config.yaml"


@dataclass
class RunConfig:
    command: str
    instance: Optional[str] = None
    k: Optional[int] = None
    p: str = "inf"
    r: Optional[float] = None
    tau: Optional[float] = None
    budget: Optional[int] = None
    eps_base: float = 0.01
    eps_ub: float = 1e-4
    seed: Optional[int] = None
    output: Optional[str] = None
    format: str = "json"

    def validate(self, instance: Optional[Instance] = None) -> None:
        self.p = norm_label(parse_norm(self.p))
        if not 0.0 <= self.eps_base < 1.0:
            raise InputError(f"eps_base must lie in [0, 1), got {self.eps_base}")
        if not 0.0 < self.eps_ub < 1.0:
            raise InputError(f"eps_ub must lie in (0, 1), got {self.eps_ub}")
        if self.format not in ("json", "csv"):
            raise InputError(f"Unknown output format {self.format!r}")
        if instance is not None and self.k is not None and not 1 <= self.k <= instance.m:
            raise InputError(f"k must lie in [1, {instance.m}], got {self.k}")


def parse_matching(text: Optional[str], instance: Instance) -> Matching:
    """``a1:b1,a2:b2`` or, when absent, the B-optimal matching."""
    if not text:
        return b_optimal(instance)
    pairs = {}
    for item in text.split(","):
        a, sep, b = item.strip().partition(":")
        if not sep or a not in instance.a_agents or b not in instance.b_agents:
            raise InputError(f"Cannot read matching entry {item!r}")
        pairs[a] = b
    mu = Matching(pairs)
    if set(mu.pairs) != set(instance.a_agents) or set(mu.inverse) != set(instance.b_agents):
        raise InputError("Matching must pair every agent exactly once")
    return mu


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(description="Robustness analysis of stable matchings under salience perturbations")
    parser.add_argument("--config", default=DEFAULT_CONFIG, help="Path to config file")
    parser.add_argument("--log-level", help="Override the configured log level")
    parser.add_argument("--workers", type=int, help="Worker threads (default: config, then CPU count)")
    parser.add_argument("--output", "-o", help="Output file (default: stdout)")
    parser.add_argument("--format", choices=["json", "csv"], default=None, help="Output format")
    sub = parser.add_subparsers(dest="command", required=True)

    def instance_command(name: str, help_text: str) -> argparse.ArgumentParser:
        cmd = sub.add_parser(name, help=help_text)
        cmd.add_argument("instance", help="Instance JSON file")
        cmd.add_argument("-k", type=int, help="Support budget (default: m)")
        cmd.add_argument("-p", choices=["1", "2", "inf"], help="Perturbation norm")
        cmd.add_argument("--matching", help="Matching as a1:b1,a2:b2 (default: B-optimal)")
        return cmd

    verify = instance_command("verify", "Check (k, r, p)-robustness of a matching")
    verify.add_argument("-r", type=float, required=True, help="Perturbation radius")
    instance_command("radius", "Exact robustness radius with per-pair thresholds")
    base = instance_command("base", "Closed-form base radius and dual gaps")
    base.add_argument("--eps-base", type=float)
    search = instance_command("search", "Anytime search for the most robust stable matching")
    search.add_argument("--budget", type=int)
    search.add_argument("--eps-ub", type=float)
    search.add_argument("--mode", choices=RELAXATION_MODES)
    search.add_argument("--trace", help="Write the search trace as JSON lines")
    front = instance_command("frontier", "Robustness-cost frontier")
    front.add_argument("--eps-base", type=float)
    front.add_argument("--step", type=float)
    front.add_argument("--denominator", choices=DENOMINATORS)
    reg = instance_command("region", "Robustness region with volumes")
    reg.add_argument("--volume", choices=["exact", "mc", "both", "none"], default="exact")
    reg.add_argument("--samples", type=int)
    reg.add_argument("--seed", type=int)
    reg.add_argument("--polygon-dir", help="Directory for per-factor polygon CSVs (m=3)")
    sweep = sub.add_parser("sweep", help="One-swap robustness sweep on random ordinal markets")
    sweep.add_argument("--n-values", type=int, nargs="+")
    sweep.add_argument("--trials", type=int)
    sweep.add_argument("--seed", type=int, default=0)
    sweep.add_argument("--mode", choices=SWEEP_MODES)
    sweep.add_argument("--swap-side", choices=["A", "B"])
    return parser


def _pick(value: Any, default: Any) -> Any:
    return default if value is None else value


def run(args: argparse.Namespace, config: Dict[str, Any]) -> int:
    """Dispatch one subcommand; returns the exit code."""
    settings = config
    workers = resolve_workers(settings, args.workers)
    numerics = settings["numerics"]
    configure_solver(numerics["lp_tolerance"], numerics["lp_max_iterations"])
    digits = int(settings["output"]["significant_digits"])
    version = str(settings["output"]["schema_version"])
    run_config = RunConfig(
        command=args.command,
        instance=getattr(args, "instance", None),
        k=_pick(getattr(args, "k", None), settings["robustness"]["k"]),
        p=_pick(getattr(args, "p", None), settings["robustness"]["p"]),
        r=getattr(args, "r", None),
        budget=_pick(getattr(args, "budget", None), settings["search"]["budget"]),
        eps_base=_pick(getattr(args, "eps_base", None), settings["robustness"]["eps_base"]),
        eps_ub=_pick(getattr(args, "eps_ub", None), settings["relaxation"]["eps_ub"]),
        seed=getattr(args, "seed", None),
        output=args.output,
        format=_pick(args.format, "csv" if args.command in ("frontier", "sweep") else "json"),
    )

    if args.command == "sweep":
        run_config.validate()
        exp = settings["experiments"]
        table = one_swap_sweep(
            _pick(args.n_values, exp["n_values"]),
            _pick(args.trials, exp["trials"]),
            args.seed,
            _pick(args.mode, exp["mode"]),
            workers,
            _pick(args.swap_side, exp["swap_side"]),
            int(exp["enumeration_cap"]),
        )
        if run_config.format == "csv":
            write_csv(table, args.output, digits)
        else:
            write_json({"rows": table.to_dict(orient="records")}, asdict(run_config), args.output, version, digits)
        return EXIT_OK

    instance = parse_instance(args.instance)
    run_config.validate(instance)
    mu = parse_matching(args.matching, instance)
    k, p = run_config.k, run_config.p
    echo = asdict(run_config)

    def emit(result: Any) -> None:
        write_json(result, echo, args.output, version, digits)

    if args.command == "verify":
        if run_config.r is None or run_config.r < 0:
            raise InputError("verify needs a non-negative radius -r")
        result = verify_robust(instance, None, mu, k, run_config.r, p)
        emit(result)
        return EXIT_OK if result.robust else EXIT_FAILED

    if args.command == "radius":
        emit(robustness_radius(instance, None, mu, k, p, workers))
        return EXIT_OK

    if args.command == "base":
        ratios = base_ratios(instance, None, mu, p)
        emit({"base_radius": base_radius(instance, None, mu, p, run_config.eps_base), "eps_base": run_config.eps_base, "per_b": ratios})
        return EXIT_OK

    if args.command == "search":
        relax = settings["relaxation"]
        state = most_robust_anytime(
            instance, None, k, p, run_config.budget, run_config.eps_ub, _pick(args.mode, relax["mode"]), workers,
            allow_approximation=bool(relax["allow_norm_approximation"]),
        )
        if args.trace:
            write_jsonl(state.trace, args.trace, digits)
        emit(state)
        return EXIT_OK

    if args.command == "frontier":
        trade = settings["tradeoff"]
        points = frontier(
            instance, None, instance.costs, p, k, run_config.eps_base,
            _pick(args.step, trade["breakpoint_step"]), _pick(args.denominator, trade["denominator"]), workers,
        )
        if run_config.format == "csv":
            write_csv(frontier_frame(points), args.output, digits)
        else:
            emit({"points": points})
        return EXIT_OK

    if args.command == "region":
        geo = settings["geometry"]
        reg = region(instance, mu)
        result: Dict[str, Any] = {"matching": mu.to_list(), "factors": []}
        for factor in reg.factors:
            if factor.m <= int(geo["vertex_dimension_cap"]):
                vertices(factor, int(geo["vertex_dimension_cap"]))
            result["factors"].append(factor.to_dict())
        if args.volume in ("exact", "both"):
            result["volume"] = volume_exact(reg, int(geo["exact_dimension_cap"]))
        if args.volume in ("mc", "both"):
            result["volume_mc"] = volume_mc(
                reg, _pick(args.samples, geo["samples"]), _pick(args.seed, geo["seed"]),
                geo["burn_in"], geo["thinning"], geo["chains"], workers,
            )
        if args.polygon_dir:
            os.makedirs(args.polygon_dir, exist_ok=True)
            for b, frame in polygon_frames(reg).items():
                write_csv(frame, os.path.join(args.polygon_dir, f"{b}.csv"), digits)
        emit(result)
        return EXIT_OK

    raise InputError(f"Unknown command {args.command!r}")


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        default_missing = args.config == DEFAULT_CONFIG and not os.path.isfile(find_config(args.config))
        config = load_config(None if default_missing else args.config)
        if args.log_level:
            config["logging"]["level"] = args.log_level.upper()
        setup_logging(config)
        return run(args, config)
    except (SalienceMatchError, ConfigError) as e:
        logger.error(f"{args.command} failed: {str(e)}")
        print(f"error: {e}", file=sys.stderr)
        return EXIT_ERROR
    except Exception as e:
        logger.exception(f"{args.command} failed unexpectedly")
        print(f"error: {e}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
