import copy
import logging
import os
from logging.handlers import RotatingFileHandler
from pathlib import Path
from typing import Any, Dict, Optional

import yaml
from dotenv import load_dotenv

DEFAULTS: Dict[str, Any] = {
    "numerics": {"lp_tolerance": 1e-9, "lp_max_iterations": 50000},
    "robustness": {"eps_base": 0.01, "k": None, "p": "inf"},
    "relaxation": {"mode": "threshold", "eps_ub": 1e-4, "allow_norm_approximation": False},
    "search": {"budget": 1000},
    "tradeoff": {"breakpoint_step": 1e-6, "denominator": "partner"},
    "geometry": {
        "samples": 200000,
        "burn_in": 1000,
        "thinning": 10,
        "chains": 64,
        "seed": 42,
        "vertex_dimension_cap": 6,
        "exact_dimension_cap": 4,
    },
    "experiments": {
        "enumeration_cap": 1000000,
        "n_values": [4, 8, 16, 32, 64, 128],
        "trials": 500,
        "mode": "b-optimal",
        "swap_side": "B",
    },
    "parallel": {"workers": None},
    "logging": {
        "level": "INFO",
        "file": None,
        "format": "%(asctime)s - %(name)s - %(levelname)s - %(message)s",
        "max_size": 10485760,
        "backup_count": 5,
    },
    "output": {"schema_version": "1.0", "significant_digits": 9},
}


class ConfigError(RuntimeError):
    """Configuration file could not be found or parsed."""


def merge_defaults(config: Optional[Dict[str, Any]], defaults: Dict[str, Any] = DEFAULTS) -> Dict[str, Any]:
    """Recursively fill keys missing from config with the defaults."""
    merged = copy.deepcopy(defaults)
    for key, value in (config or {}).items():
        if isinstance(value, dict) and isinstance(merged.get(key), dict):
            merged[key] = merge_defaults(value, merged[key])
        else:
            merged[key] = value
    return merged


def find_config(config_path: str) -> str:
    if os.path.isabs(config_path):
        return config_path
    search_dir = os.getcwd()
    while True:
        candidate = os.path.join(search_dir, config_path)
        if os.path.isfile(candidate):
            return candidate
        parent = os.path.dirname(search_dir)
        if parent == search_dir:
            return config_path
        search_dir = parent


def load_config(config_path: Optional[str] = "config.yaml") -> Dict[str, Any]:
    """
    Load configuration from a YAML file, searching parent directories for
    relative paths, and apply environment overrides. ``None`` gives the defaults.
    """
    load_dotenv()
    if config_path is None:
        config = merge_defaults({})
    else:
        orig_path = config_path
        path = find_config(config_path)
        try:
            with open(path, "r") as f:
                config = merge_defaults(yaml.safe_load(f) or {})
        except Exception as e:
            raise ConfigError(f"Failed to load configuration: {str(e)} (searched for '{orig_path}')")

    workers = os.getenv("SALIENCE_WORKERS")
    if workers:
        try:
            config["parallel"]["workers"] = int(workers)
        except ValueError:
            raise ConfigError(f"SALIENCE_WORKERS must be an integer, got {workers!r}")
    level = os.getenv("SALIENCE_LOG_LEVEL")
    if level:
        config["logging"]["level"] = level.upper()
    return config


def resolve_workers(config: Dict[str, Any], override: Optional[int] = None) -> int:
    workers = override if override is not None else config.get("parallel", {}).get("workers")
    if workers is None:
        workers = os.cpu_count() or 1
    return max(1, int(workers))


def setup_logging(config: Optional[Dict[str, Any]] = None) -> None:
    """Set up logging from the ``logging`` section of the configuration."""
    settings = merge_defaults(config or {})["logging"]
    level = getattr(logging, str(settings["level"]).upper(), logging.INFO)
    handlers = [logging.StreamHandler()]
    if settings.get("file"):
        log_path = Path(settings["file"])
        log_path.parent.mkdir(parents=True, exist_ok=True)
        handlers.append(
            RotatingFileHandler(log_path, maxBytes=int(settings["max_size"]), backupCount=int(settings["backup_count"]))
        )
    logging.basicConfig(level=level, format=settings["format"], handlers=handlers, force=True)
