"""Serialization of results: JSON with a config echo, CSV tables and JSON lines."""

import json
import logging
import math
import sys
from dataclasses import asdict, is_dataclass
from typing import Any, Dict, Iterable, List, Optional

import numpy as np
import pandas as pd

from analysis.geometry import Region, polygon
from analysis.tradeoff import FrontierPoint
from core.errors import InputError

logger = logging.getLogger(__name__)

UNBOUNDED = "unbounded"


def format_number(value: float, digits: int = 9) -> Any:
    if math.isnan(value):
        return None
    if math.isinf(value):
        return UNBOUNDED if value > 0 else f"-{UNBOUNDED}"
    return float(f"{value:.{digits}g}")


def normalize(obj: Any, digits: int = 9) -> Any:
    """Plain JSON types with rounded floats and "unbounded" for infinity."""
    if hasattr(obj, "to_dict"):
        return normalize(obj.to_dict(), digits)
    if is_dataclass(obj) and not isinstance(obj, type):
        return normalize(asdict(obj), digits)
    if isinstance(obj, dict):
        return {str(k): normalize(v, digits) for k, v in obj.items()}
    if isinstance(obj, (frozenset, set)):
        return [normalize(v, digits) for v in sorted(obj)]
    if isinstance(obj, (list, tuple)):
        return [normalize(v, digits) for v in obj]
    if isinstance(obj, np.ndarray):
        return [normalize(v, digits) for v in obj.tolist()]
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        return format_number(float(obj), digits)
    return obj


def _write(text: str, path: Optional[str]) -> None:
    if path is None:
        sys.stdout.write(text)
        return
    try:
        with open(path, "w") as f:
            f.write(text)
    except OSError as e:
        raise InputError(f"Cannot write {path}: {e}") from e
    logger.info(f"Wrote {path}")


def render_json(result: Any, config: Dict[str, Any], schema_version: str = "1.0", digits: int = 9) -> str:
    doc = {"schema_version": schema_version, "config": normalize(config, digits), "result": normalize(result, digits)}
    return json.dumps(doc, indent=2) + "\n"


def write_json(result: Any, config: Dict[str, Any], path: Optional[str] = None, schema_version: str = "1.0", digits: int = 9) -> None:
    _write(render_json(result, config, schema_version, digits), path)


def write_csv(frame: pd.DataFrame, path: Optional[str] = None, digits: int = 9) -> None:
    _write(frame.to_csv(index=False, float_format=f"%.{digits}g"), path)


def write_jsonl(records: Iterable[Dict[str, Any]], path: Optional[str] = None, digits: int = 9) -> None:
    _write("".join(json.dumps(normalize(r, digits)) + "\n" for r in records), path)


def frontier_frame(points: List[FrontierPoint]) -> pd.DataFrame:
    rows = []
    for point in points:
        row = point.to_dict()
        row["c_ub"] = point.c_ub
        rows.append(row)
    frame = pd.DataFrame(rows, columns=["tau", "c_lb", "c_ub", "matching"])
    frame["c_ub"] = frame["c_ub"].map(lambda v: "infeasible" if math.isinf(v) else v)
    return frame


def polygon_frames(reg: Region) -> Dict[str, pd.DataFrame]:
    """Ordered polygon corners for every factor on the 2-simplex."""
    frames = {}
    for factor in reg.factors:
        if factor.m != 3:
            continue
        corners = polygon(factor)
        frames[factor.b] = pd.DataFrame([c.tolist() for c in corners], columns=["s1", "s2", "s3"])
    return frames
