"""Instance files: JSON documents validated with pydantic, then by the market model."""

import json
import logging
import os
from typing import Any, Dict, List, Optional

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator
from pydantic_core import PydanticCustomError

from core.errors import InputError, InstanceValidationError
from core.market import Instance

logger = logging.getLogger(__name__)


def _unique(values: List[str], what: str) -> List[str]:
    if len(set(values)) != len(values):
        raise PydanticCustomError("non_permutation", "{what} contains a duplicate entry", {"what": what})
    return values


class InstanceDocument(BaseModel):
    model_config = ConfigDict(extra="forbid")

    m: Optional[int] = Field(default=None, ge=2)
    a_agents: List[str]
    b_agents: List[str]
    attributes: Dict[str, List[float]]
    a_prefs: Dict[str, List[str]]
    salience: Dict[str, List[float]]
    tie_break: List[str]
    costs: Optional[Dict[str, Dict[str, float]]] = None

    @field_validator("a_agents", "b_agents", "tie_break")
    @classmethod
    def agents_unique(cls, values: List[str]) -> List[str]:
        return _unique(values, "agent list")

    @field_validator("a_prefs")
    @classmethod
    def lists_unique(cls, prefs: Dict[str, List[str]]) -> Dict[str, List[str]]:
        for a, order in prefs.items():
            _unique(order, f"preference list of {a}")
        return prefs

    @model_validator(mode="after")
    def dimension_matches(self) -> "InstanceDocument":
        if self.m is not None:
            for a, vec in self.attributes.items():
                if len(vec) != self.m:
                    raise PydanticCustomError(
                        "dimension_mismatch", "attributes of {a} have length {got}, expected m={m}", {"a": a, "got": len(vec), "m": self.m}
                    )
        return self

    def to_instance(self) -> Instance:
        return Instance(
            tuple(self.a_agents),
            tuple(self.b_agents),
            self.attributes,
            self.a_prefs,
            self.salience,
            tuple(self.tie_break),
            self.costs,
        )


def _validation_error(error: ValidationError) -> InstanceValidationError:
    first = error.errors()[0]
    kind = first["type"]
    code = "missing_field" if kind == "missing" else kind if kind in InstanceValidationError.CODES else "invalid_json"
    field = ".".join(str(part) for part in first["loc"]) or "document"
    return InstanceValidationError(code, field, first["msg"])


def instance_from_dict(doc: Dict[str, Any]) -> Instance:
    try:
        return InstanceDocument.model_validate(doc).to_instance()
    except ValidationError as e:
        raise _validation_error(e) from e


def parse_instance(path: str) -> Instance:
    """Load and validate an instance file."""
    if not os.path.isfile(path):
        raise InputError(f"Instance file not found: {path}")
    try:
        with open(path, "r", encoding="utf-8") as f:
            text = f.read()
    except UnicodeDecodeError as e:
        raise InstanceValidationError("invalid_json", "document", f"not UTF-8 text: {e}") from e
    except OSError as e:
        raise InputError(f"Cannot read instance file {path}: {e}") from e
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as e:
        raise InstanceValidationError("invalid_json", "document", str(e)) from e
    if not isinstance(doc, dict):
        raise InstanceValidationError("invalid_json", "document", "top level must be an object")
    instance = instance_from_dict(doc)
    logger.info(f"Loaded instance {path}: n={instance.n}, m={instance.m}")
    return instance


def instance_to_json(instance: Instance, indent: int = 2) -> str:
    return json.dumps(instance.to_dict(), indent=indent)
