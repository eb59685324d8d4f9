"""Exception hierarchy shared by every salience-match module."""

from typing import Optional, Tuple


class SalienceMatchError(Exception):
    """Base class for all library errors."""


class InputError(SalienceMatchError, ValueError):
    """Malformed vectors, unknown agent ids or unsupported parameters."""


class InstanceValidationError(InputError):
    """Field-level validation failure for an instance document."""

    CODES = (
        "missing_field",
        "non_simplex",
        "non_permutation",
        "dimension_mismatch",
        "negative_attribute",
        "unknown_agent",
        "invalid_json",
    )

    def __init__(self, code: str, field: str, message: str):
        self.code = code
        self.field = field
        super().__init__(f"[{code}] {field}: {message}")


class DegeneratePerturbationError(SalienceMatchError):
    """Normalization constant of a perturbation is (numerically) zero."""


class DegenerateInstanceError(SalienceMatchError):
    """All attribute vectors coincide, so no dual gap is positive."""


class PreconditionError(SalienceMatchError):
    """An operation was called outside its precondition."""


class UnstableMatchingError(PreconditionError):
    """The matching is not stable at the unperturbed salience profile."""

    def __init__(self, blocking_pair: Optional[Tuple[str, str]] = None):
        self.blocking_pair = blocking_pair
        detail = f" (blocking pair {blocking_pair[0]}-{blocking_pair[1]})" if blocking_pair else ""
        super().__init__(f"Matching is not stable{detail}")


class UnsupportedNormError(SalienceMatchError):
    """Requested norm is not available for this computation."""


class UnsupportedDimensionError(SalienceMatchError):
    """Attribute dimension exceeds a geometry guard."""


class EnumerationLimitError(SalienceMatchError):
    """An enumeration exceeded its configured cap."""


class SolverError(SalienceMatchError):
    """The LP kernel failed to terminate or broke down numerically."""
