"""
Exception hierarchy for the CVR dispatch pipeline.

Every error carries a stable ``code``; the CLI maps classes to a user message
and an exit code through ``ERROR_EXIT_MAP``.
"""

from typing import Any, Dict, Optional, Tuple


class CvrError(Exception):
    """Base class for all pipeline errors."""

    code = "CVR_ERROR"

    def __init__(self, message: str, details: Optional[Dict[str, Any]] = None):
        super().__init__(message)
        self.message = message
        self.details = details or {}

    def to_dict(self) -> Dict[str, Any]:
        return {"error_code": self.code, "message": self.message, "details": self.details}


# Input documents

class SchemaError(CvrError, ValueError):
    """A JSON/CSV document does not match its schema."""

    code = "SCHEMA_ERROR"


class DataError(CvrError, ValueError):
    """Measurements contain non-finite or inconsistent values."""

    code = "DATA_ERROR"


class ParameterError(CvrError, ValueError):
    """A numeric parameter is outside its admissible range."""

    code = "PARAMETER_ERROR"


# Network

class FeederValidationError(CvrError, ValueError):
    """The feeder violates a structural invariant (radial, connected, phases)."""

    code = "FEEDER_INVALID"


class SensitivityError(CvrError):
    """The reduced incidence matrix is singular."""

    code = "SINGULAR_INCIDENCE"


# Load / PV models

class DomainError(CvrError, ValueError):
    """Argument outside the mathematical domain of a model function."""

    code = "DOMAIN_ERROR"


class InfeasibleOperatingPointError(CvrError, ValueError):
    """PV active output exceeds the inverter apparent-power capacity."""

    code = "INFEASIBLE_OPERATING_POINT"


# Enrichment

class DegenerateInputError(CvrError, ValueError):
    """Training data cannot identify a model."""

    code = "DEGENERATE_INPUT"


class DegenerateBoundsError(CvrError):
    """Predicted upper bound lies below the lower bound beyond the clamping margin."""

    code = "DEGENERATE_BOUNDS"


class NoTeachersError(CvrError):
    """Enrichment was requested without any high-resolution teacher."""

    code = "NO_TEACHERS"


# Dispatch

class ModelValidityError(CvrError):
    """The affine voltage model denominator is not safely invertible."""

    code = "MODEL_VALIDITY"


class MomentLayoutError(CvrError):
    """Moments do not cover the uncertainty vector layout."""

    code = "MOMENT_LAYOUT_MISMATCH"


class DispatchFailedError(CvrError):
    """The dispatch problem ended infeasible or at a numerical limit."""

    code = "DISPATCH_FAILED"


# Validation

class OracleDivergenceError(CvrError):
    """The nonlinear sweep did not converge."""

    code = "ORACLE_DIVERGENCE"


# Error handling mapping: class -> (message, exit code)
ERROR_EXIT_MAP: Dict[type, Tuple[str, int]] = {
    SchemaError: ("Input document does not match its schema.", 2),
    ParameterError: ("Parameter out of range.", 2),
    DataError: ("Measurement data is invalid.", 3),
    FeederValidationError: ("Feeder is not a valid radial network.", 3),
    SensitivityError: ("Incidence matrix is singular; feeder is not radial.", 3),
    DomainError: ("Model argument outside its domain.", 3),
    InfeasibleOperatingPointError: ("PV output exceeds inverter capacity.", 3),
    DegenerateInputError: ("Training data is degenerate.", 3),
    DegenerateBoundsError: ("Enrichment bounds are degenerate.", 3),
    NoTeachersError: ("No PMU teachers found; rerun with --sm-only.", 4),
    ModelValidityError: ("Voltage model denominator check failed.", 5),
    MomentLayoutError: ("Moments do not match the feeder layout.", 5),
    DispatchFailedError: ("Dispatch problem is infeasible or hit a numerical limit.", 6),
    OracleDivergenceError: ("Nonlinear power-flow oracle diverged.", 7),
}


def exit_info(error: BaseException) -> Tuple[str, int]:
    """Return (message, exit code) for an exception, walking the class hierarchy."""
    for cls in type(error).__mro__:
        if cls in ERROR_EXIT_MAP:
            return ERROR_EXIT_MAP[cls]
    return ("Unexpected error.", 1)
