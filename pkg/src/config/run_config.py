"""
Per-run pipeline settings, loaded from a JSON file and overridden from the CLI.
"""

import json
from pathlib import Path
from typing import Any, Dict, Optional, Union

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from config.app_config import app_config
from dispatch import COUPLING_REFERENCES, MODE_ALIASES, RO_INTERPRETATIONS, SolverSettings
from enrichment import REACTIVE_COUPLINGS, WEIGHT_MODES
from errors import SchemaError
from feeder_model import format_validation_error
from moments import CORRELATION_GROUPS


class RunConfig(BaseModel):
    """One enrich -> solve -> validate run."""

    model_config = ConfigDict(extra="forbid", validate_assignment=True)

    # Paths
    feeder: Optional[str] = None
    pmu_dir: Optional[str] = None
    sm_dir: Optional[str] = None
    output_dir: str = "out"
    moments: Optional[str] = None
    dispatch: Optional[str] = None

    # Dispatch
    mode: str = "drcc"
    epsilon: float = Field(default=0.05, gt=0.0, lt=1.0)
    horizon: int = Field(default=24, ge=1)
    start_hour: int = Field(default=0, ge=0)
    v_min: float = Field(default=0.95 ** 2, gt=0.0)
    v_max: float = Field(default=1.05 ** 2, gt=0.0)
    ro_interpretation: str = "half_width"
    coupling_reference: str = "base_profile"

    # Enrichment
    bins: int = Field(default=20, ge=2)
    weights: str = "inverse"
    correlation: str = "none"
    reactive_coupling: str = "independent"
    sm_only: bool = False

    # Validation
    samples: int = Field(default=10000, ge=1000)
    seed: int = Field(default_factory=lambda: app_config.seed)
    family: str = "gaussian"

    # Solver
    solver: str = Field(default_factory=lambda: app_config.solver)
    solver_tolerance: float = Field(default=1e-8, gt=0.0)
    solver_max_iter: int = Field(default_factory=lambda: app_config.solver_max_iter, ge=1)
    workers: int = Field(default_factory=lambda: app_config.workers, ge=1)

    @field_validator("mode")
    @classmethod
    def validate_mode(cls, v):
        if v.lower() not in MODE_ALIASES:
            raise ValueError("mode must be one of det, ro, drcc")
        return MODE_ALIASES[v.lower()]

    @field_validator("ro_interpretation")
    @classmethod
    def validate_ro(cls, v):
        if v not in RO_INTERPRETATIONS:
            raise ValueError(f"must be one of {RO_INTERPRETATIONS}")
        return v

    @field_validator("coupling_reference")
    @classmethod
    def validate_coupling(cls, v):
        if v not in COUPLING_REFERENCES:
            raise ValueError(f"must be one of {COUPLING_REFERENCES}")
        return v

    @field_validator("weights")
    @classmethod
    def validate_weights(cls, v):
        if v not in WEIGHT_MODES:
            raise ValueError(f"must be one of {WEIGHT_MODES}")
        return v

    @field_validator("correlation")
    @classmethod
    def validate_correlation(cls, v):
        if v not in CORRELATION_GROUPS:
            raise ValueError(f"must be one of {CORRELATION_GROUPS}")
        return v

    @field_validator("reactive_coupling")
    @classmethod
    def validate_reactive(cls, v):
        if v not in REACTIVE_COUPLINGS:
            raise ValueError(f"must be one of {REACTIVE_COUPLINGS}")
        return v

    @field_validator("family")
    @classmethod
    def validate_family(cls, v):
        if v not in ("gaussian", "two_point"):
            raise ValueError("must be gaussian or two_point")
        return v

    @model_validator(mode="after")
    def validate_limits(self):
        if self.v_min > self.v_max:
            raise ValueError("v_min must not exceed v_max")
        return self

    def with_overrides(self, **overrides: Any) -> "RunConfig":
        """Copy with every non-None override applied and re-validated."""
        data = self.model_dump()
        data.update({k: v for k, v in overrides.items() if v is not None})
        return _validated(data)

    def with_environment(self) -> "RunConfig":
        tolerance = app_config.solver_tolerance_override
        return self.with_overrides(solver_tolerance=tolerance) if tolerance is not None else self

    def require_paths(self, *names: str) -> None:
        for name in names:
            value = getattr(self, name)
            if value is None:
                raise SchemaError(f"{name}: path is required for this command")
            if not Path(value).exists():
                raise SchemaError(f"{name}: {value} does not exist")

    def solver_settings(self) -> SolverSettings:
        return SolverSettings(self.solver, self.solver_tolerance, self.solver_max_iter, self.workers)

    def output_path(self, name: str) -> Path:
        path = Path(self.output_dir)
        path.mkdir(parents=True, exist_ok=True)
        return path / name


def _validated(data: Dict[str, Any]) -> RunConfig:
    try:
        return RunConfig.model_validate(data)
    except ValidationError as e:
        raise SchemaError(format_validation_error(e)) from e


def load_run_config(path: Optional[Union[str, Path]] = None) -> RunConfig:
    """Defaults, then the JSON file if given."""
    if path is None:
        return _validated({})
    path = Path(path)
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except OSError as e:
        raise SchemaError(f"cannot read config file {path}: {e}") from e
    except json.JSONDecodeError as e:
        raise SchemaError(f"{path}:{e.lineno}:{e.colno}: {e.msg}") from e
    if not isinstance(data, dict):
        raise SchemaError(f"{path}: config must be a JSON object")
    return _validated(data)
