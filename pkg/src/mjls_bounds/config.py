"""Configuration: process settings from the environment and problem configs from JSON."""

from __future__ import annotations

import hashlib
import json
import os
from importlib.resources import files
from importlib.resources.abc import Traversable
from pathlib import Path
from typing import Annotated, Literal

from pydantic import (
    BaseModel,
    ConfigDict,
    Field,
    TypeAdapter,
    ValidationError,
    field_validator,
    model_validator,
)
from pydantic_settings import BaseSettings

from mjls_bounds.errors import ConfigError
from mjls_bounds.matrix_core import NormKind
from mjls_bounds.rotation_gallery import Side

CONFIG_VERSIONS = frozenset({1})

MatrixRows = list[list[float]]


class Settings(BaseSettings):
    """Process-level settings loaded from environment variables.

    All settings use the MJLS_ prefix:
      - MJLS_OUTPUT_DIR for the default report directory
      - MJLS_LOG_LEVEL for logging
      - MJLS_THREADS for the worker cap
      - MJLS_ORACLE_MODE to disable pruning everywhere
    """

    model_config = {"env_prefix": "MJLS_", "case_sensitive": False}

    output_dir: Path = Field(default=Path("."), description="Default report directory")
    log_level: str = Field(default="INFO", description="Log level")
    threads: int = Field(
        default_factory=lambda: os.cpu_count() or 1, description="Worker thread cap"
    )
    oracle_mode: bool = Field(default=False, description="Disable pruning for cross-checks")

    @field_validator("log_level")
    @classmethod
    def validate_log_level(cls, v: str) -> str:
        valid = {"DEBUG", "INFO", "WARNING", "ERROR", "CRITICAL"}
        if v.upper() not in valid:
            raise ValueError(f"log_level must be one of {valid}")
        return v.upper()

    @field_validator("threads")
    @classmethod
    def validate_threads(cls, v: int) -> int:
        if v < 1:
            raise ValueError("threads must be at least 1")
        return v


def _check_stack(matrices: list[MatrixRows]) -> list[MatrixRows]:
    if not matrices:
        raise ValueError("at least one matrix is required")
    d = len(matrices[0])
    for m in matrices:
        _check_square(m, d)
    return matrices


def _check_square(m: MatrixRows, d: int | None = None) -> MatrixRows:
    size = len(m) if d is None else d
    if size == 0 or len(m) != size or any(len(row) != size for row in m):
        raise ValueError(f"expected a {size}x{size} matrix")
    return m


class _Problem(BaseModel):
    model_config = ConfigDict(extra="forbid")

    version: int = 1
    name: str = ""

    @field_validator("version")
    @classmethod
    def validate_version(cls, v: int) -> int:
        if v not in CONFIG_VERSIONS:
            raise ValueError(f"unrecognized config version {v}")
        return v


class RobustnessOptions(BaseModel):
    model_config = ConfigDict(extra="forbid")

    epsilon: float = Field(gt=0.0)
    samples: int = Field(default=32, ge=0)
    seed: int


class ContinuityOptions(BaseModel):
    model_config = ConfigDict(extra="forbid")

    direction: list[MatrixRows]
    deltas: list[float]


class JsrProblem(_Problem):
    kind: Literal["jsr"]
    matrices: list[MatrixRows]
    constraint: list[list[int]] | None = None
    max_n: int = Field(default=8, ge=1)
    norm: NormKind = NormKind.SPECTRAL2
    prune: bool = True
    certificate: bool = True
    dilation_alpha: float | None = Field(default=None, ge=1.0)
    robustness: RobustnessOptions | None = None
    continuity: ContinuityOptions | None = None

    @field_validator("matrices")
    @classmethod
    def validate_matrices(cls, v: list[MatrixRows]) -> list[MatrixRows]:
        return _check_stack(v)

    @model_validator(mode="after")
    def validate_shapes(self) -> JsrProblem:
        k = len(self.matrices)
        if self.constraint is not None:
            if len(self.constraint) != k or any(len(row) != k for row in self.constraint):
                raise ValueError(f"constraint must be {k}x{k} to match the family")
            if any(x not in (0, 1) for row in self.constraint for x in row):
                raise ValueError("constraint entries must be 0 or 1")
        if self.continuity is not None:
            d = len(self.matrices[0])
            if len(self.continuity.direction) != k:
                raise ValueError("continuity direction needs one matrix per family member")
            for m in self.continuity.direction:
                _check_square(m, d)
        return self


class MarkovProblem(_Problem):
    kind: Literal["markov"]
    matrices: list[MatrixRows]
    p_matrix: MatrixRows
    p_vec: list[float] | None = None
    initial: list[float] | None = None
    seed: int
    length: int = Field(default=10_000, ge=1)
    trials: int = Field(default=8, ge=1)
    spectrum_length: int = Field(default=10_000, ge=20)
    window: int = Field(default=8, ge=1)
    max_length: int = Field(default=10_000, ge=1)
    exterior_order: int | None = Field(default=None, ge=1)

    @field_validator("matrices")
    @classmethod
    def validate_matrices(cls, v: list[MatrixRows]) -> list[MatrixRows]:
        return _check_stack(v)

    @model_validator(mode="after")
    def validate_chain(self) -> MarkovProblem:
        k = len(self.matrices)
        _check_square(self.p_matrix, k)
        for row in self.p_matrix:
            if any(x < 0.0 for x in row) or abs(sum(row) - 1.0) > 1e-12:
                raise ValueError("p_matrix rows must be probability vectors")
        for vec in (self.p_vec, self.initial):
            if vec is not None and len(vec) != k:
                raise ValueError(f"distributions must have length {k}")
        if self.exterior_order is not None and self.exterior_order > len(self.matrices[0]):
            raise ValueError("exterior_order exceeds the matrix dimension")
        return self


class RotationProblem(_Problem):
    kind: Literal["rotation"]
    cocycle: Literal["spectral_finiteness", "periodic_not_uniform"]
    head: list[int] = Field(default_factory=lambda: [0])
    period: list[int] = Field(default_factory=lambda: [1])
    depth: int = Field(default=40, ge=3)
    count: int = Field(default=8, ge=1)
    side: Side = Side.BELOW
    dim: int = Field(default=2, ge=1)
    gamma: float = Field(default=0.5, gt=0.0, lt=1.0)
    n_max: int = Field(default=64, ge=1)
    fiber_samples: int = Field(default=4, ge=0)
    closing_angles: int = Field(default=16, ge=1)


class OdeProblem(_Problem):
    kind: Literal["ode"]
    driving: Literal["rotation", "periodic"]
    speed: float | None = None
    period: float | None = Field(default=None, gt=0.0)
    constant: MatrixRows
    cos_terms: list[MatrixRows] = Field(default_factory=list)
    sin_terms: list[MatrixRows] = Field(default_factory=list)
    w: float = Field(default=0.0, ge=0.0, lt=1.0)
    step: float = Field(default=1e-3, gt=0.0)
    horizon: float = Field(default=10.0, gt=0.0)
    subdivision: list[float] | None = None
    beta: float = Field(default=-0.5, lt=0.0)
    epsilon: float = Field(default=0.1, gt=0.0)
    xi_horizon: float = Field(default=1.0, gt=0.0)
    samples: int = Field(default=16, ge=1)
    sample_points: list[float] = Field(default_factory=lambda: [0.0])
    series_points: int = Field(default=101, ge=2)

    @field_validator("constant")
    @classmethod
    def validate_constant(cls, v: MatrixRows) -> MatrixRows:
        return _check_square(v)

    @model_validator(mode="after")
    def validate_driving(self) -> OdeProblem:
        if self.driving == "rotation" and self.speed is None:
            raise ValueError("rotation driving needs a speed")
        if self.driving == "periodic" and self.period is None:
            raise ValueError("periodic driving needs a period")
        d = len(self.constant)
        for m in [*self.cos_terms, *self.sin_terms]:
            _check_square(m, d)
        return self


ProblemConfig = Annotated[
    JsrProblem | MarkovProblem | RotationProblem | OdeProblem, Field(discriminator="kind")
]

_problem_adapter: TypeAdapter[ProblemConfig] = TypeAdapter(ProblemConfig)


def parse_problem(text: str) -> ProblemConfig:
    """Validate a JSON problem config; every failure surfaces as ConfigError."""
    try:
        return _problem_adapter.validate_json(text)
    except ValidationError as err:
        raise ConfigError(f"invalid problem config: {err}") from err


def load_problem(path: Path | Traversable) -> ProblemConfig:
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as err:
        raise ConfigError(f"cannot read config {path}: {err}") from err
    return parse_problem(text)


def config_hash(problem: ProblemConfig) -> str:
    """SHA-256 of the canonical JSON form of a validated config."""
    canonical = json.dumps(
        problem.model_dump(mode="json"), sort_keys=True, separators=(",", ":")
    )
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


def with_seed(problem: ProblemConfig, seed: int) -> ProblemConfig:
    """Replace every seed in a config."""
    if isinstance(problem, MarkovProblem):
        return problem.model_copy(update={"seed": seed})
    if isinstance(problem, JsrProblem) and problem.robustness is not None:
        robustness = problem.robustness.model_copy(update={"seed": seed})
        return problem.model_copy(update={"robustness": robustness})
    return problem


def bundled_configs() -> list[Traversable]:
    """Reproduction configs shipped with the package, sorted by name."""
    root = files("mjls_bounds") / "configs"
    return sorted(
        (entry for entry in root.iterdir() if entry.name.endswith(".json")),
        key=lambda entry: entry.name,
    )
