"""Shared test fixtures."""

from __future__ import annotations

import json
from collections.abc import Callable, Iterator
from pathlib import Path
from typing import Any

import pytest
import structlog

from mjls_bounds.constraint_graph import Constraint
from mjls_bounds.jsr_bounds import MatrixFamily

FIXTURES_DIR = Path(__file__).parent / "fixtures"


@pytest.fixture(autouse=True)
def _reset_structlog() -> Iterator[None]:
    """CLI runs bind structlog to the runner's stderr; restore defaults afterwards."""
    yield
    structlog.reset_defaults()


@pytest.fixture()
def fibonacci_family() -> MatrixFamily:
    return MatrixFamily.create([[[1.0, 1.0], [0.0, 1.0]], [[1.0, 0.0], [1.0, 1.0]]])


@pytest.fixture()
def stochastic_family() -> MatrixFamily:
    """Three row-stochastic matrices, unconstrained."""
    return MatrixFamily.create(
        [
            [[0.5, 0.5], [0.2, 0.8]],
            [[1.0, 0.0], [0.3, 0.7]],
            [[0.1, 0.9], [0.6, 0.4]],
        ]
    )


@pytest.fixture()
def contractive_family() -> MatrixFamily:
    """Stable pair where symbol 1 may not repeat."""
    return MatrixFamily.create(
        [[[0.6, 0.3], [0.0, 0.5]], [[0.4, 0.0], [0.5, 0.3]]],
        Constraint.from_rows([[0, 1], [1, 1]]),
    )


@pytest.fixture()
def problem_json() -> Callable[[str], dict[str, Any]]:
    """Load a problem config from tests/fixtures by stem."""

    def load(stem: str) -> dict[str, Any]:
        data: dict[str, Any] = json.loads((FIXTURES_DIR / f"{stem}.json").read_text())
        return data

    return load


@pytest.fixture()
def write_config(tmp_path: Path) -> Callable[..., Path]:
    """Write a config dict to a temporary JSON file and return its path."""

    def write(data: dict[str, Any], name: str = "problem.json") -> Path:
        path = tmp_path / name
        path.write_text(json.dumps(data))
        return path

    return write
