"""Report writer: JSON run reports and CSV traces."""

from __future__ import annotations

import csv
import dataclasses
import json
import math
from collections.abc import Iterable, Mapping, Sequence
from enum import Enum
from pathlib import Path
from typing import Any

import numpy as np
import structlog
from pydantic import BaseModel, ConfigDict, Field, ValidationError

from mjls_bounds.errors import ConfigError

logger = structlog.get_logger()

REPORT_VERSION = 1

_NON_FINITE = {math.inf: "inf", -math.inf: "-inf"}


class RunReport(BaseModel):
    """Published report schema.

    Everything except ``timings`` is reproduced bit for bit by a re-run with the
    same config and seeds.
    """

    model_config = ConfigDict(extra="forbid")

    report_version: int = REPORT_VERSION
    kind: str
    name: str
    config_hash: str
    seeds: dict[str, int] = Field(default_factory=dict)
    results: dict[str, Any] = Field(default_factory=dict)
    verdicts: dict[str, str] = Field(default_factory=dict)
    flags: list[str] = Field(default_factory=list)
    timings: dict[str, float] = Field(default_factory=dict)


def to_jsonable(obj: Any) -> Any:
    """Convert results (dataclasses, numpy values, enums) to plain JSON types.

    Non-finite floats become the strings "inf", "-inf" and "nan".
    """
    if dataclasses.is_dataclass(obj) and not isinstance(obj, type):
        return {f.name: to_jsonable(getattr(obj, f.name)) for f in dataclasses.fields(obj)}
    if isinstance(obj, BaseModel):
        return to_jsonable(obj.model_dump(mode="python"))
    if isinstance(obj, Enum):
        return obj.value
    if isinstance(obj, np.ndarray):
        return to_jsonable(obj.tolist())
    if isinstance(obj, np.generic):
        return to_jsonable(obj.item())
    if isinstance(obj, Mapping):
        return {str(k): to_jsonable(v) for k, v in obj.items()}
    if isinstance(obj, list | tuple):
        return [to_jsonable(v) for v in obj]
    if isinstance(obj, float):
        if math.isnan(obj):
            return "nan"
        return _NON_FINITE.get(obj, obj)
    return obj


def dumps(report: RunReport) -> str:
    """Canonical JSON text: sorted keys, round-trip float repr, trailing newline."""
    payload = to_jsonable(report.model_dump(mode="python"))
    return json.dumps(payload, sort_keys=True, indent=2, allow_nan=False) + "\n"


def load_report(path: Path) -> RunReport:
    """Re-parse a report file and validate it against the schema."""
    try:
        return RunReport.model_validate_json(path.read_text(encoding="utf-8"))
    except (OSError, ValidationError) as err:
        raise ConfigError(f"invalid report {path}: {err}") from err


def _cell(value: Any) -> Any:
    value = to_jsonable(value)
    return "" if value is None else value


class ReportWriter:
    """Writes run reports and traces into one output directory."""

    def __init__(self, out_dir: Path) -> None:
        self._out_dir = out_dir

    @property
    def out_dir(self) -> Path:
        return self._out_dir

    def write_report(self, report: RunReport, stem: str) -> Path:
        """Write ``<stem>.json``."""
        path = self._path(f"{stem}.json")
        self._write(path, dumps(report))
        logger.info("report_written", path=str(path), kind=report.kind, flags=len(report.flags))
        return path

    def write_trace(
        self, stem: str, header: Sequence[str], rows: Iterable[Sequence[Any]]
    ) -> Path:
        """Write ``<stem>.csv`` with one header line."""
        path = self._path(f"{stem}.csv")
        path.parent.mkdir(parents=True, exist_ok=True)
        count = 0
        with path.open("w", newline="", encoding="utf-8") as handle:
            writer = csv.writer(handle)
            writer.writerow(header)
            for row in rows:
                writer.writerow([_cell(v) for v in row])
                count += 1
        logger.debug("trace_written", path=str(path), rows=count)
        return path

    def _path(self, name: str) -> Path:
        return self._out_dir / name

    def _write(self, path: Path, text: str) -> None:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(text, encoding="utf-8")
        logger.debug("file_written", path=str(path), size=len(text))
