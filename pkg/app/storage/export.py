# app/storage/export.py
from __future__ import annotations

import logging
from pathlib import Path
from typing import Any, Literal

import numpy as np
import pandas as pd
from pydantic import BaseModel

from app.core.errors import ExportError, OjaError
from app.core.harness import SERIES_COLUMNS, SWEEP_COLUMNS, AggregateSeries
from app.storage.schemas import SeriesDocument, SeriesRow, SweepDocument, SweepRow

logger = logging.getLogger(__name__)

SeriesFormat = Literal["csv", "json"]


def _resolve_format(path: Path, fmt: str | None) -> SeriesFormat:
    fmt = (fmt or ("json" if path.suffix.lower() == ".json" else "csv")).strip().lower()
    if fmt not in ("csv", "json"):
        raise OjaError(f"Invalid format '{fmt}'. Allowed: ['csv', 'json']")
    return fmt  # type: ignore[return-value]


def export_series(series: AggregateSeries, path: str | Path, fmt: str | None = None) -> Path:
    """
    Write a series as CSV (header `t,mean_sin2,p20,p80,bound_sin2`, 17
    significant digits, LF line endings) or as a JSON document carrying the
    config and its digest. The format follows the suffix unless given.
    """
    if len(series) == 0:
        raise OjaError("Refusing to export an empty series.")
    path = Path(path)
    fmt = _resolve_format(path, fmt)

    if fmt == "csv":
        _write_csv(series.frame, path)
    else:
        doc = SeriesDocument(
            config=series.config,
            digest=series.digest,
            rows=[SeriesRow(**dict(zip(SERIES_COLUMNS, row))) for row in series.rows],
        )
        _write_json(doc, path)

    logger.info("Wrote %d row(s) to %s (%s).", len(series), path, fmt)
    return path


def export_sweep(
    frame: pd.DataFrame, config: dict[str, Any], path: str | Path, fmt: str | None = None
) -> Path:
    """Write a velocity sweep table with the same CSV/JSON conventions as export_series."""
    if frame.empty:
        raise OjaError("Refusing to export an empty sweep.")
    if list(frame.columns) != SWEEP_COLUMNS:
        raise OjaError(f"Sweep columns must be {SWEEP_COLUMNS}, got {list(frame.columns)}.")
    path = Path(path)
    fmt = _resolve_format(path, fmt)

    if fmt == "csv":
        _write_csv(frame, path)
    else:
        rows = [SweepRow(**row) for row in frame.to_dict(orient="records")]
        _write_json(SweepDocument(config=config, rows=rows), path)

    logger.info("Wrote %d sweep row(s) to %s (%s).", len(frame), path, fmt)
    return path


def _write_csv(frame: pd.DataFrame, path: Path) -> None:
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        frame.to_csv(path, index=False, float_format="%.17g", lineterminator="\n")
    except OSError as e:
        raise ExportError(str(path), e) from e


def _write_json(doc: BaseModel, path: Path) -> None:
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with path.open("w", encoding="utf-8", newline="\n") as fh:
            fh.write(doc.model_dump_json(indent=2))
            fh.write("\n")
    except OSError as e:
        raise ExportError(str(path), e) from e


def load_series(path: str | Path, fmt: str | None = None) -> AggregateSeries:
    """Re-import a series written by export_series. CSV files carry no config."""
    path = Path(path)
    fmt = _resolve_format(path, fmt)

    try:
        if fmt == "csv":
            frame = pd.read_csv(path, float_precision="round_trip", dtype={"t": np.int64})
            return AggregateSeries(frame=frame[SERIES_COLUMNS], config={}, digest="")
        doc = SeriesDocument.model_validate_json(path.read_text(encoding="utf-8"))
    except OSError as e:
        raise ExportError(str(path), e) from e

    frame = pd.DataFrame([row.model_dump() for row in doc.rows], columns=SERIES_COLUMNS)
    frame["t"] = frame["t"].astype(np.int64)
    return AggregateSeries(frame=frame, config=doc.config, digest=doc.digest)
