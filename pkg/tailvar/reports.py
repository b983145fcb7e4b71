"""Price ingestion and the files a run leaves behind.

Public API
----------
    load_price_csv(path) -> PriceSeries
    write_summary_csv(table, path) / read_summary_csv(path) -> SummaryTable
    write_records(records, path) / read_records(path) -> list[ReplicationRecord]
    write_figures(frames, path_for) -> list[Path]
    write_json_report(payload, path)
    write_manifest(path, files, cfg, duration) / read_manifest(run_dir) -> dict
    RunOutputs  (context manager that removes partial outputs on failure)

Report numbers are written with 10 significant digits; records use JSON's
shortest round-trip float repr.  Nothing time- or host-dependent goes into
any file except ``manifest.json``.
"""

from __future__ import annotations

import hashlib
import json
from collections.abc import Callable, Iterable
from pathlib import Path

import numpy as np
import pandas as pd
import structlog

from tailvar import __version__
from tailvar.config import ExperimentConfig
from tailvar.errors import PriceDataError, ReportFormatError
from tailvar.models import (
    SUMMARY_COLUMNS,
    CellSummary,
    PriceSeries,
    ReplicationRecord,
    SummaryTable,
)

logger = structlog.get_logger()

SUMMARY_FILE = "summary.csv"
RECORDS_FILE = "records.ndjson"
MANIFEST_FILE = "manifest.json"
FLOAT_FORMAT = "%.10g"


# ---------------------------------------------------------------------------
# Price data
# ---------------------------------------------------------------------------


def load_price_csv(path: Path) -> PriceSeries:
    """Read a ``date,close`` CSV; rows come back sorted by date.

    Errors name the 1-based data row (the header is row 0).
    """
    try:
        frame = pd.read_csv(path, dtype=str, keep_default_na=False)
    except pd.errors.EmptyDataError:
        raise PriceDataError(f"{path} is empty") from None
    frame.columns = [str(c).strip().lower() for c in frame.columns]
    for column in ("date", "close"):
        if column not in frame.columns:
            raise PriceDataError(f"missing column {column!r}")

    dates = pd.to_datetime(
        frame["date"].str.strip(), format="%Y-%m-%d", errors="coerce"
    )
    closes = pd.to_numeric(frame["close"].str.strip(), errors="coerce")
    for row, (raw, parsed) in enumerate(zip(frame["date"], dates), start=1):
        if pd.isna(parsed):
            raise PriceDataError(f"unparseable date {raw!r}", row=row)
    for row, (raw, parsed) in enumerate(zip(frame["close"], closes), start=1):
        if pd.isna(parsed) or not np.isfinite(parsed):
            raise PriceDataError(f"unparseable close {raw!r}", row=row)
        if parsed <= 0:
            raise PriceDataError(f"close must be positive, got {raw.strip()}", row=row)
    duplicated = dates.duplicated()
    if duplicated.any():
        row = int(np.argmax(duplicated.to_numpy())) + 1
        raise PriceDataError(f"duplicate date {dates.iloc[row - 1].date()}", row=row)

    ordered = pd.DataFrame({"date": dates, "close": closes}).sort_values(
        "date", kind="stable"
    )
    return PriceSeries(
        dates=tuple(ts.date() for ts in ordered["date"]),
        closes=ordered["close"].to_numpy(dtype=float),
    )


# ---------------------------------------------------------------------------
# Summary and records
# ---------------------------------------------------------------------------


def summary_frame(table: SummaryTable) -> pd.DataFrame:
    rows = [cell.to_row() for cell in table]
    return pd.DataFrame(rows, columns=list(SUMMARY_COLUMNS))


def write_summary_csv(table: SummaryTable, path: Path) -> Path:
    summary_frame(table).to_csv(
        path, index=False, float_format=FLOAT_FORMAT, lineterminator="\n"
    )
    return Path(path)


def read_summary_csv(path: Path) -> SummaryTable:
    frame = pd.read_csv(path)
    missing = [c for c in SUMMARY_COLUMNS if c not in frame.columns]
    if missing:
        raise ReportFormatError(f"{path}: missing summary columns {missing}")
    return SummaryTable(
        tuple(CellSummary.from_row(row) for row in frame.to_dict("records"))
    )


def write_records(records: Iterable[ReplicationRecord], path: Path) -> Path:
    """One JSON object per line, keys sorted."""
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for record in records:
            fh.write(json.dumps(record.to_dict(), sort_keys=True, allow_nan=False))
            fh.write("\n")
    return Path(path)


def read_records(path: Path) -> list[ReplicationRecord]:
    records = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                records.append(ReplicationRecord.from_dict(json.loads(line)))
    return records


# ---------------------------------------------------------------------------
# Figures and JSON reports
# ---------------------------------------------------------------------------


def write_figure(frame: pd.DataFrame, path: Path) -> Path:
    frame.to_csv(path, index=False, float_format=FLOAT_FORMAT, lineterminator="\n")
    return Path(path)


def write_figures(
    frames: dict[str, pd.DataFrame], path_for: Callable[[str], Path]
) -> list[Path]:
    """One ``<name>.csv`` per figure, at the path *path_for* gives its file name."""
    return [
        write_figure(frames[name], path_for(f"{name}.csv")) for name in sorted(frames)
    ]


def write_json_report(payload: dict, path: Path) -> Path:
    Path(path).write_text(
        json.dumps(payload, indent=2, sort_keys=True, allow_nan=False) + "\n",
        encoding="utf-8",
    )
    return Path(path)


# ---------------------------------------------------------------------------
# Manifest
# ---------------------------------------------------------------------------


def file_digest(path: Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def write_manifest(
    path: Path,
    files: Iterable[Path],
    cfg: ExperimentConfig,
    duration: float,
    *,
    merge: bool = False,
) -> Path:
    """List every emitted file with its sha256 next to the config echo.

    With *merge*, entries of an existing manifest at *path* are kept, so a
    later ``figures`` run into the same directory extends it.
    """
    path = Path(path)
    listed: dict[str, str] = {}
    if merge and path.exists():
        listed.update(read_manifest(path.parent)["files"])
    for f in files:
        listed[Path(f).name] = file_digest(f)
    manifest = {
        "version": __version__,
        "master_seed": cfg.master_seed,
        "config": cfg.to_text(),
        "files": dict(sorted(listed.items())),
        "duration_seconds": round(duration, 3),
    }
    path.write_text(json.dumps(manifest, indent=2) + "\n", encoding="utf-8")
    return path


def read_manifest(run_dir: Path) -> dict:
    path = Path(run_dir) / MANIFEST_FILE
    try:
        manifest = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ReportFormatError(f"{path}: not a valid manifest ({exc.msg})") from None
    for key in ("config", "files", "master_seed"):
        if key not in manifest:
            raise ReportFormatError(f"{path}: manifest has no {key!r} entry")
    return manifest


class RunOutputs:
    """Tracks files written into *out_dir*; removes them if the block raises."""

    def __init__(self, out_dir: Path) -> None:
        self.out_dir = Path(out_dir)
        self.written: list[Path] = []

    def __enter__(self) -> RunOutputs:
        self.out_dir.mkdir(parents=True, exist_ok=True)
        return self

    def __exit__(self, exc_type, exc, tb) -> None:
        if exc_type is None:
            return
        for path in self.written:
            path.unlink(missing_ok=True)
        if self.written:
            logger.info(
                "outputs_removed", count=len(self.written), out_dir=str(self.out_dir)
            )

    def path(self, name: str) -> Path:
        path = self.out_dir / name
        self.written.append(path)
        return path
