"""Backblaze drive-stats ingestion.

Daily snapshot CSVs are parsed into :class:`SmartRecord` rows, grouped into
per-serial :class:`DeviceHistory` objects, and sliced into fixed 151-day
:class:`FeatureMatrix` blocks anchored at a failure day or a "current" day.
"""

from __future__ import annotations

import csv
import io
import logging
from collections import Counter
from dataclasses import dataclass, field
from datetime import date, timedelta
from functools import cached_property
from pathlib import Path
from typing import Iterable, Mapping, TextIO

import numpy as np

from . import MATRIX_DAYS, SMART_IDS

log = logging.getLogger(__name__)

FEATURE_COLUMNS = tuple(f"smart_{i}_raw" for i in SMART_IDS)
REQUIRED_COLUMNS = ("date", "serial_number", "model", "failure") + FEATURE_COLUMNS
CSV_COLUMNS = ("date", "serial_number", "model", "capacity_bytes", "failure") + FEATURE_COLUMNS

CACHE_MAGIC = "#smartrul-history"
CACHE_VERSION = 1

MIN_VALID_DAYS = 31


class FormatError(ValueError):
    """Input file does not follow the drive-stats CSV layout."""


class InsufficientHistoryError(ValueError):
    """A device has too few usable days for the requested operation."""

    def __init__(self, serial: str, days: int, needed: int, what: str = "valid days"):
        self.serial = serial
        self.days = days
        self.needed = needed
        super().__init__(f"device {serial}: {days} {what}, need {needed}")


@dataclass(frozen=True)
class SmartRecord:
    """One device-day snapshot. ``None`` in ``features`` marks an absent cell."""

    date: date
    serial: str
    model: str
    capacity_bytes: int | None
    failed: bool
    features: tuple[float | None, ...]

    @property
    def complete(self) -> bool:
        return all(v is not None for v in self.features)


@dataclass
class IngestSummary:
    rows_read: int = 0
    rows_skipped: int = 0
    rows_filtered: int = 0
    duplicates: int = 0
    after_failure_dropped: int = 0
    devices: int = 0
    failures: int = 0
    files: int = 0

    def merge(self, other: "IngestSummary") -> None:
        for name in vars(self):
            setattr(self, name, getattr(self, name) + getattr(other, name))

    def to_text(self) -> str:
        return "\n".join(f"{name} {value}" for name, value in vars(self).items()) + "\n"


@dataclass(frozen=True)
class DeviceHistory:
    serial: str
    model: str
    days: tuple[SmartRecord, ...]
    failure_date: date | None = None

    def __post_init__(self):
        for a, b in zip(self.days, self.days[1:]):
            if not a.date < b.date:
                raise ValueError(f"{self.serial}: days not strictly ascending at {b.date}")
        if self.failure_date is not None:
            if not self.days or self.days[-1].date != self.failure_date or not self.days[-1].failed:
                raise ValueError(f"{self.serial}: failure_date must be the last, failed record")

    @property
    def first_day(self) -> date:
        return self.days[0].date

    @property
    def last_day(self) -> date:
        return self.days[-1].date

    @cached_property
    def ordinals(self) -> np.ndarray:
        return np.array([r.date.toordinal() for r in self.days], dtype=np.int64)

    @cached_property
    def values(self) -> np.ndarray:
        """days x features float array, NaN where a cell was absent."""
        return np.array(
            [[np.nan if v is None else v for v in r.features] for r in self.days],
            dtype=np.float64,
        ).reshape(len(self.days), -1)

    def truncated(self, last: date) -> "DeviceHistory":
        """History as it was known at the end of ``last``."""
        kept = tuple(r for r in self.days if r.date <= last)
        failure = self.failure_date if self.failure_date is not None and self.failure_date <= last else None
        return DeviceHistory(self.serial, self.model, kept, failure)


@dataclass(frozen=True)
class FeatureMatrix:
    """151 x f block of raw values, oldest row first, ending at ``anchor``."""

    serial: str
    anchor: date
    rows: np.ndarray
    row_valid: np.ndarray = field(repr=False)

    @property
    def dates(self) -> list[date]:
        n = len(self.rows)
        return [self.anchor - timedelta(days=n - 1 - i) for i in range(n)]


def _parse_float(text: str | None) -> float | None:
    if text is None or text.strip() == "":
        return None
    try:
        return float(text)
    except ValueError:
        return None


def parse_day_file(
    stream: TextIO,
    model_filter: str | None = None,
    summary: IngestSummary | None = None,
) -> list[SmartRecord]:
    """Parse one drive-stats day file; columns are resolved by header name."""
    if summary is None:
        summary = IngestSummary()
    reader = csv.DictReader(stream)
    if reader.fieldnames is None:
        raise FormatError("empty file")
    header = [h.strip() for h in reader.fieldnames]
    reader.fieldnames = header
    for name in REQUIRED_COLUMNS:
        if name not in header:
            raise FormatError(f"missing column {name}")

    records = []
    for row in reader:
        summary.rows_read += 1
        serial = (row.get("serial_number") or "").strip()
        try:
            day = date.fromisoformat((row.get("date") or "").strip())
        except ValueError:
            day = None
        if not serial or day is None:
            summary.rows_skipped += 1
            continue
        model = (row.get("model") or "").strip()
        if model_filter is not None and model != model_filter:
            summary.rows_filtered += 1
            continue
        capacity = _parse_float(row.get("capacity_bytes"))
        records.append(
            SmartRecord(
                date=day,
                serial=serial,
                model=model,
                capacity_bytes=None if capacity is None else int(capacity),
                failed=(row.get("failure") or "0").strip() in ("1", "1.0", "true", "True"),
                features=tuple(_parse_float(row.get(c)) for c in FEATURE_COLUMNS),
            )
        )
    summary.files += 1
    return records


def build_histories(
    records: Iterable[SmartRecord],
    summary: IngestSummary | None = None,
) -> dict[str, DeviceHistory]:
    """Group records by serial, sorted by date; the last-seen duplicate wins."""
    if summary is None:
        summary = IngestSummary()
    by_serial: dict[str, dict[date, SmartRecord]] = {}
    for rec in records:
        days = by_serial.setdefault(rec.serial, {})
        if rec.date in days:
            summary.duplicates += 1
        days[rec.date] = rec

    histories = {}
    for serial in sorted(by_serial):
        ordered = sorted(by_serial[serial].values(), key=lambda r: r.date)
        failure = None
        for i, rec in enumerate(ordered):
            if rec.failed:
                dropped = len(ordered) - i - 1
                if dropped:
                    summary.after_failure_dropped += dropped
                    log.warning("%s: %d records after failure dropped", serial, dropped)
                ordered = ordered[: i + 1]
                failure = rec.date
                break
        histories[serial] = DeviceHistory(serial, ordered[-1].model, tuple(ordered), failure)
    summary.devices = len(histories)
    summary.failures = sum(h.failure_date is not None for h in histories.values())
    return histories


def extract_matrix(
    history: DeviceHistory,
    anchor: date,
    n_days: int = MATRIX_DAYS,
    min_valid: int = MIN_VALID_DAYS,
    carry_to_anchor: bool = False,
) -> FeatureMatrix:
    """Raw matrix for ``anchor - n_days + 1 .. anchor`` with carry-forward gap filling.

    A row is valid when the device reported that day with every feature
    present. Gaps repeat the previous day's values; days before the first
    usable record repeat that first record. Both are flagged invalid.
    ``carry_to_anchor`` lets the anchor fall after the last record (a device
    that skipped today's report), filling the tail the same way.
    """
    if not history.days or (anchor > history.last_day and not carry_to_anchor):
        raise ValueError(f"{history.serial}: anchor {anchor} outside recorded days")
    end = anchor.toordinal()
    start = end - n_days + 1
    ords = history.ordinals
    vals = history.values
    usable = ~np.isnan(vals).any(axis=1)

    in_range = (ords >= start) & (ords <= end) & usable
    n_valid = int(in_range.sum())
    if n_valid < min_valid:
        raise InsufficientHistoryError(history.serial, n_valid, min_valid)

    n_feat = vals.shape[1]
    rows = np.empty((n_days, n_feat))
    row_valid = np.zeros(n_days, dtype=bool)
    idx_of = {int(o): i for i, o in enumerate(ords) if usable[i]}

    before = np.nonzero(usable & (ords < start))[0]
    prev = vals[before[-1]] if len(before) else None
    first_valid_in_range = None
    for k in range(n_days):
        i = idx_of.get(start + k)
        if i is not None:
            rows[k] = vals[i]
            row_valid[k] = True
            prev = vals[i]
            if first_valid_in_range is None:
                first_valid_in_range = k
        elif prev is not None:
            rows[k] = prev
    if first_valid_in_range is not None and len(before) == 0:
        rows[:first_valid_in_range] = rows[first_valid_in_range]
    return FeatureMatrix(history.serial, anchor, rows, row_valid)


def load_day_files(
    paths: Iterable[str | Path],
    model_filter: str | None = None,
    summary: IngestSummary | None = None,
) -> dict[str, DeviceHistory]:
    if summary is None:
        summary = IngestSummary()
    records: list[SmartRecord] = []
    for path in sorted(Path(p) for p in paths):
        with open(path, newline="") as fh:
            try:
                records.extend(parse_day_file(fh, model_filter, summary))
            except FormatError as exc:
                raise FormatError(f"{path}: {exc}") from None
    return build_histories(records, summary)


def load_directory(
    directory: str | Path,
    model_filter: str | None = None,
    summary: IngestSummary | None = None,
) -> dict[str, DeviceHistory]:
    # truth.csv sits beside synthetic day files and is not a report
    paths = sorted(p for p in Path(directory).glob("*.csv") if p.name != "truth.csv")
    if not paths:
        raise FormatError(f"no .csv day files in {directory}")
    return load_day_files(paths, model_filter, summary)


def _fmt(v) -> str:
    if v is None:
        return ""
    return repr(float(v)) if isinstance(v, float) else str(v)


def record_row(rec: SmartRecord) -> list[str]:
    return [
        rec.date.isoformat(),
        rec.serial,
        rec.model,
        _fmt(rec.capacity_bytes),
        "1" if rec.failed else "0",
        *(_fmt(v) for v in rec.features),
    ]


def write_records(records: Iterable[SmartRecord], stream: TextIO) -> None:
    """Write records in drive-stats column layout (raw columns only)."""
    writer = csv.writer(stream, lineterminator="\n")
    writer.writerow(CSV_COLUMNS)
    for rec in records:
        writer.writerow(record_row(rec))


def histories_to_csv(histories: Mapping[str, DeviceHistory]) -> str:
    buf = io.StringIO()
    write_records((r for s in sorted(histories) for r in histories[s].days), buf)
    return buf.getvalue()


def save_cache(histories: Mapping[str, DeviceHistory], path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        fh.write(f"{CACHE_MAGIC} v{CACHE_VERSION}\n")
        fh.write(histories_to_csv(histories))


def load_cache(path: str | Path) -> dict[str, DeviceHistory]:
    with open(path, newline="") as fh:
        first = fh.readline().strip()
        if first != f"{CACHE_MAGIC} v{CACHE_VERSION}":
            raise FormatError(f"{path}: not a v{CACHE_VERSION} history cache")
        return build_histories(parse_day_file(fh))


def model_counts(histories: Mapping[str, DeviceHistory]) -> Counter:
    return Counter(h.model for h in histories.values())
