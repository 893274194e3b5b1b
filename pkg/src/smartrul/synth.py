"""Synthetic fleets with known failure days.

Each feature of each device follows::

    base + drift * t + scale * amplitude * ((t - t_onset)+ / onset)^p + noise

where ``t_onset = T_f - onset`` and ``scale`` is drawn once per device, so
devices share a degradation shape but fail at very different absolute
levels. Output uses the drive-stats CSV layout and goes through the same
parser as real data.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace
from datetime import date, timedelta
from pathlib import Path
from typing import Mapping

import numpy as np

from . import SMART_IDS
from .ingest import CSV_COLUMNS, DeviceHistory, SmartRecord, record_row

TRUTH_COLUMNS = ("serial_number", "model", "failure_date")


@dataclass(frozen=True)
class FeatureSpec:
    """Generative ranges for one SMART column; pairs are uniform (lo, hi)."""

    base: tuple[float, float] = (0.0, 400.0)
    drift: tuple[float, float] = (0.0, 0.0)
    onset: tuple[float, float] = (20.0, 28.0)
    exponent: tuple[float, float] = (1.5, 3.0)
    noise: float = 0.0
    amplitude: float = 150.0

    def __post_init__(self):
        for name in ("base", "drift", "onset", "exponent"):
            lo, hi = getattr(self, name)
            if not lo <= hi:
                raise ValueError(f"{name} range is empty: {lo} > {hi}")
        if self.onset[0] <= 0:
            raise ValueError("onset must be positive")
        if self.noise < 0 or self.amplitude < 0:
            raise ValueError("noise and amplitude must be non-negative")


@dataclass(frozen=True)
class FleetConfig:
    n_devices: int = 300
    horizon_days: int = 450
    features: tuple[FeatureSpec, ...] = field(default_factory=lambda: (FeatureSpec(),) * len(SMART_IDS))
    failure_days: tuple[int, int] = (250, 449)
    scale: tuple[float, float] = (0.1, 10.0)
    missing_rate: float = 0.0
    model: str = "ST4000DM000"
    capacity_bytes: int = 4_000_787_030_016
    start: date = date(2017, 1, 1)
    serial_prefix: str = "SYN"
    decimals: int = 3
    seed: int = 0

    def __post_init__(self):
        if self.n_devices <= 0:
            raise ValueError("n_devices must be positive")
        if self.horizon_days < 300:
            raise ValueError("horizon_days must be at least 300")
        if len(self.features) != len(SMART_IDS):
            raise ValueError(f"need {len(SMART_IDS)} feature specs, got {len(self.features)}")
        lo, hi = self.failure_days
        if not 0 < lo <= hi:
            raise ValueError("failure_days range is empty")
        if hi >= self.horizon_days:
            raise ValueError("failure days must fall inside the horizon")
        if not 0 < self.scale[0] <= self.scale[1]:
            raise ValueError("scale range must be positive and nonempty")
        for spec in self.features:
            if spec.onset[1] >= self.horizon_days:
                raise ValueError("onset must be shorter than the horizon")
        if not 0 <= self.missing_rate < 1:
            raise ValueError("missing_rate must be in [0, 1)")

    def with_scale(self, lo: float, hi: float, **changes) -> "FleetConfig":
        return replace(self, scale=(lo, hi), **changes)


@dataclass
class Fleet:
    config: FleetConfig
    histories: dict[str, DeviceHistory]
    truth: dict[str, date]

    def failure_values(self) -> np.ndarray:
        """devices x features matrix of readings on each device's failure day."""
        return np.array([self.histories[s].values[-1] for s in sorted(self.histories)])


def _device(config: FleetConfig, index: int, rng: np.random.Generator) -> tuple[DeviceHistory, date]:
    lo, hi = config.failure_days
    t_fail = int(rng.integers(lo, hi + 1))
    scale = math.exp(rng.uniform(math.log(config.scale[0]), math.log(config.scale[1])))
    t = np.arange(t_fail + 1, dtype=np.float64)
    cols = []
    for spec in config.features:
        base = rng.uniform(*spec.base)
        drift = rng.uniform(*spec.drift)
        onset = rng.uniform(*spec.onset)
        power = rng.uniform(*spec.exponent)
        ramp = np.clip(t - (t_fail - onset), 0.0, None) / onset
        x = base + drift * t + scale * spec.amplitude * ramp**power
        if spec.noise:
            x = x + rng.normal(0.0, spec.noise * spec.amplitude, size=t.shape)
        cols.append(np.round(x, config.decimals))
    values = np.column_stack(cols)

    keep = np.ones(len(t), dtype=bool)
    if config.missing_rate:
        keep = rng.random(len(t)) >= config.missing_rate
        keep[-1] = True  # the failure report is never lost
    serial = f"{config.serial_prefix}{index:06d}"
    days = []
    for k in np.nonzero(keep)[0]:
        days.append(
            SmartRecord(
                date=config.start + timedelta(days=int(k)),
                serial=serial,
                model=config.model,
                capacity_bytes=config.capacity_bytes,
                failed=bool(k == t_fail),
                features=tuple(float(v) for v in values[k]),
            )
        )
    failure = config.start + timedelta(days=t_fail)
    return DeviceHistory(serial, config.model, tuple(days), failure), failure


def generate_fleet(config: FleetConfig) -> Fleet:
    """Deterministic under ``config.seed``; each device has its own spawned stream."""
    children = np.random.SeedSequence(config.seed).spawn(config.n_devices)
    histories: dict[str, DeviceHistory] = {}
    truth: dict[str, date] = {}
    for i, child in enumerate(children):
        history, failure = _device(config, i, np.random.default_rng(child))
        histories[history.serial] = history
        truth[history.serial] = failure
    return Fleet(config, histories, truth)


def coefficient_of_variation(values: np.ndarray) -> np.ndarray:
    """Per-column population std / mean."""
    values = np.asarray(values, dtype=np.float64)
    return values.std(axis=0) / values.mean(axis=0)


def write_fleet(fleet: Fleet, out_dir: str | Path) -> list[Path]:
    """One ``YYYY-MM-DD.csv`` per calendar day plus ``truth.csv``; returns the day files."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    by_day: dict[date, list[SmartRecord]] = {}
    for serial in sorted(fleet.histories):
        for rec in fleet.histories[serial].days:
            by_day.setdefault(rec.date, []).append(rec)
    paths = []
    for day in sorted(by_day):
        path = out / f"{day.isoformat()}.csv"
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(CSV_COLUMNS)
            for rec in by_day[day]:
                w.writerow(record_row(rec))
        paths.append(path)
    write_truth(fleet.truth, {s: h.model for s, h in fleet.histories.items()}, out / "truth.csv")
    return paths


def write_truth(truth: Mapping[str, date], models: Mapping[str, str], path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(TRUTH_COLUMNS)
        for serial in sorted(truth):
            w.writerow([serial, models.get(serial, ""), truth[serial].isoformat()])


def read_truth(path: str | Path) -> dict[str, date]:
    with open(path, newline="") as fh:
        return {row["serial_number"]: date.fromisoformat(row["failure_date"]) for row in csv.DictReader(fh)}
