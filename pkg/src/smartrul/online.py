"""Replay "today is t_c" predictions over device histories.

The model only ever sees a history truncated at ``t_c``; the actual RUL is
looked up afterwards for scoring and never reaches normalization.
"""

from __future__ import annotations

import csv
import time
from dataclasses import dataclass
from datetime import date, timedelta
from typing import Iterable, Mapping, Sequence, TextIO

import numpy as np

from .ingest import DeviceHistory, InsufficientHistoryError, extract_matrix
from .lstm import LstmModel, Mode, forward
from .normalize import HISTORY_DAYS, Strategy, historical_stats, normalize_online

PREDICTION_COLUMNS = ("serial", "t_c", "strategy", "rul_hat", "actual_rul", "exceedance", "latency")


@dataclass(frozen=True)
class Prediction:
    serial: str
    t_c: date
    strategy: Strategy
    rul_hat: float
    actual_rul: int | None = None
    exceedance: tuple[bool, ...] = ()
    latency: float = 0.0


@dataclass(frozen=True)
class Skip:
    serial: str
    t_c: date | None
    reason: str


@dataclass(frozen=True)
class AsOf:
    """Every device predicted on the same calendar day."""

    day: date

    def days_for(self, history: DeviceHistory, failure: date | None) -> list[date | None]:
        return [self.day]


@dataclass(frozen=True)
class Offsets:
    """Per device, ``t_c = failure_day - offset`` for each offset (needs known failures)."""

    offsets: tuple[int, ...]

    def __post_init__(self):
        if not self.offsets or min(self.offsets) < 1:
            raise ValueError("offsets must be positive day counts")

    def days_for(self, history: DeviceHistory, failure: date | None) -> list[date | None]:
        if failure is None:
            return [None] * len(self.offsets)
        return [failure - timedelta(days=k) for k in self.offsets]


@dataclass
class FleetResult:
    predictions: list[Prediction]
    skipped: list[Skip]
    n_devices: int
    n_slots: int

    def mae(self, strategy: Strategy | None = None) -> float | None:
        errs = [abs(p.rul_hat - p.actual_rul) for p in self.predictions
                if p.actual_rul is not None and (strategy is None or p.strategy is strategy)]
        return float(np.mean(errs)) if errs else None

    def report(self) -> str:
        lines = [
            f"devices      {self.n_devices}",
            f"slots        {self.n_slots}",
            f"predictions  {len(self.predictions)}",
            f"skipped      {len(self.skipped)}",
        ]
        for s in sorted({p.strategy for p in self.predictions}, key=lambda s: s.value):
            mae = self.mae(s)
            lines.append(f"mae {s.value:<14} {'n/a' if mae is None else f'{mae:.3f}'}")
        return "\n".join(lines) + "\n"


def predict_at(
    model: LstmModel,
    history: DeviceHistory,
    t_c: date,
    strategy: Strategy,
    quantile: float = 0.75,
    actual_rul: int | None = None,
    window_days: int = HISTORY_DAYS,
) -> Prediction:
    """One online RUL estimate from the data known at the end of ``t_c``.

    The normalized window is the most recent ``model.ts`` rows ending at
    ``t_c``. Raises :class:`InsufficientHistoryError` when the device has
    not reported for ``window_days`` days yet, and ``ValueError`` when
    ``t_c`` is on or after a known failure.
    """
    t0 = time.perf_counter()
    if history.failure_date is not None and t_c >= history.failure_date:
        raise ValueError(f"{history.serial}: t_c {t_c} is not before failure {history.failure_date}")
    covered = (t_c - history.first_day).days + 1
    if covered < window_days:
        raise InsufficientHistoryError(history.serial, max(covered, 0), window_days, "days of lookback")
    seen = history.truncated(t_c)
    if not seen.days:
        raise InsufficientHistoryError(history.serial, 0, window_days, "days of lookback")
    stats = historical_stats(seen, t_c, window_days=window_days, quantile=quantile)
    norm = normalize_online(extract_matrix(seen, t_c, carry_to_anchor=True), stats, strategy)
    window = norm.rows[-model.ts:]
    rul, _ = forward(model, window, Mode.INFER)
    return Prediction(
        serial=history.serial,
        t_c=t_c,
        strategy=strategy,
        rul_hat=float(rul),
        actual_rul=actual_rul,
        exceedance=tuple(bool(v) for v in (window > 1.0).any(axis=0)),
        latency=time.perf_counter() - t0,
    )


def _actual(history: DeviceHistory, failure: date | None, t_c: date) -> int | None:
    if failure is None:
        failure = history.failure_date
    return None if failure is None else (failure - t_c).days


def rolling_predict(
    model: LstmModel,
    history: DeviceHistory,
    t_start: date,
    t_end: date,
    strategy: Strategy,
    quantile: float = 0.75,
    failure: date | None = None,
) -> FleetResult:
    """One prediction per day in ``[t_start, t_end]``, stopping the day before a known failure."""
    if t_end < t_start:
        raise ValueError("t_end is before t_start")
    known = failure or history.failure_date
    last = t_end if known is None else min(t_end, known - timedelta(days=1))
    preds, skipped = [], []
    day = t_start
    while day <= last:
        try:
            preds.append(predict_at(model, history, day, strategy, quantile, _actual(history, failure, day)))
        except (InsufficientHistoryError, ValueError) as exc:
            skipped.append(Skip(history.serial, day, str(exc)))
        day += timedelta(days=1)
    if not preds:
        raise ValueError(f"{history.serial}: no usable days in {t_start}..{t_end}")
    return FleetResult(preds, skipped, 1, (last - t_start).days + 1)


def fleet_simulate(
    model: LstmModel,
    histories: Mapping[str, DeviceHistory] | Iterable[DeviceHistory],
    policy: AsOf | Offsets,
    strategies: Strategy | Sequence[Strategy] = Strategy.STRATEGY2_Q75,
    truth: Mapping[str, date] | None = None,
    quantile: float = 0.75,
) -> FleetResult:
    """Predict every device at the policy's days, in serial order.

    ``truth`` supplies failure days the histories may not show (for devices
    still running at the end of the data); it is used only to fill in
    ``actual_rul``. A device that cannot be predicted at a slot is recorded
    in ``skipped`` with the reason, so predictions + skips = devices x slots
    x strategies.
    """
    if isinstance(histories, Mapping):
        histories = histories.values()
    fleet = sorted(histories, key=lambda h: h.serial)
    if not fleet:
        raise ValueError("empty fleet")
    if isinstance(strategies, Strategy):
        strategies = [strategies]
    preds: list[Prediction] = []
    skipped: list[Skip] = []
    slots = 0
    for h in fleet:
        failure = truth.get(h.serial) if truth else None
        known = failure or h.failure_date
        for t_c in policy.days_for(h, known):
            for strategy in strategies:
                slots += 1
                if t_c is None:
                    skipped.append(Skip(h.serial, None, "failure day unknown"))
                    continue
                if known is not None and t_c >= known:
                    skipped.append(Skip(h.serial, t_c, f"device failed on {known}"))
                    continue
                if h.last_day < t_c:
                    skipped.append(Skip(h.serial, t_c, "no reports up to t_c"))
                    continue
                try:
                    preds.append(predict_at(model, h, t_c, strategy, quantile, _actual(h, failure, t_c)))
                except (InsufficientHistoryError, ValueError) as exc:
                    skipped.append(Skip(h.serial, t_c, str(exc)))
    return FleetResult(preds, skipped, len(fleet), slots)


def write_predictions(preds: Iterable[Prediction], stream: TextIO, latency: bool = True) -> None:
    """Predictions CSV; ``latency=False`` blanks the timing column for reproducible files."""
    w = csv.writer(stream, lineterminator="\n")
    w.writerow(PREDICTION_COLUMNS)
    for p in preds:
        w.writerow([
            p.serial,
            p.t_c.isoformat(),
            p.strategy.value,
            repr(p.rul_hat),
            "" if p.actual_rul is None else p.actual_rul,
            "".join("1" if e else "0" for e in p.exceedance),
            f"{p.latency:.6f}" if latency else "",
        ])


def read_predictions(stream: TextIO) -> list[Prediction]:
    reader = csv.DictReader(stream)
    missing = [c for c in PREDICTION_COLUMNS if c not in (reader.fieldnames or ())]
    if missing:
        raise ValueError(f"predictions file lacks columns {missing}")
    out = []
    for row in reader:
        out.append(
            Prediction(
                serial=row["serial"],
                t_c=date.fromisoformat(row["t_c"]),
                strategy=Strategy.parse(row["strategy"]),
                rul_hat=float(row["rul_hat"]),
                actual_rul=int(row["actual_rul"]) if row["actual_rul"].strip() else None,
                exceedance=tuple(c == "1" for c in row["exceedance"].strip()),
                latency=float(row["latency"]) if row["latency"].strip() else 0.0,
            )
        )
    return out
