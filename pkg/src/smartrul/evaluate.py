"""Scoring: RUL error, the failure-horizon classification, per-day precision /
recall / F1, revenue loss and cross-model transfer."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from datetime import date, timedelta
from pathlib import Path
from typing import Iterable, Mapping, NamedTuple, Sequence, TextIO

import numpy as np

from .ingest import DeviceHistory
from .lstm import LstmModel
from .normalize import Strategy
from .online import AsOf, Offsets, Prediction, fleet_simulate

HORIZON_DAYS = 10

# published figures on the full real-drive corpus, printed for comparison only
REFERENCE = {"precision": 0.8435, "recall": 0.72, "f1": 0.77}


class ErrorSummary(NamedTuple):
    mae: float
    rmse: float
    bias: float
    n: int


def rul_errors(preds: Iterable[Prediction]) -> ErrorSummary:
    """MAE, RMSE and mean signed error (hat - actual)."""
    preds = list(preds)
    if not preds:
        raise ValueError("no predictions to score")
    if any(p.actual_rul is None for p in preds):
        raise ValueError("every prediction needs an actual_rul")
    d = np.array([p.rul_hat - p.actual_rul for p in preds], dtype=np.float64)
    return ErrorSummary(float(np.abs(d).mean()), float(np.sqrt((d * d).mean())), float(d.mean()), len(d))


class Metric(NamedTuple):
    value: float | None
    reason: str = ""

    @property
    def defined(self) -> bool:
        return self.value is not None


@dataclass(frozen=True)
class ThresholdOutcome:
    tp: int = 0
    fp: int = 0
    fn: int = 0
    tn: int = 0
    horizon_days: int = HORIZON_DAYS

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.fn + self.tn

    def precision(self) -> Metric:
        if self.tp + self.fp == 0:
            return Metric(None, "no predicted positives")
        return Metric(self.tp / (self.tp + self.fp))

    def recall(self) -> Metric:
        if self.tp + self.fn == 0:
            return Metric(None, "no actual positives")
        return Metric(self.tp / (self.tp + self.fn))

    def f1(self) -> Metric:
        p, r = self.precision(), self.recall()
        if not p.defined or not r.defined:
            return Metric(None, p.reason or r.reason)
        if p.value + r.value == 0:
            return Metric(None, "precision and recall are both zero")
        return Metric(2 * p.value * r.value / (p.value + r.value))

    def __add__(self, other: "ThresholdOutcome") -> "ThresholdOutcome":
        if self.horizon_days != other.horizon_days:
            raise ValueError("cannot add outcomes with different horizons")
        return ThresholdOutcome(self.tp + other.tp, self.fp + other.fp, self.fn + other.fn,
                                self.tn + other.tn, self.horizon_days)


def threshold_classify(preds: Iterable[Prediction], horizon: int = HORIZON_DAYS) -> ThresholdOutcome:
    """Positive means "fails within ``horizon`` days", inclusive on both sides."""
    tp = fp = fn = tn = 0
    for p in preds:
        if p.actual_rul is None:
            raise ValueError(f"{p.serial}: prediction has no actual_rul")
        said = p.rul_hat <= horizon
        real = p.actual_rul <= horizon
        if said and real:
            tp += 1
        elif said:
            fp += 1
        elif real:
            fn += 1
        else:
            tn += 1
    return ThresholdOutcome(tp, fp, fn, tn, horizon)


def revenue_loss(outcome: ThresholdOutcome, loss_fp: float, loss_fn: float) -> float:
    if loss_fp < 0 or loss_fn < 0:
        raise ValueError("loss weights must be non-negative")
    return loss_fp * outcome.fp + loss_fn * outcome.fn


@dataclass(frozen=True)
class DayMetrics:
    day: date
    outcome: ThresholdOutcome
    precision: Metric
    recall: Metric
    f1: Metric

    @classmethod
    def from_outcome(cls, day: date, outcome: ThresholdOutcome) -> "DayMetrics":
        return cls(day, outcome, outcome.precision(), outcome.recall(), outcome.f1())

    @property
    def pool(self) -> int:
        return self.outcome.total


METRIC_NAMES = ("precision", "recall", "f1")


@dataclass(frozen=True)
class DaySummary:
    """Averages over days where a metric is defined, and max - min spread."""

    mean: dict[str, float | None]
    dispersion: dict[str, float | None]
    n_days: dict[str, int]


def summarize_days(rows: Sequence[DayMetrics]) -> DaySummary:
    mean, spread, count = {}, {}, {}
    for name in METRIC_NAMES:
        vals = [getattr(r, name).value for r in rows if getattr(r, name).defined]
        count[name] = len(vals)
        mean[name] = float(np.mean(vals)) if vals else None
        spread[name] = float(max(vals) - min(vals)) if vals else None
    return DaySummary(mean, spread, count)


def consecutive_days(first: date, n: int = 7) -> list[date]:
    return [first + timedelta(days=k) for k in range(n)]


def prf_over_days(
    model: LstmModel,
    histories: Mapping[str, DeviceHistory],
    days: Sequence[date],
    strategy: Strategy = Strategy.STRATEGY2_Q75,
    horizon: int = HORIZON_DAYS,
    truth: Mapping[str, date] | None = None,
    quantile: float = 0.75,
    predictions: list[Prediction] | None = None,
) -> list[DayMetrics]:
    """Per-day fleet simulation and threshold metrics.

    Every device with enough history that is still running on a day enters
    that day's pool. Pass a list as ``predictions`` to collect the raw
    predictions as well.
    """
    if not days:
        raise ValueError("no days to evaluate")
    ordered = sorted(days)
    if any((b - a).days != 1 for a, b in zip(ordered, ordered[1:])):
        raise ValueError("days must be consecutive")
    rows = []
    for day in ordered:
        result = fleet_simulate(model, histories, AsOf(day), strategy, truth=truth, quantile=quantile)
        scored = [p for p in result.predictions if p.actual_rul is not None]
        if predictions is not None:
            predictions.extend(scored)
        rows.append(DayMetrics.from_outcome(day, threshold_classify(scored, horizon)))
    return rows


def _fmt_metric(m: Metric) -> str:
    return "" if m.value is None else repr(m.value)


METRICS_COLUMNS = ("day", "pool", "tp", "fp", "fn", "tn", "precision", "recall", "f1", "note")


def write_metrics(rows: Sequence[DayMetrics], stream: TextIO) -> None:
    """One row per day; undefined metrics are left blank with the reason in ``note``."""
    w = csv.writer(stream, lineterminator="\n")
    w.writerow(METRICS_COLUMNS)
    for r in rows:
        notes = sorted({m.reason for m in (r.precision, r.recall, r.f1) if m.reason})
        o = r.outcome
        w.writerow([r.day.isoformat(), r.pool, o.tp, o.fp, o.fn, o.tn,
                    _fmt_metric(r.precision), _fmt_metric(r.recall), _fmt_metric(r.f1), "; ".join(notes)])


def summary_text(rows: Sequence[DayMetrics], loss_fp: float = 1.0, loss_fn: float = 1.0) -> str:
    s = summarize_days(rows)
    total = ThresholdOutcome(horizon_days=rows[0].outcome.horizon_days) if rows else ThresholdOutcome()
    for r in rows:
        total = total + r.outcome
    lines = [f"days            {len(rows)}", f"horizon         {total.horizon_days}"]
    for name in METRIC_NAMES:
        mean, spread = s.mean[name], s.dispersion[name]
        if mean is None:
            lines.append(f"{name:<15} absent (no day defined)")
        else:
            lines.append(f"{name:<15} {mean:.4f}  spread {spread:.4f}  days {s.n_days[name]}"
                         f"  (real-data reference {REFERENCE[name]})")
    lines.append(f"counts          tp {total.tp} fp {total.fp} fn {total.fn} tn {total.tn}")
    lines.append(f"revenue loss    {revenue_loss(total, loss_fp, loss_fn):g} (fp x {loss_fp:g} + fn x {loss_fn:g})")
    return "\n".join(lines) + "\n"


def plot_days(rows: Sequence[DayMetrics], path: str | Path) -> None:
    """Precision / recall / F1 per day as an SVG line chart (needs matplotlib)."""
    import matplotlib

    matplotlib.use("svg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(6, 3.5))
    x = [r.day.isoformat() for r in rows]
    for name in METRIC_NAMES:
        y = [np.nan if getattr(r, name).value is None else getattr(r, name).value for r in rows]
        ax.plot(x, y, marker="o", label=name)
    ax.set_ylim(0, 1.05)
    ax.set_xlabel("day")
    ax.legend()
    ax.tick_params(axis="x", rotation=45)
    fig.tight_layout()
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)


# -- transfer ------------------------------------------------------------------

@dataclass
class StrategyResult:
    errors: ErrorSummary | None
    outcome: ThresholdOutcome
    n_skipped: int


@dataclass
class TransferReport:
    source_model: str
    target_model: str
    quantile: float
    results: dict[Strategy, StrategyResult] = field(default_factory=dict)
    predictions: list[Prediction] = field(default_factory=list, repr=False)

    def text(self) -> str:
        lines = [f"source model    {self.source_model}",
                 f"target model    {self.target_model}",
                 f"quantile        {self.quantile}"]
        for strategy, r in self.results.items():
            p, rc, f = r.outcome.precision(), r.outcome.recall(), r.outcome.f1()
            err = "n/a" if r.errors is None else f"mae {r.errors.mae:.3f} rmse {r.errors.rmse:.3f} bias {r.errors.bias:.3f}"
            lines.append(
                f"{strategy.value:<15} {err}  precision {_show(p)} recall {_show(rc)} f1 {_show(f)}"
                f"  skipped {r.n_skipped}"
            )
        return "\n".join(lines) + "\n"


def _show(m: Metric) -> str:
    return "absent" if m.value is None else f"{m.value:.4f}"


def transfer_eval(
    model: LstmModel,
    histories: Mapping[str, DeviceHistory],
    policy: AsOf | Offsets | Sequence[date],
    strategies: Sequence[Strategy] = (Strategy.STRATEGY1_MAX, Strategy.STRATEGY2_Q75),
    source_model: str = "",
    quantile: float | None = None,
    truth: Mapping[str, date] | None = None,
    horizon: int = HORIZON_DAYS,
) -> TransferReport:
    """Score a model on histories of one other drive model.

    ``policy`` may also be a list of calendar days, in which case each day
    is simulated and the outcomes pooled. ``quantile`` overrides the 0.75
    used by the second strategy.
    """
    models = {h.model for h in histories.values()}
    if len(models) != 1:
        raise ValueError(f"target histories must share one drive model, got {sorted(models)}")
    q = 0.75 if quantile is None else quantile
    policies = [AsOf(d) for d in policy] if isinstance(policy, (list, tuple)) else [policy]
    report = TransferReport(source_model, models.pop(), q)
    for strategy in strategies:
        preds, skipped = [], 0
        for pol in policies:
            res = fleet_simulate(model, histories, pol, strategy, truth=truth, quantile=q)
            preds.extend(p for p in res.predictions if p.actual_rul is not None)
            skipped += len(res.skipped)
        errors = rul_errors(preds) if preds else None
        report.results[strategy] = StrategyResult(errors, threshold_classify(preds, horizon), skipped)
        report.predictions.extend(preds)
    return report


def mae_in_range(preds: Iterable[Prediction], lo: float, hi: float) -> float | None:
    """MAE over predictions whose actual RUL lies in ``[lo, hi]``."""
    errs = [abs(p.rul_hat - p.actual_rul) for p in preds if p.actual_rul is not None and lo <= p.actual_rul <= hi]
    return float(np.mean(errs)) if errs else None
