"""The end-to-end synthetic protocol: generate, train, simulate, score, transfer.

One fleet is split in time. Devices that failed before the evaluation start
``d0`` train the model; every device still running on ``d0 .. d0+n_days-1``
is then scored online, so no training device is ever evaluated and no
evaluation device contributes a training window. A second fleet with
shifted scale multipliers and another drive model string checks transfer.
"""

from __future__ import annotations

import io
import logging
import time
from dataclasses import dataclass, field
from datetime import date, timedelta
from pathlib import Path

import numpy as np

from .evaluate import (
    DayMetrics,
    TransferReport,
    consecutive_days,
    mae_in_range,
    prf_over_days,
    summarize_days,
    summary_text,
    transfer_eval,
    write_metrics,
)
from .lstm import LstmModel, dumps_model
from .normalize import Strategy
from .online import Prediction, write_predictions
from .synth import Fleet, FleetConfig, generate_fleet
from .trainer import TrainConfig, TrainReport, train
from .windows import split_train_val, training_windows

log = logging.getLogger(__name__)

STRATEGIES = (Strategy.STRATEGY2_Q75, Strategy.STRATEGY1_MAX)


@dataclass
class ProtocolConfig:
    fleet: FleetConfig = field(default_factory=FleetConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    eval_offset_days: int = 330
    n_days: int = 7
    horizon: int = 10
    transfer_scale: tuple[float, float] = (1.0, 30.0)
    transfer_drive_model: str = "ST8000DM002"

    def __post_init__(self):
        if not 0 < self.eval_offset_days < self.fleet.horizon_days:
            raise ValueError("evaluation must start inside the fleet horizon")
        if self.n_days <= 0 or self.horizon < 0:
            raise ValueError("n_days must be positive and horizon non-negative")

    @property
    def eval_start(self) -> date:
        return self.fleet.start + timedelta(days=self.eval_offset_days)

    def transfer_fleet(self) -> FleetConfig:
        lo, hi = self.transfer_scale
        return self.fleet.with_scale(
            lo, hi,
            model=self.transfer_drive_model,
            serial_prefix=self.fleet.serial_prefix + "B",
            seed=self.fleet.seed + 1,
        )


@dataclass
class ProtocolResult:
    config: ProtocolConfig
    fleet: Fleet
    n_train_devices: int
    model: LstmModel
    report: TrainReport
    days: dict[Strategy, list[DayMetrics]]
    predictions: dict[Strategy, list[Prediction]]
    transfer: TransferReport
    latencies: np.ndarray = field(repr=False)
    seconds: dict[str, float] = field(default_factory=dict)

    def mean_metric(self, strategy: Strategy, name: str) -> float | None:
        return summarize_days(self.days[strategy]).mean[name]

    def mae(self, strategy: Strategy, lo: float, hi: float) -> float | None:
        return mae_in_range(self.predictions[strategy], lo, hi)

    def summary(self) -> str:
        lines = [f"fleet seed        {self.config.fleet.seed}",
                 f"training devices  {self.n_train_devices}",
                 f"best epoch        {self.report.best_epoch} of {len(self.report.epochs)}",
                 f"evaluation days   {self.config.eval_start} + {self.config.n_days}"]
        for s in STRATEGIES:
            rows = self.days[s]
            lines.append(f"\n[{s.value}] pool {rows[0].pool}..{rows[-1].pool}")
            lines.append(summary_text(rows).rstrip())
            for lo, hi in ((0, 10), (50, 100), (0, 30)):
                m = self.mae(s, lo, hi)
                lines.append(f"mae rul {lo}-{hi:<7} {'n/a' if m is None else f'{m:.4f}'}")
        lines.append("\n[transfer]")
        lines.append(self.transfer.text().rstrip())
        return "\n".join(lines) + "\n"


def split_fleet(fleet: Fleet, eval_start: date) -> dict:
    """Histories of devices that failed before ``eval_start``."""
    return {s: h for s, h in fleet.histories.items() if h.failure_date is not None and h.failure_date < eval_start}


def run_protocol(config: ProtocolConfig, out_dir: str | Path | None = None) -> ProtocolResult:
    """Run everything under the configured seeds; optionally write the artifacts.

    Files written to ``out_dir`` are byte-stable across reruns: timing
    columns are left out except in ``timing.txt``.
    """
    clock = time.perf_counter()
    seconds = {}

    def lap(name):
        nonlocal clock
        now = time.perf_counter()
        seconds[name] = now - clock
        clock = now

    fleet = generate_fleet(config.fleet)
    train_h = split_fleet(fleet, config.eval_start)
    if len(train_h) < 2:
        raise ValueError(f"only {len(train_h)} devices fail before {config.eval_start}")
    windows, _ = training_windows(train_h, ts=config.train.ts)
    split = split_train_val(windows, config.train.val_fraction, config.train.seed)
    log.info("training on %d devices, %d windows", len(train_h), len(windows))
    model, report = train(config.train, split)
    lap("train")

    days = consecutive_days(config.eval_start, config.n_days)
    per_day: dict[Strategy, list[DayMetrics]] = {}
    preds: dict[Strategy, list[Prediction]] = {}
    for s in STRATEGIES:
        preds[s] = []
        per_day[s] = prf_over_days(model, fleet.histories, days, s, config.horizon, predictions=preds[s])
    lap("simulate")

    target = generate_fleet(config.transfer_fleet())
    transfer = transfer_eval(model, target.histories, days, (Strategy.STRATEGY2_Q75,),
                             source_model=config.fleet.model, horizon=config.horizon)
    lap("transfer")
    latencies = np.array([p.latency for s in STRATEGIES for p in preds[s]])
    result = ProtocolResult(config, fleet, len(train_h), model, report, per_day, preds, transfer, latencies, seconds)
    if out_dir is not None:
        write_outputs(result, out_dir)
    return result


def write_outputs(result: ProtocolResult, out_dir: str | Path) -> list[Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    files = {"model.txt": dumps_model(result.model), "summary.txt": result.summary()}
    for s in STRATEGIES:
        buf = io.StringIO()
        write_metrics(result.days[s], buf)
        files[f"metrics_{s.value}.csv"] = buf.getvalue()
        buf = io.StringIO()
        write_predictions(result.predictions[s], buf, latency=False)
        files[f"predictions_{s.value}.csv"] = buf.getvalue()
    buf = io.StringIO()
    write_predictions(result.transfer.predictions, buf, latency=False)
    files["transfer_predictions.csv"] = buf.getvalue()
    files["transfer.txt"] = result.transfer.text()
    lat = result.latencies
    files["timing.txt"] = "".join(f"{name + ' seconds':<21}{v:.1f}\n" for name, v in result.seconds.items()) + (
        f"predictions          {lat.size}\n"
        f"latency median s     {np.median(lat):.6f}\n"
        f"latency max s        {lat.max():.6f}\n"
    )
    paths = []
    for name, text in files.items():
        path = out / name
        path.write_text(text)
        paths.append(path)
    return paths


def reproducible_files(out_dir: str | Path) -> dict[str, bytes]:
    """Every output except ``timing.txt``, keyed by file name."""
    return {p.name: p.read_bytes() for p in sorted(Path(out_dir).iterdir()) if p.name != "timing.txt"}

