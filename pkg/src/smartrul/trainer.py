"""Mini-batch training with Adam or SGD, early stopping and hyper-parameter sweeps."""

from __future__ import annotations

import csv
import dataclasses
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Mapping, Sequence, TextIO

import numpy as np

from . import TIME_STEPS
from .lstm import LstmModel, Mode, backward, forward, init_model, loss_grad, loss_mse
from .normalize import NormalizedMatrix
from .windows import DataSplit, make_windows, split_train_val, stack

log = logging.getLogger(__name__)


class TrainingError(RuntimeError):
    def __init__(self, epoch: int, message: str):
        self.epoch = epoch
        super().__init__(f"epoch {epoch}: {message}")


@dataclass
class TrainConfig:
    hidden_sizes: list[int] = field(default_factory=lambda: [100, 100])
    dropout: float = 0.2
    ts: int = TIME_STEPS
    batch_size: int = 64
    learning_rate: float = 1e-3
    max_epochs: int = 50
    patience: int = 5
    seed: int = 0
    optimizer: str = "adam"
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    val_fraction: float = 0.05

    def __post_init__(self):
        self.hidden_sizes = [int(h) for h in self.hidden_sizes]
        if not self.hidden_sizes or min(self.hidden_sizes) <= 0:
            raise ValueError("hidden sizes must be positive")
        if not 0 <= self.dropout < 1:
            raise ValueError("dropout must be in [0, 1)")
        for name in ("ts", "batch_size", "max_epochs", "patience"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.optimizer not in ("adam", "sgd"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")

    @classmethod
    def from_mapping(cls, values: Mapping[str, str], base: "TrainConfig | None" = None) -> "TrainConfig":
        """Build from flat key=value strings; unknown keys raise ``KeyError``."""
        current = dataclasses.asdict(base or cls())
        types = {f.name: f.type for f in dataclasses.fields(cls)}
        for key, raw in values.items():
            if key not in types:
                raise KeyError(f"unknown training option {key!r}")
            if key == "hidden_sizes":
                current[key] = [int(v) for v in str(raw).replace(",", " ").split()]
            elif types[key] == "int":
                current[key] = int(raw)
            elif types[key] == "float":
                current[key] = float(raw)
            else:
                current[key] = str(raw)
        return cls(**current)


@dataclass(frozen=True)
class EpochRecord:
    epoch: int
    train_loss: float
    val_loss: float
    seconds: float


@dataclass
class TrainReport:
    epochs: list[EpochRecord]
    best_epoch: int
    model: LstmModel
    config: TrainConfig
    n_train: int = 0
    n_validation: int = 0

    @property
    def best_val_loss(self) -> float:
        return self.epochs[self.best_epoch - 1].val_loss

    def write_csv(self, stream: TextIO) -> None:
        w = csv.writer(stream, lineterminator="\n")
        w.writerow(["epoch", "train_loss", "val_loss", "seconds"])
        for e in self.epochs:
            w.writerow([e.epoch, repr(e.train_loss), repr(e.val_loss), f"{e.seconds:.3f}"])

    def summary(self) -> str:
        return (
            f"epochs run      {len(self.epochs)}\n"
            f"best epoch      {self.best_epoch}\n"
            f"best val loss   {self.best_val_loss:.4f} (rmse {np.sqrt(2 * self.best_val_loss):.2f} days)\n"
            f"train windows   {self.n_train}\n"
            f"val windows     {self.n_validation}\n"
            f"hidden sizes    {self.config.hidden_sizes}\n"
            f"dropout         {self.config.dropout}\n"
        )


class Adam:
    def __init__(self, lr: float, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}
        self.t = 0

    def step(self, model: LstmModel, grads: Mapping[str, np.ndarray]) -> None:
        self.t += 1
        c1 = 1 - self.beta1**self.t
        c2 = 1 - self.beta2**self.t
        for name, p in model.named_parameters():
            g = grads[name]
            if name not in self.m:
                self.m[name] = np.zeros_like(p)
                self.v[name] = np.zeros_like(p)
            m, v = self.m[name], self.v[name]
            m *= self.beta1
            m += (1 - self.beta1) * g
            v *= self.beta2
            v += (1 - self.beta2) * g * g
            p -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


class SGD:
    def __init__(self, lr: float):
        self.lr = lr

    def step(self, model: LstmModel, grads: Mapping[str, np.ndarray]) -> None:
        for name, p in model.named_parameters():
            p -= self.lr * grads[name]


def make_optimizer(config: TrainConfig):
    if config.optimizer == "adam":
        return Adam(config.learning_rate, config.beta1, config.beta2, config.eps)
    return SGD(config.learning_rate)


def evaluate_loss(model: LstmModel, x: np.ndarray, y: np.ndarray, batch: int = 512) -> float:
    """Mean half-squared error of unclamped inference outputs."""
    total = 0.0
    for s in range(0, len(x), batch):
        pred, _ = forward(model, x[s : s + batch], Mode.INFER, clamp=False)
        d = pred - y[s : s + batch]
        total += float(d @ d)
    return total / (2 * len(x))


def train_step(model: LstmModel, optimizer, xb: np.ndarray, yb: np.ndarray, rng: np.random.Generator) -> float:
    pred, cache = forward(model, xb, Mode.TRAIN, rng=rng)
    loss = loss_mse(pred, yb)
    optimizer.step(model, backward(model, cache, loss_grad(pred, yb)))
    return loss


def train(
    config: TrainConfig,
    split: DataSplit,
    progress: Callable[[EpochRecord], None] | None = None,
) -> tuple[LstmModel, TrainReport]:
    """Fit a fresh model; returns the parameters from the best validation epoch.

    Everything random (init, shuffles, dropout masks) derives from
    ``config.seed``, so identical inputs give bit-identical models.
    """
    if not split.train:
        raise ValueError("empty training set")
    if not split.validation:
        raise ValueError("empty validation set")
    x, y = stack(split.train)
    xv, yv = stack(split.validation)
    if x.shape[1] != config.ts:
        raise ValueError(f"windows have {x.shape[1]} steps, config says ts={config.ts}")

    model = init_model(
        input_size=x.shape[2],
        hidden_sizes=config.hidden_sizes,
        dropout=config.dropout,
        ts=config.ts,
        seed=config.seed,
    )
    # start the head at the mean label so early epochs fit shape, not offset
    model.head_b[0] = float(y.mean())
    rng = np.random.default_rng([config.seed, 1])
    opt = make_optimizer(config)

    records: list[EpochRecord] = []
    best = (np.inf, 0, model.copy())
    for epoch in range(1, config.max_epochs + 1):
        t0 = time.perf_counter()
        order = rng.permutation(len(x))
        total = 0.0
        for s in range(0, len(x), config.batch_size):
            idx = order[s : s + config.batch_size]
            total += train_step(model, opt, x[idx], y[idx], rng) * len(idx)
        train_loss = total / len(x)
        if not np.isfinite(train_loss):
            raise TrainingError(epoch, "training loss is not finite")
        val_loss = evaluate_loss(model, xv, yv)
        if not np.isfinite(val_loss):
            raise TrainingError(epoch, "validation loss is not finite")
        rec = EpochRecord(epoch, train_loss, val_loss, time.perf_counter() - t0)
        records.append(rec)
        log.info("epoch %d train %.3f val %.3f (%.1fs)", epoch, train_loss, val_loss, rec.seconds)
        if progress is not None:
            progress(rec)
        if val_loss < best[0]:
            best = (val_loss, epoch, model.copy())
        elif epoch - best[1] >= config.patience:
            break

    final = best[2]
    report = TrainReport(records, best[1], final, config, len(x), len(xv))
    return final, report


# -- sweeps -------------------------------------------------------------------

SWEEP_AXES = ("units", "dropout", "ts")


@dataclass(frozen=True)
class SweepRow:
    value: float
    train_loss: float
    val_loss: float
    seconds: float
    best_epoch: int
    error: str = ""


def _config_for(base: TrainConfig, axis: str, value) -> TrainConfig:
    if axis == "units":
        return dataclasses.replace(base, hidden_sizes=[int(value)] * len(base.hidden_sizes))
    if axis == "dropout":
        return dataclasses.replace(base, dropout=float(value))
    if axis == "ts":
        return dataclasses.replace(base, ts=int(value))
    raise ValueError(f"unknown sweep axis {axis!r}; expected one of {SWEEP_AXES}")


def sweep(
    base: TrainConfig,
    axis: str,
    values: Sequence,
    data: DataSplit | Sequence[NormalizedMatrix],
) -> list[SweepRow]:
    """Train one model per value along ``axis``.

    ``data`` is either a ready split or the training-normalized matrices;
    the ``ts`` axis needs matrices because the windows are rebuilt per value.
    A failing cell is recorded with its error and the sweep continues.
    """
    if not values:
        raise ValueError("no sweep values")
    if axis not in SWEEP_AXES:
        raise ValueError(f"unknown sweep axis {axis!r}; expected one of {SWEEP_AXES}")
    rows = []
    for value in values:
        t0 = time.perf_counter()
        try:
            config = _config_for(base, axis, value)
            if isinstance(data, DataSplit):
                if axis == "ts" and config.ts != base.ts:
                    raise ValueError("ts sweep needs normalized matrices, not a fixed split")
                split = data
            else:
                windows = [w for m in data for w in make_windows(m, ts=config.ts)]
                split = split_train_val(windows, config.val_fraction, config.seed)
            _, report = train(config, split)
            best = report.epochs[report.best_epoch - 1]
            rows.append(SweepRow(float(value), best.train_loss, best.val_loss,
                                 time.perf_counter() - t0, report.best_epoch))
        except Exception as exc:  # noqa: BLE001 - recorded per cell
            log.warning("sweep %s=%s failed: %s", axis, value, exc)
            rows.append(SweepRow(float(value), float("nan"), float("nan"),
                                 time.perf_counter() - t0, 0, f"{type(exc).__name__}: {exc}"))
    return rows


def write_sweep(rows: Sequence[SweepRow], axis: str, stream: TextIO) -> None:
    w = csv.writer(stream, lineterminator="\n")
    w.writerow([axis, "train_loss", "val_loss", "seconds", "best_epoch", "error"])
    for r in rows:
        w.writerow([r.value, repr(r.train_loss), repr(r.val_loss), f"{r.seconds:.3f}", r.best_epoch, r.error])


def plot_sweep(rows: Sequence[SweepRow], axis: str, path: str | Path) -> None:
    """Training and validation loss against the swept value as SVG (needs matplotlib)."""
    import matplotlib

    matplotlib.use("svg")
    import matplotlib.pyplot as plt

    ok = [r for r in rows if not r.error]
    fig, ax = plt.subplots(figsize=(5, 3.5))
    x = [r.value for r in ok]
    ax.plot(x, [r.train_loss for r in ok], marker="o", label="train")
    ax.plot(x, [r.val_loss for r in ok], marker="s", label="validation")
    ax.set_xlabel(axis)
    ax.set_ylabel("loss")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)


def read_config_file(path: str | Path) -> dict[str, str]:
    """Flat ``key = value`` file; ``#`` starts a comment."""
    values = {}
    for n, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"{path}:{n}: expected key=value")
        key, val = line.split("=", 1)
        values[key.strip()] = val.strip()
    return values
