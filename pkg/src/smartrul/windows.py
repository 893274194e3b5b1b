"""Fixed-length supervised windows and the device-level train/validation split."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from datetime import date, timedelta
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from . import MATRIX_DAYS, MAX_RUL, TIME_STEPS
from .ingest import DeviceHistory, InsufficientHistoryError, extract_matrix
from .normalize import NormalizedMatrix, Strategy, minmax_train

log = logging.getLogger(__name__)

MAX_IMPUTED_FRACTION = 0.2
TENSOR_MAGIC = "smartrul-windows v1"


@dataclass(frozen=True)
class Window:
    values: np.ndarray
    label: int | None
    serial: str
    end_day: date
    imputed_fraction: float


@dataclass(frozen=True)
class DataSplit:
    train: list[Window]
    validation: list[Window]
    seed: int


def make_windows(
    norm: NormalizedMatrix,
    ts: int = TIME_STEPS,
    max_label: int = MAX_RUL,
    max_imputed: float = MAX_IMPUTED_FRACTION,
    n_rows: int = MATRIX_DAYS,
) -> list[Window]:
    """Stride-1 windows over a failure-anchored matrix, labelled with days to failure."""
    if norm.strategy is not Strategy.TRAIN_MINMAX:
        raise ValueError("training windows need a min-max normalized matrix")
    rows = norm.rows
    if len(rows) != n_rows:
        raise ValueError(f"expected {n_rows} rows, got {len(rows)}")
    if norm.anchor is None:
        raise ValueError("normalized matrix carries no anchor day")
    valid = norm.row_valid if norm.row_valid is not None else np.ones(n_rows, dtype=bool)
    invalid = np.concatenate([[0], np.cumsum(~valid)])
    out = []
    for end in range(ts - 1, n_rows):
        imputed = (invalid[end + 1] - invalid[end + 1 - ts]) / ts
        if imputed > max_imputed:
            continue
        days_left = n_rows - 1 - end
        out.append(
            Window(
                values=rows[end + 1 - ts : end + 1],
                label=min(days_left, max_label),
                serial=norm.serial,
                end_day=norm.anchor - timedelta(days=days_left),
                imputed_fraction=float(imputed),
            )
        )
    return out


def training_windows(
    histories: Mapping[str, DeviceHistory] | Iterable[DeviceHistory],
    ts: int = TIME_STEPS,
) -> tuple[list[Window], dict[str, str]]:
    """Windows from every failed device, in serial order; returns (windows, skipped)."""
    if isinstance(histories, Mapping):
        histories = histories.values()
    windows: list[Window] = []
    skipped: dict[str, str] = {}
    for h in sorted(histories, key=lambda h: h.serial):
        if h.failure_date is None:
            continue
        try:
            matrix = extract_matrix(h, h.failure_date)
        except InsufficientHistoryError as exc:
            skipped[h.serial] = str(exc)
            continue
        windows.extend(make_windows(minmax_train(matrix), ts=ts))
    if skipped:
        log.info("%d devices excluded for short history", len(skipped))
    return windows, skipped


def split_train_val(windows: Sequence[Window], fraction: float = 0.05, seed: int = 0) -> DataSplit:
    """Hold out whole devices until at least ``fraction`` of windows are in validation."""
    if not windows:
        raise ValueError("no windows to split")
    if not 0 < fraction < 1:
        raise ValueError("fraction must be in (0, 1)")
    serials = sorted({w.serial for w in windows})
    if len(serials) < 2:
        raise ValueError("device-level split needs at least two devices")
    counts = {s: 0 for s in serials}
    for w in windows:
        counts[w.serial] += 1
    target = max(1, math.floor(fraction * len(windows)))
    order = np.random.default_rng(seed).permutation(len(serials))
    held: set[str] = set()
    n_val = 0
    for i in order:
        if n_val >= target or len(held) == len(serials) - 1:
            break
        held.add(serials[i])
        n_val += counts[serials[i]]
    train = [w for w in windows if w.serial not in held]
    validation = [w for w in windows if w.serial in held]
    return DataSplit(train, validation, seed)


def stack(windows: Sequence[Window]) -> tuple[np.ndarray, np.ndarray]:
    """(n, ts, f) values and (n,) float labels; absent labels become NaN."""
    if not windows:
        return np.zeros((0, 0, 0)), np.zeros(0)
    x = np.stack([w.values for w in windows]).astype(np.float64)
    y = np.array([np.nan if w.label is None else w.label for w in windows], dtype=np.float64)
    return x, y


def dump_tensor(windows: Sequence[Window], path: str | Path, seed: int = 0) -> None:
    """Header line then little-endian float64 values and int32 labels (-1 = absent)."""
    x, y = stack(windows)
    n, ts, f = x.shape if len(windows) else (0, 0, 0)
    labels = np.where(np.isnan(y), -1, y).astype("<i4")
    with open(path, "wb") as fh:
        fh.write(f"{TENSOR_MAGIC} n={n} ts={ts} f={f} dtype=float64 seed={seed}\n".encode())
        fh.write(x.astype("<f8").tobytes())
        fh.write(labels.tobytes())


def load_tensor(path: str | Path) -> tuple[np.ndarray, np.ndarray, dict[str, str]]:
    with open(path, "rb") as fh:
        header = fh.readline().decode().split()
        if " ".join(header[:2]) != TENSOR_MAGIC:
            raise ValueError(f"{path}: not a window tensor file")
        meta = dict(item.split("=", 1) for item in header[2:])
        n, ts, f = int(meta["n"]), int(meta["ts"]), int(meta["f"])
        x = np.frombuffer(fh.read(8 * n * ts * f), dtype="<f8").reshape(n, ts, f)
        y = np.frombuffer(fh.read(4 * n), dtype="<i4")
    return x, y, meta
