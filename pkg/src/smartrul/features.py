"""Feature scoring: Pearson correlation with RUL and the Fisher score."""

from __future__ import annotations

import csv
import math
import re
from dataclasses import dataclass
from datetime import date
from pathlib import Path
from typing import Iterable, NamedTuple, Sequence, TextIO

import numpy as np

from . import MATRIX_DAYS, MAX_RUL

RAW_COLUMN = re.compile(r"^smart_(\d+)_raw$")


class Correlation(NamedTuple):
    value: float
    degenerate: bool


@dataclass(frozen=True)
class FeatureScore:
    feature_index: int
    correlation: float
    fisher: float
    fisher_log_normalized: float = float("nan")
    smart_id: int | None = None


@dataclass(frozen=True)
class FisherInput:
    """N x n samples with one integer class label per sample."""

    samples: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        x = np.asarray(self.samples, dtype=np.float64)
        object.__setattr__(self, "samples", x[:, None] if x.ndim == 1 else x)
        object.__setattr__(self, "labels", np.asarray(self.labels))
        if len(self.labels) != len(self.samples):
            raise ValueError("samples and labels differ in length")


@dataclass(frozen=True)
class Selection:
    indices: list[int]
    disagreements: list[int]


def pearson_correlation(x: Sequence[float], y: Sequence[float]) -> Correlation:
    """Product-moment correlation. A constant series gives ``(0.0, True)``."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1:
        raise ValueError(f"length mismatch: {x.shape} vs {y.shape}")
    if len(x) < 2:
        raise ValueError("need at least two observations")
    dx = x - x.mean()
    dy = y - y.mean()
    sxx = float(dx @ dx)
    syy = float(dy @ dy)
    if sxx == 0.0 or syy == 0.0:
        return Correlation(0.0, True)
    r = float(dx @ dy) / math.sqrt(sxx * syy)
    return Correlation(max(-1.0, min(1.0, r)), False)


def fisher_scores(samples: np.ndarray | FisherInput, labels: Sequence[int] | None = None) -> np.ndarray:
    """Ratio of class-weighted between-class spread to within-class spread.

    ``F_n = sum_k d_k (mu_n^k - mu_n)^2 / sum_k d_k var_n^k`` with population
    variance inside each class. A zero denominator yields ``inf`` when the
    numerator is positive and ``0`` otherwise.
    """
    data = samples if isinstance(samples, FisherInput) else FisherInput(samples, labels)
    x, y = data.samples, data.labels
    classes, inverse, counts = np.unique(y, return_inverse=True, return_counts=True)
    if len(classes) < 2:
        raise ValueError("Fisher score needs at least two classes")

    mu = x.mean(axis=0)
    sums = np.zeros((len(classes), x.shape[1]))
    np.add.at(sums, inverse, x)
    class_mu = sums / counts[:, None]
    between = (counts[:, None] * (class_mu - mu) ** 2).sum(axis=0)
    within = ((x - class_mu[inverse]) ** 2).sum(axis=0)

    out = np.zeros(x.shape[1])
    pos = within > 0
    out[pos] = between[pos] / within[pos]
    out[~pos & (between > 0)] = np.inf
    return out


def log_normalized(fisher: np.ndarray) -> np.ndarray:
    """log10(F / max F); used for plotting only."""
    fisher = np.asarray(fisher, dtype=np.float64)
    finite = fisher[np.isfinite(fisher)]
    top = finite.max() if len(finite) else 0.0
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(np.isfinite(fisher) & (top > 0), np.log10(fisher / top), np.nan)


def rank_and_select(scores: Sequence[FeatureScore], k: int) -> Selection:
    """Top-``k`` features by absolute correlation (ties: lower index first).

    ``disagreements`` lists selected features that are not also in the
    Fisher top-``k``.
    """
    if k <= 0:
        raise ValueError("k must be positive")
    if k > len(scores):
        raise ValueError(f"k={k} exceeds {len(scores)} candidates")
    by_corr = sorted(scores, key=lambda s: (-abs(s.correlation), s.feature_index))
    by_fisher = sorted(scores, key=lambda s: (-s.fisher, s.feature_index))
    chosen = [s.feature_index for s in by_corr[:k]]
    fisher_top = {s.feature_index for s in by_fisher[:k]}
    return Selection(chosen, [i for i in chosen if i not in fisher_top])


def score_columns(values: np.ndarray, rul: np.ndarray, smart_ids: Sequence[int] | None = None,
                  max_label: int = MAX_RUL) -> list[FeatureScore]:
    """Score each column of ``values`` against ``rul``; NaN cells are ignored per column."""
    rul = np.asarray(rul, dtype=np.float64)
    labels = np.minimum(rul, max_label).astype(int)
    scores = []
    fisher_all = np.zeros(values.shape[1])
    corr_all = np.zeros(values.shape[1])
    for j in range(values.shape[1]):
        ok = ~np.isnan(values[:, j])
        if ok.sum() < 2:
            continue
        corr_all[j] = pearson_correlation(values[ok, j], rul[ok]).value
        if len(np.unique(labels[ok])) >= 2:
            fisher_all[j] = fisher_scores(values[ok, j], labels[ok])[0]
    lognorm = log_normalized(fisher_all)
    for j in range(values.shape[1]):
        scores.append(
            FeatureScore(
                feature_index=j,
                correlation=float(corr_all[j]),
                fisher=float(fisher_all[j]),
                fisher_log_normalized=float(lognorm[j]),
                smart_id=None if smart_ids is None else smart_ids[j],
            )
        )
    return scores


def scan_day_files(paths: Iterable[str | Path], model_filter: str | None = None,
                   days: int = MATRIX_DAYS) -> tuple[np.ndarray, np.ndarray, list[int]]:
    """Collect every ``smart_N_raw`` column for failed devices.

    Returns per-device min-max normalized rows within ``days`` of failure,
    the matching RUL (days to failure) and the SMART ids of the columns.
    """
    per_serial: dict[str, dict[date, dict[int, float]]] = {}
    failed_on: dict[str, date] = {}
    ids: set[int] = set()
    for path in sorted(Path(p) for p in paths):
        with open(path, newline="") as fh:
            reader = csv.DictReader(fh)
            cols = {}
            for name in reader.fieldnames or ():
                m = RAW_COLUMN.match(name.strip())
                if m:
                    cols[name] = int(m.group(1))
            ids.update(cols.values())
            for row in reader:
                if model_filter is not None and row.get("model", "").strip() != model_filter:
                    continue
                try:
                    day = date.fromisoformat(row["date"].strip())
                except (KeyError, ValueError):
                    continue
                serial = row.get("serial_number", "").strip()
                vals = {}
                for name, sid in cols.items():
                    try:
                        vals[sid] = float(row[name])
                    except (TypeError, ValueError):
                        pass
                per_serial.setdefault(serial, {})[day] = vals
                if row.get("failure", "0").strip() == "1":
                    failed_on.setdefault(serial, day)

    order = sorted(ids)
    col_of = {sid: j for j, sid in enumerate(order)}
    blocks, ruls = [], []
    for serial, fday in sorted(failed_on.items()):
        recs = per_serial[serial]
        dates = [d for d in sorted(recs) if 0 <= (fday - d).days < days]
        block = np.full((len(dates), len(order)), np.nan)
        for i, d in enumerate(dates):
            for sid, v in recs[d].items():
                block[i, col_of[sid]] = v
        with np.errstate(invalid="ignore"):
            lo = np.nanmin(block, axis=0) if len(dates) else np.zeros(len(order))
            hi = np.nanmax(block, axis=0) if len(dates) else np.zeros(len(order))
        span = np.where(hi > lo, hi - lo, 1.0)
        blocks.append(np.where(hi > lo, (block - lo) / span, 0.0 * block))
        ruls.append([(fday - d).days for d in dates])
    if not blocks:
        return np.zeros((0, len(order))), np.zeros(0), order
    return np.vstack(blocks), np.concatenate(ruls).astype(float), order


def write_score_table(scores: Sequence[FeatureScore], selected: Iterable[int], stream: TextIO) -> None:
    chosen = set(selected)
    writer = csv.writer(stream, lineterminator="\n")
    writer.writerow(["feature_index", "smart_id", "correlation", "fisher", "selected"])
    for s in scores:
        writer.writerow([
            s.feature_index,
            "" if s.smart_id is None else s.smart_id,
            repr(s.correlation),
            repr(s.fisher),
            int(s.feature_index in chosen),
        ])
