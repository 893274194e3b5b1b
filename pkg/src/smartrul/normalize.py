"""Per-device normalization.

Training matrices are min-max scaled over their own 151 rows, so every
failure-anchored matrix ends near 1. Live matrices have no failure row to
scale by; instead each feature is divided by a threshold taken from the
device's own recent history, either its maximum (``STRATEGY1_MAX``) or the
75th-percentile order statistic (``STRATEGY2_Q75``).
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from datetime import date, timedelta
from fractions import Fraction

import numpy as np

from .ingest import DeviceHistory, FeatureMatrix, InsufficientHistoryError

HISTORY_DAYS = 60
MIN_HISTORY_SAMPLES = 10


class Strategy(enum.Enum):
    TRAIN_MINMAX = "train-minmax"
    STRATEGY1_MAX = "strategy1-max"
    STRATEGY2_Q75 = "strategy2-q75"

    @classmethod
    def parse(cls, text: str | int) -> "Strategy":
        aliases = {"1": cls.STRATEGY1_MAX, "2": cls.STRATEGY2_Q75, "train": cls.TRAIN_MINMAX}
        key = str(text).strip()
        if key in aliases:
            return aliases[key]
        return cls(key)


@dataclass(frozen=True)
class HistoricalStats:
    hist_min: np.ndarray
    hist_max: np.ndarray
    q75: np.ndarray
    window_days: int
    source_range: tuple[date, date]
    sample_size: int
    quantile: float = 0.75


@dataclass(frozen=True)
class NormalizedMatrix:
    rows: np.ndarray
    strategy: Strategy
    degenerate_mask: np.ndarray
    serial: str = ""
    anchor: date | None = None
    row_valid: np.ndarray | None = field(default=None, repr=False)

    @property
    def exceedance(self) -> np.ndarray:
        """Per-feature fraction of rows above 1."""
        return (self.rows > 1.0).mean(axis=0)


def _rows_of(matrix: FeatureMatrix | np.ndarray) -> tuple[np.ndarray, dict]:
    if isinstance(matrix, FeatureMatrix):
        meta = {"serial": matrix.serial, "anchor": matrix.anchor, "row_valid": matrix.row_valid}
        rows = matrix.rows
    else:
        meta = {}
        rows = matrix
    rows = np.asarray(rows, dtype=np.float64)
    if rows.ndim != 2:
        raise ValueError(f"expected a 2-D matrix, got shape {rows.shape}")
    if not np.isfinite(rows).all():
        raise ValueError("matrix contains non-finite values")
    return rows, meta


def minmax_train(matrix: FeatureMatrix | np.ndarray) -> NormalizedMatrix:
    rows, meta = _rows_of(matrix)
    lo = rows.min(axis=0)
    hi = rows.max(axis=0)
    degenerate = hi <= lo
    span = np.where(degenerate, 1.0, hi - lo)
    out = np.where(degenerate, 0.0, (rows - lo) / span)
    return NormalizedMatrix(out, Strategy.TRAIN_MINMAX, degenerate, **meta)


def order_statistic(sorted_values: np.ndarray, quantile: float) -> np.ndarray:
    """Smallest sample ``v`` with at least ``quantile`` of samples <= v.

    That is the ``ceil(quantile * n)``-th smallest value (1-based), with no
    interpolation. Works column-wise on a pre-sorted 2-D array.
    """
    n = len(sorted_values)
    if n == 0:
        raise ValueError("empty sample")
    if not 0 < quantile <= 1:
        raise ValueError("quantile must be in (0, 1]")
    k = math.ceil(Fraction(str(quantile)) * n)
    return sorted_values[max(k, 1) - 1]


def historical_stats(
    history: DeviceHistory,
    as_of: date,
    window_days: int = HISTORY_DAYS,
    quantile: float = 0.75,
    min_samples: int = MIN_HISTORY_SAMPLES,
) -> HistoricalStats:
    """Per-feature min / quantile / max over reported days in ``(as_of - window_days, as_of]``."""
    end = as_of.toordinal()
    ords = history.ordinals
    vals = history.values
    keep = (ords > end - window_days) & (ords <= end) & ~np.isnan(vals).any(axis=1)
    sample = vals[keep]
    if len(sample) < min_samples:
        raise InsufficientHistoryError(history.serial, len(sample), min_samples,
                                       f"history days before {as_of}")
    phi = np.sort(sample, axis=0)
    return HistoricalStats(
        hist_min=phi[0].copy(),
        hist_max=phi[-1].copy(),
        q75=order_statistic(phi, quantile).copy(),
        window_days=window_days,
        source_range=(as_of - timedelta(days=window_days - 1), as_of),
        sample_size=len(sample),
        quantile=quantile,
    )


def normalize_online(
    matrix: FeatureMatrix | np.ndarray,
    stats: HistoricalStats,
    strategy: Strategy,
) -> NormalizedMatrix:
    """``(x - min_col) / (threshold - min_col)`` with the column min taken over ``matrix``.

    Values above the threshold are kept as-is (no clamping). A threshold at
    or below the column minimum marks the feature degenerate and zeroes it.
    """
    rows, meta = _rows_of(matrix)
    if strategy is Strategy.STRATEGY1_MAX:
        threshold = stats.hist_max
    elif strategy is Strategy.STRATEGY2_Q75:
        threshold = stats.q75
    else:
        raise ValueError(f"{strategy} is not an online strategy")
    lo = rows.min(axis=0)
    span = threshold - lo
    degenerate = ~(span > 0)
    out = np.where(degenerate, 0.0, (rows - lo) / np.where(degenerate, 1.0, span))
    return NormalizedMatrix(out, strategy, degenerate, **meta)
