from __future__ import annotations

from datetime import date, timedelta

import numpy as np
import pytest

from smartrul.ingest import DeviceHistory, SmartRecord

START = date(2017, 1, 1)


def make_history(values, serial="Z1", start=START, failed=True, skip=(), model="ST4000DM000"):
    """History with one record per row of ``values``; day offsets in ``skip`` are left out."""
    values = np.asarray(values, dtype=float)
    days = []
    last = len(values) - 1
    for k, row in enumerate(values):
        if k in skip and k != last:
            continue
        days.append(SmartRecord(start + timedelta(days=k), serial, model, 4_000_787_030_016,
                                failed and k == last, tuple(float(v) for v in row)))
    failure = days[-1].date if failed else None
    return DeviceHistory(serial, model, tuple(days), failure)


def ramp_values(n_days, onset=20, seed=0, f=5):
    """Flat then accelerating rise over the last ``onset`` days."""
    rng = np.random.default_rng(seed)
    t = np.arange(n_days, dtype=float)
    base = rng.uniform(0, 100, f)
    ramp = np.clip(t - (n_days - 1 - onset), 0, None)[:, None] / onset
    return base + rng.uniform(10, 200, f) * ramp ** 2


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
