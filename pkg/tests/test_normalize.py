from datetime import timedelta

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from smartrul.ingest import InsufficientHistoryError, extract_matrix
from smartrul.normalize import (
    HistoricalStats,
    Strategy,
    historical_stats,
    minmax_train,
    normalize_online,
    order_statistic,
)

from conftest import START, make_history
from oracles import order_statistic_scan


def _stats(lo, q, hi):
    lo, q, hi = (np.atleast_1d(np.asarray(v, dtype=float)) for v in (lo, q, hi))
    return HistoricalStats(lo, hi, q, 60, (START, START), 60)


def test_minmax_endpoints():
    m = minmax_train(np.array([[2.0, 5.0], [4.0, 5.0], [3.0, 5.0]]))
    np.testing.assert_array_equal(m.rows[:, 0], [0.0, 1.0, 0.5])
    np.testing.assert_array_equal(m.rows[:, 1], 0.0)
    np.testing.assert_array_equal(m.degenerate_mask, [False, True])


def test_minmax_rejects_non_finite():
    with pytest.raises(ValueError):
        minmax_train(np.array([[1.0], [np.nan]]))


@settings(max_examples=200, deadline=None)
@given(hnp.arrays(np.float64, st.tuples(st.integers(2, 60), st.integers(1, 5)),
                  elements=st.floats(-1e6, 1e6)))
def test_minmax_attains_zero_and_one(rows):
    m = minmax_train(rows)
    assert ((m.rows >= 0) & (m.rows <= 1)).all()
    for j in range(rows.shape[1]):
        if m.degenerate_mask[j]:
            assert (m.rows[:, j] == 0).all()
        else:
            assert m.rows[:, j].min() == 0.0 and m.rows[:, j].max() == 1.0


def test_order_statistic_examples():
    v = np.arange(1.0, 9.0)  # 8 samples -> 6th smallest
    assert order_statistic(v, 0.75) == 6.0
    assert order_statistic(np.arange(1.0, 61.0), 0.75) == 45.0
    assert order_statistic(np.array([7.0]), 0.75) == 7.0
    with pytest.raises(ValueError):
        order_statistic(np.array([]), 0.75)


@settings(max_examples=300, deadline=None)
@given(st.lists(st.integers(-50, 50), min_size=1, max_size=80),
       st.sampled_from([0.5, 0.75, 0.8, 0.9, 1.0]))
def test_order_statistic_matches_scan(values, q):
    got = order_statistic(np.sort(np.array(values, dtype=float)), q)
    assert got == order_statistic_scan(values, q)


def test_online_strategy_examples():
    rows = np.array([[0.0], [5.0], [10.0]])
    s1 = normalize_online(rows, _stats(0, 5, 10), Strategy.STRATEGY1_MAX)
    s2 = normalize_online(rows, _stats(0, 5, 10), Strategy.STRATEGY2_Q75)
    np.testing.assert_array_equal(s1.rows[:, 0], [0.0, 0.5, 1.0])
    np.testing.assert_array_equal(s2.rows[:, 0], [0.0, 1.0, 2.0])
    np.testing.assert_array_equal(s2.exceedance, [1 / 3])


def test_online_degenerate_threshold_zeroes_feature():
    rows = np.array([[3.0, 1.0], [3.0, 2.0]])
    out = normalize_online(rows, _stats([3, 0], [3, 2], [3, 2]), Strategy.STRATEGY2_Q75)
    np.testing.assert_array_equal(out.rows[:, 0], 0.0)
    np.testing.assert_array_equal(out.degenerate_mask, [True, False])


def test_online_rejects_training_strategy():
    with pytest.raises(ValueError):
        normalize_online(np.ones((3, 1)), _stats(0, 1, 2), Strategy.TRAIN_MINMAX)


@settings(max_examples=300, deadline=None)
@given(st.integers(0, 2**31))
def test_strategy1_never_exceeds_strategy2(seed):
    rng = np.random.default_rng(seed)
    hist = rng.normal(100, 20, (60, 5))
    rows = np.vstack([rng.normal(100, 20, (150, 5)), hist[-1:]])
    phi = np.sort(hist, axis=0)
    stats = HistoricalStats(phi[0], phi[-1], order_statistic(phi, 0.75), 60, (START, START), 60)
    s1 = normalize_online(rows, stats, Strategy.STRATEGY1_MAX)
    s2 = normalize_online(rows, stats, Strategy.STRATEGY2_Q75)
    ok = ~s2.degenerate_mask
    assert (s1.rows[:, ok] <= s2.rows[:, ok]).all()


def test_strategy_parse_aliases():
    assert Strategy.parse("1") is Strategy.STRATEGY1_MAX
    assert Strategy.parse(2) is Strategy.STRATEGY2_Q75
    assert Strategy.parse("strategy2-q75") is Strategy.STRATEGY2_Q75
    with pytest.raises(ValueError):
        Strategy.parse("3")


def test_historical_stats_window_is_half_open():
    vals = np.arange(100, dtype=float)[:, None] * np.ones((1, 5))
    h = make_history(vals, failed=False)
    as_of = START + timedelta(days=99)
    s = historical_stats(h, as_of)
    assert s.sample_size == 60
    assert s.hist_min[0] == 40.0 and s.hist_max[0] == 99.0
    assert s.q75[0] == 84.0  # 45th of 40..99
    assert s.source_range == (START + timedelta(days=40), as_of)


def test_historical_stats_ignores_future_and_needs_samples():
    vals = np.arange(100, dtype=float)[:, None] * np.ones((1, 5))
    h = make_history(vals, failed=False)
    s = historical_stats(h, START + timedelta(days=70))
    assert s.hist_max[0] == 70.0
    with pytest.raises(InsufficientHistoryError):
        historical_stats(h, START + timedelta(days=5))


def test_quantile_override_changes_threshold():
    vals = np.arange(100, dtype=float)[:, None] * np.ones((1, 5))
    h = make_history(vals, failed=False)
    as_of = START + timedelta(days=99)
    assert historical_stats(h, as_of, quantile=0.8).q75[0] > historical_stats(h, as_of).q75[0]


def test_normalize_keeps_matrix_metadata():
    h = make_history(np.arange(500, dtype=float).reshape(100, 5))
    m = extract_matrix(h, h.failure_date)
    n = minmax_train(m)
    assert n.serial == "Z1" and n.anchor == h.failure_date
    assert n.row_valid is m.row_valid
