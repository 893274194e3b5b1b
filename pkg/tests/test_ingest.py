import io
import random
from datetime import date, timedelta

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from smartrul.ingest import (
    FEATURE_COLUMNS,
    FormatError,
    IngestSummary,
    InsufficientHistoryError,
    SmartRecord,
    build_histories,
    extract_matrix,
    histories_to_csv,
    load_cache,
    load_directory,
    parse_day_file,
    save_cache,
)

from conftest import START, make_history

HEADER = "date,serial_number,model,capacity_bytes,failure," + ",".join(FEATURE_COLUMNS)


def _csv(*rows, header=HEADER):
    return io.StringIO("\n".join([header, *rows]) + "\n")


def test_parse_maps_fields():
    recs = parse_day_file(_csv("2017-01-05,Z1,ST4000DM000,4000787030016,0,77950690,100,5,6,7"),
                          model_filter="ST4000DM000")
    assert len(recs) == 1
    r = recs[0]
    assert r.date == date(2017, 1, 5) and r.serial == "Z1" and not r.failed
    assert r.features == (77950690.0, 100.0, 5.0, 6.0, 7.0)
    assert r.capacity_bytes == 4000787030016


def test_model_filter_drops_other_models():
    summary = IngestSummary()
    recs = parse_day_file(_csv("2017-01-05,Z1,HGST HMS5C4040ALE640,1,0,1,2,3,4,5"), "ST4000DM000", summary)
    assert recs == []
    assert summary.rows_filtered == 1


def test_column_order_is_irrelevant():
    cols = HEADER.split(",")
    row = "2017-01-05,Z1,M,1,1,10,20,30,40,50".split(",")
    order = list(range(len(cols)))
    random.Random(3).shuffle(order)
    text = _csv(",".join(row[i] for i in order), header=",".join(cols[i] for i in order))
    (rec,) = parse_day_file(text)
    assert rec.features == (10.0, 20.0, 30.0, 40.0, 50.0)
    assert rec.failed


def test_normalized_columns_are_ignored():
    header = HEADER + ",smart_7_normalized,smart_1_raw"
    (rec,) = parse_day_file(_csv("2017-01-05,Z1,M,1,0,1,2,3,4,5,99,1234", header=header))
    assert rec.features == (1.0, 2.0, 3.0, 4.0, 5.0)


def test_missing_column_is_named():
    header = HEADER.replace(",smart_240_raw", "")
    with pytest.raises(FormatError, match="missing column smart_240_raw"):
        parse_day_file(_csv("2017-01-05,Z1,M,1,0,1,2,4,5", header=header))


def test_empty_file():
    with pytest.raises(FormatError, match="empty"):
        parse_day_file(io.StringIO(""))


def test_bad_rows_are_counted_not_fatal():
    summary = IngestSummary()
    recs = parse_day_file(_csv("not-a-date,Z1,M,1,0,1,2,3,4,5", "2017-01-05,,M,1,0,1,2,3,4,5",
                               "2017-01-05,Z2,M,1,0,1,2,3,4,5"), summary=summary)
    assert [r.serial for r in recs] == ["Z2"]
    assert summary.rows_skipped == 2


def test_blank_cell_is_absent_not_zero():
    (rec,) = parse_day_file(_csv("2017-01-05,Z1,M,1,0,1,,3,4,5"))
    assert rec.features[1] is None
    assert not rec.complete


def _rec(day, serial="Z1", failed=False, v=1.0):
    return SmartRecord(START + timedelta(days=day), serial, "M", None, failed, (v,) * 5)


def test_histories_group_sort_and_failure():
    recs = [_rec(2, failed=True), _rec(0), _rec(1)]
    h = build_histories(recs)["Z1"]
    assert [r.date for r in h.days] == [START, START + timedelta(days=1), START + timedelta(days=2)]
    assert h.failure_date == START + timedelta(days=2)


def test_duplicate_keeps_last_seen():
    summary = IngestSummary()
    h = build_histories([_rec(0, v=1.0), _rec(0, v=2.0)], summary)["Z1"]
    assert len(h.days) == 1 and h.days[0].features[0] == 2.0
    assert summary.duplicates == 1


def test_records_after_failure_dropped():
    summary = IngestSummary()
    h = build_histories([_rec(0), _rec(1, failed=True), _rec(2), _rec(3)], summary)["Z1"]
    assert h.last_day == START + timedelta(days=1)
    assert summary.after_failure_dropped == 2


def test_history_invariants_enforced():
    with pytest.raises(ValueError):
        make_history(np.ones((3, 5))).__class__("Z", "M", (_rec(1), _rec(0)))
    with pytest.raises(ValueError, match="failure_date"):
        make_history(np.ones((3, 5))).__class__("Z", "M", (_rec(0), _rec(1)), START)


def test_matrix_contiguous_rows_verbatim():
    vals = np.arange(200 * 5, dtype=float).reshape(200, 5)
    h = make_history(vals)
    m = extract_matrix(h, h.failure_date)
    assert m.rows.shape == (151, 5)
    np.testing.assert_array_equal(m.rows, vals[-151:])
    assert m.row_valid.all()
    assert m.dates[0] == h.failure_date - timedelta(days=150)


def test_matrix_gap_carries_forward():
    vals = np.arange(200 * 5, dtype=float).reshape(200, 5)
    h = make_history(vals, skip={150})
    m = extract_matrix(h, h.failure_date)
    k = 150 - 49  # row index of the missing day inside the 151-day block
    np.testing.assert_array_equal(m.rows[k], vals[149])
    assert not m.row_valid[k]
    assert m.row_valid.sum() == 150


def test_matrix_pads_before_first_record():
    vals = np.arange(60 * 5, dtype=float).reshape(60, 5)
    h = make_history(vals)
    m = extract_matrix(h, h.failure_date)
    np.testing.assert_array_equal(m.rows[:91], np.repeat(vals[:1], 91, axis=0))
    assert m.row_valid.sum() == 60


def test_matrix_short_history():
    h = make_history(np.ones((10, 5)))
    with pytest.raises(InsufficientHistoryError):
        extract_matrix(h, h.failure_date)


def test_matrix_needs_exactly_31_valid_days():
    h = make_history(np.ones((31, 5)))
    assert extract_matrix(h, h.failure_date).row_valid.sum() == 31
    h = make_history(np.ones((31, 5)), skip={0})
    with pytest.raises(InsufficientHistoryError):
        extract_matrix(h, h.failure_date)


def test_matrix_first_day_of_block_counts_as_valid():
    # records exactly on days anchor-150 .. anchor-120
    vals = np.ones((151, 5))
    h = make_history(vals, failed=False, skip=set(range(31, 150)))
    m = extract_matrix(h, START + timedelta(days=150))
    assert m.row_valid[0] and m.row_valid.sum() == 32


def test_anchor_past_data_rejected():
    h = make_history(np.ones((40, 5)))
    with pytest.raises(ValueError):
        extract_matrix(h, h.failure_date + timedelta(days=1))


@settings(max_examples=40, deadline=None)
@given(st.integers(35, 180), st.sets(st.integers(0, 179), max_size=20), st.integers(0, 2**31))
def test_round_trip_through_csv(n, skip, seed):
    vals = np.round(np.random.default_rng(seed).uniform(0, 1e6, (n, 5)), 3)
    h = make_history(vals, skip=skip)
    back = build_histories(parse_day_file(io.StringIO(histories_to_csv({"Z1": h}))))["Z1"]
    assert back == h


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**31), st.integers(40, 170))
def test_matrix_independent_of_file_order(seed, n):
    rng = np.random.default_rng(seed)
    vals = rng.uniform(0, 100, (n, 5))
    h = make_history(vals, skip=set(rng.integers(0, n, 5).tolist()))
    recs = list(h.days)
    rng.shuffle(recs)
    h2 = build_histories(recs)["Z1"]
    a, b = extract_matrix(h, h.failure_date), extract_matrix(h2, h2.failure_date)
    np.testing.assert_array_equal(a.rows, b.rows)
    np.testing.assert_array_equal(a.row_valid, b.row_valid)


def test_cache_round_trip(tmp_path):
    hs = {"A": make_history(np.ones((40, 5)), serial="A"),
          "B": make_history(np.arange(200, dtype=float).reshape(40, 5), serial="B", failed=False)}
    save_cache(hs, tmp_path / "c.csv")
    assert load_cache(tmp_path / "c.csv") == hs


def test_cache_rejects_foreign_file(tmp_path):
    p = tmp_path / "x.csv"
    p.write_text(HEADER + "\n")
    with pytest.raises(FormatError):
        load_cache(p)


def test_load_directory(tmp_path):
    (tmp_path / "2017-01-01.csv").write_text(HEADER + "\n2017-01-01,Z1,M,1,0,1,2,3,4,5\n")
    (tmp_path / "2017-01-02.csv").write_text(HEADER + "\n2017-01-02,Z1,M,1,1,1,2,3,4,6\n")
    summary = IngestSummary()
    hs = load_directory(tmp_path, summary=summary)
    assert hs["Z1"].failure_date == date(2017, 1, 2)
    assert summary.files == 2 and summary.failures == 1
    assert "devices 1" in summary.to_text()


def test_anchor_after_last_record_needs_opt_in():
    h = make_history(np.arange(250, dtype=float).reshape(50, 5), failed=False)
    later = h.last_day + timedelta(days=2)
    with pytest.raises(ValueError):
        extract_matrix(h, later)
    m = extract_matrix(h, later, carry_to_anchor=True)
    np.testing.assert_array_equal(m.rows[-3:], np.tile(h.values[-1], (3, 1)))
    assert list(m.row_valid[-3:]) == [True, False, False]
