import json
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from tilespmv import perfmodel
from tilespmv.hardware import HardwareProfile
from tilespmv.perfmodel import (AnalyticPerfTable, PerfTable, TableError, TableHoleError,
                                WorkloadBoundError, admissible, admissible_shapes,
                                build_perf_table, evaluate_shapes, iteration_count, load_table,
                                predict_csr_vector, predict_ell, predict_time, save_table,
                                walk_shapes)
from tilespmv.transform import COL_MAJOR, ROW_MAJOR, Tile

HW = HardwareProfile()
TINY = HardwareProfile(warp_size=4, num_sm=2, max_active_warps_per_sm=2)   # 4 resident warps


def make_tile(lengths):
    lengths = sorted(lengths, reverse=True)
    row_ptr = np.concatenate([[0], np.cumsum(lengths)]).astype(np.int64)
    cols = np.concatenate([np.arange(n) for n in lengths]).astype(np.int64)
    return Tile(0, 0, max(lengths), np.arange(len(lengths)), row_ptr, cols, np.ones(cols.size))


def uniform_table(hw, ub, value=1.0):
    return PerfTable(hw, ub, entries={s: value for s in admissible_shapes(hw.warp_size, ub)})


def spreadsheet_walk(lengths, wl, W):
    """Row walk written out longhand: returns padded (w, h) per warp."""
    out, i = [], 0
    while i < len(lengths):
        w = lengths[i]
        h = min(wl // w, len(lengths) - i)
        if w >= h:
            out.append((-(-w // W) * W, h))
        else:
            out.append((w, -(-h // W) * W))
        i += h
    return out


def closed_form(w, h, W, mode="cached", peak=1.0, half=64.0, fetch=4.0):
    s = w * h
    thr = peak * s / (s + half)
    if w % W == 0 and (w >= h or h % W != 0):
        thr *= (w / W) / (w / W + math.log2(W))
    if mode == "uncached":
        thr = 1 / (1 / thr + fetch)
    return thr


def test_domain_membership():
    assert not admissible(33, 3, 32, 32768)
    assert admissible(32, 3, 32, 32768)
    assert (32, 3) in set(admissible_shapes(32, 32768))
    assert perfmodel.DEFAULT_UPPER_BOUND == 32768


@given(st.sampled_from([1, 2, 4, 8]), st.integers(1, 200))
def test_domain_enumeration(W, ub):
    got = set(admissible_shapes(W, ub))
    want = {(w, h) for w in range(1, ub + 1) for h in range(1, ub // w + 1)
            if w % W == 0 or h % W == 0}
    assert got == want


@pytest.mark.parametrize("nwarp,expected", [(2000, 3), (960, 1), (961, 2), (1, 1)])
def test_iteration_count(nwarp, expected):
    assert iteration_count(nwarp, HW) == expected


@given(st.integers(1, 10**7), st.integers(1, 64), st.integers(1, 64))
def test_iteration_count_property(nwarp, sms, warps):
    hw = HardwareProfile(num_sm=sms, max_active_warps_per_sm=warps)
    i = iteration_count(nwarp, hw)
    act = sms * warps
    assert (i - 1) * act < nwarp <= i * act


def test_uniform_table_total_is_padded_size():
    t = make_tile([7, 5, 5, 3, 2, 2, 1, 1, 1])
    cost = predict_time(t, 9, uniform_table(TINY, 256), TINY)
    shapes = spreadsheet_walk([7, 5, 5, 3, 2, 2, 1, 1, 1], 9, 4)
    assert cost.total_time == sum(w * h for w, h in shapes)
    assert list(cost.shapes) == shapes


def test_single_iteration_hand_recomputation():
    # WL 6, warp 4: 6 -> 6x1 row-major; 3,3 -> 3x2 row-major; 2,1,1 -> 2x3 col-major; 1,1 -> 1x2 col-major
    lengths = [6, 3, 3, 2, 1, 1, 1, 1]
    table = AnalyticPerfTable(TINY, 256)
    cost = predict_time(make_tile(lengths), 6, table, TINY)
    shapes = spreadsheet_walk(lengths, 6, 4)
    assert shapes == [(8, 1), (4, 2), (2, 4), (1, 4)]
    assert len(cost.iteration_times) == 1
    thr = [closed_form(w, h, 4) for w, h in shapes]
    size = sum(w * h for w, h in shapes)
    assert cost.iteration_sizes == (size,)
    assert cost.total_time == size / (sum(thr) / len(thr))


@given(st.lists(st.integers(1, 20), min_size=1, max_size=80), st.integers(0, 3))
def test_additivity_and_analytic_exactness(lengths, mult):
    lengths = sorted(lengths, reverse=True)
    wl = lengths[0] * (mult + 1)
    table = AnalyticPerfTable(TINY, 1 << 12)
    cost = predict_time(make_tile(lengths), wl, table, TINY)
    assert cost.total_time == sum(cost.iteration_times)
    shapes = spreadsheet_walk(lengths, wl, 4)
    expected = 0.0
    for k in range(0, len(shapes), 4):
        grp = shapes[k:k + 4]
        p = sum(closed_form(w, h, 4) for w, h in grp) / len(grp)
        expected += sum(w * h for w, h in grp) / p
    assert cost.total_time == expected
    assert cost.num_warps == -(-sum(lengths) // wl)
    assert cost.iteration_count == -(-cost.num_warps // 4)


@given(st.lists(st.integers(1, 20), min_size=1, max_size=60))
def test_doubling_sizes_doubles_time(lengths):
    lengths = sorted(lengths, reverse=True)
    table = uniform_table(TINY, 1 << 12)
    cost = predict_time(make_tile(lengths), lengths[0], table, TINY)
    doubled = [(w, 2 * h) for w, h in cost.shapes]
    assert sum(evaluate_shapes(doubled, table, TINY)[0]) == 2 * cost.total_time


@given(st.lists(st.integers(1, 40), min_size=1, max_size=80))
def test_row_major_reduces_to_csr_vector(lengths):
    lengths = sorted(lengths, reverse=True)
    table = AnalyticPerfTable(TINY, 1 << 12)
    cost = predict_time(make_tile(lengths), lengths[0], table, TINY,
                        force_order=ROW_MAJOR, rows_per_workload=1)
    assert cost.total_time == predict_csr_vector(lengths, table, TINY)


@given(st.integers(1, 30), st.integers(1, 60))
def test_column_major_reduces_to_ell(k, rows):
    lengths = [k] * rows
    table = AnalyticPerfTable(TINY, 1 << 12)
    cost = predict_time(make_tile(lengths), k * 4, table, TINY,
                        force_order=COL_MAJOR, rows_per_workload=4)
    assert cost.total_time == predict_ell(lengths, table, TINY)


def test_prediction_is_pure():
    t = make_tile([9, 4, 4, 2, 1, 1])
    table = AnalyticPerfTable(TINY, 256)
    assert predict_time(t, 9, table, TINY) == predict_time(t, 9, table, TINY)


def test_table_hole_names_shape():
    t = make_tile([3, 3, 3])
    table = PerfTable(TINY, 256, entries={(4, 1): 1.0})
    with pytest.raises(TableHoleError) as err:
        predict_time(t, 9, table, TINY)
    assert "(w=4, h=3)" in str(err.value) or "(w=3, h=4)" in str(err.value)


def test_bound_error():
    with pytest.raises(WorkloadBoundError):
        predict_time(make_tile([5, 1]), 4, AnalyticPerfTable(TINY, 256), TINY)


def test_walk_clips_to_remaining_rows():
    assert walk_shapes([2, 2], 100, 4) == [(4, 2)]


def test_measured_table_small_build():
    table = build_perf_table(TINY, 16, "cached", waves=1, reps=2)
    assert set(table.entries) == set(admissible_shapes(4, 16))
    assert all(math.isfinite(v) and v > 0 for v in table.entries.values())
    assert table.usable


def test_timing_failure_marks_table_unusable(monkeypatch):
    real = perfmodel.time_tile
    calls = {"n": 0}

    def flaky(*a, **k):
        calls["n"] += 1
        if calls["n"] == 2:
            raise RuntimeError("timer broke")
        return real(*a, **k)

    monkeypatch.setattr(perfmodel, "time_tile", flaky)
    table = build_perf_table(TINY, 8, "uncached", waves=1, reps=1)
    assert len(table.invalid) == 1
    with pytest.raises(TableError):
        table.lookup(4, 1)


def test_json_round_trip_and_fingerprint(tmp_path):
    table = uniform_table(TINY, 64, 2.5)
    path = tmp_path / "t.json"
    save_table(table, path)
    back = load_table(path, TINY)
    assert back.entries == table.entries and back.upper_bound == 64
    d = json.loads(path.read_text())
    assert d["schema_version"] == 1 and d["fingerprint"] == TINY.fingerprint()
    with pytest.raises(TableError):
        load_table(path, HW)
    assert load_table(path, HW, force=True).entries == table.entries
    analytic = tmp_path / "a.json"
    save_table(AnalyticPerfTable(TINY, 128, "uncached"), analytic)
    a = load_table(analytic, TINY)
    assert a.lookup(8, 3) == AnalyticPerfTable(TINY, 128, "uncached").lookup(8, 3)


def test_analytic_materialize_matches_lookup():
    a = AnalyticPerfTable(TINY, 64)
    m = a.materialize()
    for s in a.domain():
        assert m.lookup(*s) == a.lookup(*s)
    with pytest.raises(TableHoleError):
        a.lookup(3, 3)


def test_build_rounds_keep_fastest_and_report_progress():
    calls = []
    shapes = [(4, 1), (4, 4), (1, 4)]
    table = build_perf_table(TINY, 16, shapes=shapes, reps=2, rounds=3,
                             progress=lambda k, n: calls.append((k, n)))
    assert set(table.entries) == set(shapes) and table.usable
    assert calls[-1] == (9, 9) and len(calls) == 9
