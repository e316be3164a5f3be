import dataclasses

import numpy as np
import pytest

from lineguard.grid import (
    NO_FAULT,
    FaultSpec,
    GridScenario,
    fixed_line,
    fixed_source,
)
from lineguard.harness import (
    DetectionParams,
    ScenarioCase,
    fault_combos,
    internal_suite,
    external_suite,
    normal_suite,
    full_scale_kwargs,
    run_case,
    run_detection_stream,
    run_suite,
    sweep_line_params,
    sweep_suite,
    window_group,
)
from lineguard.simulate import WaveformRecord, realize_scenario


def _scenario(fault: FaultSpec, duration=0.02, **kw) -> GridScenario:
    return GridScenario(
        line=fixed_line(),
        source1=fixed_source(0.0, 1.05),
        source2=fixed_source(-12.0, 0.98),
        fault=fault,
        sim_duration_s=duration,
        seed=7,
        **kw,
    )


def _empty_record(fs=100e3) -> WaveformRecord:
    z = np.zeros((3, 0))
    return WaveformRecord(
        sample_rate=fs,
        timestamps=np.zeros(0),
        u1=z, u2=z.copy(), i1=z.copy(), i2=z.copy(),
        missing_mask=np.zeros(0, dtype=bool),
    )


def test_healthy_record_yields_all_healthy_windows():
    rec = realize_scenario(_scenario(NO_FAULT, duration=0.02))
    stream = run_detection_stream(rec, fixed_line())
    assert len(stream) == 10
    assert all(wv.verdict is not None for wv in stream)
    assert all(wv.verdict.state == "healthy" for wv in stream)


def test_internal_fault_trips_at_or_after_inception():
    fault = FaultSpec("K3", 10.0, 10.0, 10.0, None, alpha=0.4,
                      placement="internal", t_inception=0.015)
    rec = realize_scenario(_scenario(fault, duration=0.032))
    stream = run_detection_stream(rec, fixed_line())
    assert len(stream) == 16
    # 2 ms windows: indices 0..6 end by 14 ms and precede the fault
    for wv in stream[:7]:
        assert wv.verdict.state == "healthy"
    trip_windows = [wv.window_index for wv in stream if wv.tripped]
    assert trip_windows and min(trip_windows) >= 7


def test_empty_record_gives_empty_stream():
    assert run_detection_stream(_empty_record(), fixed_line()) == []


def test_window_too_short_for_fit_raises():
    rec = realize_scenario(_scenario(NO_FAULT, duration=0.02))
    with pytest.raises(Exception):
        run_detection_stream(rec, fixed_line(),
                             DetectionParams(window_ms=0.05))


def test_window_group_partitions_record():
    wlen = 200
    j_f = 1501
    groups = [window_group(start, wlen, j_f) for start in range(0, 3200, wlen)]
    assert all(g in (1, 2, 3) for g in groups)
    assert groups.count(2) == 1
    k = groups.index(2)
    # the inception sample lies inside exactly that window's span
    assert k * wlen <= j_f < (k + 1) * wlen
    assert all(g == 1 for g in groups[:k])
    assert all(g == 3 for g in groups[k + 1:])
    assert window_group(0, wlen, None) == 0


def test_fault_combo_counts():
    three = fault_combos((0.0, 50.0, 100.0))
    assert len(three) == 18
    assert sum(1 for t, _ in three if t == "K2g") == 9
    two = fault_combos((0.0, 100.0))
    assert len(two) == 10
    only_k3 = fault_combos((0.0, 100.0), fault_types=("K3",))
    assert [t for t, _ in only_k3] == ["K3", "K3"]
    for _, res in only_k3:
        assert res[0] == res[1] == res[2] and res[3] is None


def test_suite_sids_are_unique():
    cases = sweep_suite()
    sids = [c.sid for c in cases]
    assert len(sids) == len(set(sids))
    parts = {c.part for c in cases}
    assert parts == {"internal", "external", "normal"}


def test_internal_suite_truth_labels():
    cases = internal_suite(grid_sets=1, r_levels=(0.0,), alphas=(0.5,),
                           t_inception_ms=(8.5,))
    rows, _ = run_case(cases[0])
    j_f = cases[0].inception_sample
    for r in rows:
        expect = "trip" if r["start"] + 200 > j_f else "healthy"
        assert r["truth_state"] == expect


def test_external_suite_truth_is_always_healthy():
    cases = external_suite(grid_sets=1, r_levels=(0.0,),
                           t_inception_ms=(5.0,), fault_types=("K3",))
    rows, _ = run_case(cases[0])
    assert rows and all(r["truth_state"] == "healthy" for r in rows)


def test_run_case_rows_carry_all_deltas():
    cases = normal_suite(n_scenarios=1)
    rows, timings = run_case(cases[0])
    assert len(rows) == 10 and len(timings) == 10
    for r in rows:
        for m in range(1, 13):
            assert f"delta_{m:02d}" in r
        assert float(r["delta_01"]) >= 0.0


def test_suite_run_is_deterministic():
    cases = normal_suite(n_scenarios=2)
    a = run_suite(cases)
    b = run_suite(cases)
    assert a.rows == b.rows
    assert a.metrics == b.metrics


def test_packet_loss_leaves_verdicts():
    fault = FaultSpec("K1", 0.0, None, None, 0.0, alpha=0.3,
                      placement="internal", t_inception=0.0085)
    base = _scenario(fault, duration=0.032)
    lossy = dataclasses.replace(base, packet_loss_prob=0.05)
    rows0, _ = run_case(ScenarioCase("a", "internal", base))
    rows1, _ = run_case(ScenarioCase("a", "internal", lossy))
    assert [r["state"] for r in rows0] == [r["state"] for r in rows1]


def test_zero_deviation_sweep_matches_baseline():
    cases = internal_suite(grid_sets=1, r_levels=(50.0,), alphas=(0.5,),
                           t_inception_ms=(8.5,), fault_types=("K2g",))
    baseline = run_suite(cases)
    (dev, swept), = sweep_line_params(cases, [0.0])
    assert dev == 0.0
    assert swept.rows == baseline.rows


def test_detector_scale_changes_estimates_only():
    cases = internal_suite(grid_sets=1, r_levels=(0.0,), alphas=(0.5,),
                           t_inception_ms=(8.5,), fault_types=("K3",))
    (dev, swept), = sweep_line_params(cases, [10.0])
    base = run_suite(cases)
    assert [r["state"] for r in swept.rows] == [r["state"] for r in base.rows]
    est_b = [float(r["alpha_est"]) for r in base.rows if r["alpha_est"] != ""]
    est_s = [float(r["alpha_est"]) for r in swept.rows if r["alpha_est"] != ""]
    assert est_b != est_s


def test_full_scale_grids():
    kw = full_scale_kwargs("internal")
    assert kw["grid_sets"] == 100
    assert len(kw["r_levels"]) == 11
    assert len(kw["alphas"]) == 9
    assert len(kw["t_inception_ms"]) == 41
    assert kw["t_inception_ms"][0] == 5.0 and kw["t_inception_ms"][-1] == 25.0
    assert full_scale_kwargs("normal") == {"n_scenarios": 100}
    ext = full_scale_kwargs("external")
    assert "alphas" not in ext
