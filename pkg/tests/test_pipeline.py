import numpy as np
import pytest

from edgetwin.errors import MissingModel, TraceTooShort
from edgetwin.features import make_dataset
from edgetwin.forecaster import ForecasterSet, NaiveForecaster, OracleForecaster, train
from edgetwin.pipeline import (StageConfig, capture, ms_to_steps, run_pipeline, speculative_eval,
                               time_shift)
from edgetwin.synth import constant_velocity_trace

NO_DELAY = StageConfig(0, 0, 0, 0, 0)


def av_ids(trace):
    return sorted({int(v) for v in trace["vehicle_id"][trace["autonomous"]]})


def test_stage_config():
    assert StageConfig().total_delay == 5
    assert StageConfig(2, 0, 1, 0, 0).total_delay == 3
    assert ms_to_steps(40) == 1 and ms_to_steps(41) == 2 and ms_to_steps(0) == 0
    assert StageConfig.from_millis(capture_delay=80, deliver_delay=10).total_delay == 2 + 1 + 3
    with pytest.raises(ValueError):
        StageConfig(capture_delay=-1)


def test_capture_and_time_shift(small_trace):
    snap = capture(small_trace, 100)
    assert len(snap) == 12 and snap.capture_frame == 100
    shifted = time_shift(snap, OracleForecaster(), 105, small_trace)
    for i, vid in enumerate(snap["vehicle_id"]):
        s = small_trace.state(int(vid), 105)
        assert (shifted["x"][i], shifted["y"][i]) == pytest.approx((s.x, s.y))
    assert shifted.shifted_to == 105
    same = time_shift(snap, NaiveForecaster(), 100, small_trace)
    np.testing.assert_array_equal(same.positions, snap.positions)
    with pytest.raises(ValueError):
        time_shift(snap, NaiveForecaster(), 99, small_trace)


def test_zero_delay_has_no_error(small_trace, small_geom):
    res = run_pipeline(small_trace, NO_DELAY, NaiveForecaster(), small_geom, av_ids(small_trace),
                       max_frames=60)
    assert res.metrics.mean_staleness_error == 0.0
    assert res.metrics.mean_shifted_error == 0.0
    assert all(r["capture_frame"] == r["frame"] for r in res.directives)


@pytest.mark.parametrize("delay", [(1, 0, 0, 0, 0), (1, 1, 1, 1, 1), (3, 2, 1, 2, 2)])
def test_oracle_shift_is_exact(small_trace, small_geom, delay):
    stages = StageConfig(*delay)
    res = run_pipeline(small_trace, stages, OracleForecaster(), small_geom, av_ids(small_trace),
                       max_frames=80)
    m = res.metrics
    assert m.mean_shifted_error == pytest.approx(0.0, abs=1e-9)
    assert m.mean_staleness_error > 0
    assert all(r["frame"] - r["capture_frame"] == stages.total_delay for r in res.directives)
    assert all(v == 1.0 for v in m.hit_rate.values())


def test_oracle_allocation_is_safe(small_trace, small_geom):
    res = run_pipeline(small_trace, StageConfig(), OracleForecaster(), small_geom,
                       av_ids(small_trace))
    a = res.metrics.to_dict()["allocation"]
    assert a["grants"] > 0 and a["checked_grants"] > 0
    assert a["duplicate_grants"] == 0
    assert a["human_conflicts"] == 0


def test_directive_records(small_trace, small_geom):
    avs = av_ids(small_trace)
    res = run_pipeline(small_trace, StageConfig(), OracleForecaster(), small_geom, avs, max_frames=20)
    assert len(res.directives) == 20
    rec = res.directives[0]
    assert set(rec) == {"frame", "capture_frame", "staleness_error", "shifted_error", "directives"}
    assert [d["ego"] for d in rec["directives"]] == avs
    for d in rec["directives"]:
        assert len(d["box"]) == 2
        if not d["hold"]:
            frames = [w[0] for w in d["waypoints"]]
            assert frames[0] == rec["frame"] and frames[-1] == rec["frame"] + 25


def test_no_autonomous_vehicles_means_no_directives(small_trace, small_geom):
    res = run_pipeline(small_trace, StageConfig(), OracleForecaster(), small_geom, [], max_frames=10)
    assert all(r["directives"] == [] for r in res.directives)
    assert res.metrics.grants == 0


def test_trace_too_short(small_geom):
    tr = constant_velocity_trace([20.0, 25.0], 30)
    with pytest.raises(TraceTooShort):
        run_pipeline(tr, StageConfig(), OracleForecaster(), small_geom, [1])


def test_missing_delay_model(small_trace, small_geom):
    X, Y, _ = make_dataset(small_trace, [1, 2, 3], 5, 10, stride=10)
    fs = ForecasterSet({5: train(X, Y, {"n_trees": 2}, horizon=5)})
    with pytest.raises(MissingModel):
        run_pipeline(small_trace, StageConfig(1, 1, 1, 0, 0), fs, small_geom, [1])


def test_speculative_eval_shape(small_trace):
    table = speculative_eval(small_trace, OracleForecaster(), (0.05, 0.5), (1, 5, 10), stride=5)
    assert table == {0.05: {1: 1.0, 5: 1.0, 10: 1.0}, 0.5: {1: 1.0, 5: 1.0, 10: 1.0}}
    naive = speculative_eval(small_trace, NaiveForecaster(), (0.05, 0.5, 50.0), (1, 5, 10), stride=5)
    assert naive[50.0][1] == 1.0
    for t in (0.05, 0.5):
        assert naive[t][1] >= naive[t][5] >= naive[t][10]
