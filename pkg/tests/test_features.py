import numpy as np
import pytest

from edgetwin.errors import EmptyDataset, InsufficientHistory, UnknownVehicle
from edgetwin.features import (extract_features, feature_names, make_dataset, n_features,
                               sample_rows)
from edgetwin.trace import neighbors


def slow_features(trace, vid, frame, H):
    """Rebuild a feature vector from per-vehicle state lookups."""
    now = trace.state(vid, frame)
    out = []
    for k in range(H):
        s = trace.state(vid, frame - k)
        out += [s.x - now.x, s.y - now.y, s.vx, s.vy, s.ax, s.ay, s.lane]
    for nb in neighbors(trace, vid, frame).as_tuple():
        if nb is None:
            out += [0.0] * 5
        else:
            out += [nb.x - now.x, nb.y - now.y, nb.vx, nb.vy, 1.0]
    return np.array(out)


def test_layout():
    assert n_features(10) == 100
    assert len(feature_names(4)) == n_features(4)
    assert feature_names(2)[0] == "ego_x_t-0"


def test_features_match_slow_oracle(small_trace, rng):
    H = 5
    for _ in range(50):
        vid = int(rng.choice(small_trace.vehicle_ids))
        frame = int(rng.integers(H - 1, small_trace.last_frame + 1))
        np.testing.assert_allclose(extract_features(small_trace, vid, frame, H),
                                   slow_features(small_trace, vid, frame, H), atol=1e-12)


def test_insufficient_history(small_trace):
    with pytest.raises(InsufficientHistory):
        extract_features(small_trace, 1, 3, history=10)
    extract_features(small_trace, 1, 9, history=10)


def test_dataset_targets_are_future_displacements(small_trace):
    X, Y, keys = make_dataset(small_trace, [1, 2, 3], horizon=5, history=4, stride=7)
    assert X.shape == (len(Y), n_features(4))
    assert set(keys[:, 0]) == {1, 2, 3}
    assert np.all(keys[:, 1] % 7 == 0)
    for (vid, frame), (dx, dy) in zip(keys[:20], Y[:20]):
        a, b = small_trace.state(vid, frame), small_trace.state(vid, frame + 5)
        assert (dx, dy) == pytest.approx((b.x - a.x, b.y - a.y))


def test_sample_rows_bounds(small_trace):
    rows = sample_rows(small_trace, None, horizon=25, history=10)
    f = small_trace["frame"][rows]
    assert f.min() == 9 and f.max() == small_trace.last_frame - 25


def test_dataset_errors(small_trace):
    with pytest.raises(UnknownVehicle):
        make_dataset(small_trace, [999], horizon=1)
    with pytest.raises(EmptyDataset):
        make_dataset(small_trace, [1], horizon=small_trace.last_frame + 1)
