"""Feature vectors and displacement targets for trajectory forecasting.

Layout of one feature vector (``7*H + 30`` values):

* ego block, for ``k = 0 .. H-1`` frames back: x and y relative to the
  current position, vx, vy, ax, ay, lane;
* neighbor block, for the six slots front/rear x same/left/right lane:
  x and y relative to the ego, vx, vy, presence flag (all zero when absent).
"""

from __future__ import annotations

import numpy as np

from .errors import EmptyDataset, InsufficientHistory, UnknownVehicle
from .trace import Trace

DEFAULT_HISTORY = 10
EGO_FIELDS = ("x", "y", "vx", "vy", "ax", "ay", "lane")
NEIGHBOR_FIELDS = ("x", "y", "vx", "vy", "present")
N_SLOTS = 6


def n_features(history: int = DEFAULT_HISTORY) -> int:
    return len(EGO_FIELDS) * history + len(NEIGHBOR_FIELDS) * N_SLOTS


def feature_names(history: int = DEFAULT_HISTORY) -> list[str]:
    names = [f"ego_{f}_t-{k}" for k in range(history) for f in EGO_FIELDS]
    slots = ("front_same", "rear_same", "front_left", "rear_left", "front_right", "rear_right")
    names += [f"{s}_{f}" for s in slots for f in NEIGHBOR_FIELDS]
    return names


def _vehicle_position(trace: Trace) -> np.ndarray:
    cache = getattr(trace, "_vpos_cache", None)
    if cache is None:
        cache = np.empty(len(trace), dtype=np.int64)
        cache[trace.vehicle_order] = np.arange(len(trace))
        trace._vpos_cache = cache
    return cache


def history_available(trace: Trace, history: int) -> np.ndarray:
    """Mask over rows: does the row have ``history`` frames ending at it?"""
    before, _ = trace.vehicle_position_in_life()
    return before >= history - 1


def feature_rows(trace: Trace, rows, history: int = DEFAULT_HISTORY) -> np.ndarray:
    """Feature matrix for the given trace rows; every row needs full history."""
    rows = np.asarray(rows, dtype=np.int64)
    if not history_available(trace, history)[rows].all():
        raise InsufficientHistory(f"some rows have fewer than {history} frames of history")
    c = trace.columns
    vpos = _vehicle_position(trace)[rows]
    X = np.empty((len(rows), n_features(history)))
    x0, y0 = c["x"][rows], c["y"][rows]
    for k in range(history):
        hr = trace.vehicle_order[vpos - k]
        base = 7 * k
        X[:, base] = c["x"][hr] - x0
        X[:, base + 1] = c["y"][hr] - y0
        X[:, base + 2] = c["vx"][hr]
        X[:, base + 3] = c["vy"][hr]
        X[:, base + 4] = c["ax"][hr]
        X[:, base + 5] = c["ay"][hr]
        X[:, base + 6] = c["lane"][hr]
    nb = trace.neighbor_table()[rows]
    off = 7 * history
    for s in range(N_SLOTS):
        r = nb[:, s]
        present = r >= 0
        rr = np.where(present, r, 0)
        cols = off + 5 * s
        X[:, cols] = np.where(present, c["x"][rr] - x0, 0.0)
        X[:, cols + 1] = np.where(present, c["y"][rr] - y0, 0.0)
        X[:, cols + 2] = np.where(present, c["vx"][rr], 0.0)
        X[:, cols + 3] = np.where(present, c["vy"][rr], 0.0)
        X[:, cols + 4] = present
    return X


def extract_features(trace: Trace, vehicle_id: int, frame: int,
                     history: int = DEFAULT_HISTORY) -> np.ndarray:
    row = trace.row(vehicle_id, frame)
    if not history_available(trace, history)[row]:
        raise InsufficientHistory(
            f"vehicle {vehicle_id} has fewer than {history} frames of history at frame {frame}"
        )
    return feature_rows(trace, [row], history)[0]


def sample_rows(trace: Trace, vehicle_ids=None, horizon: int = 1,
                history: int = DEFAULT_HISTORY, stride: int = 1) -> np.ndarray:
    """Rows with enough history and ``horizon`` future frames, optionally thinned
    to frames divisible by ``stride``."""
    before, after = trace.vehicle_position_in_life()
    ok = (before >= history - 1) & (after >= horizon)
    if vehicle_ids is not None:
        ok &= np.isin(trace["vehicle_id"], np.fromiter(vehicle_ids, dtype=np.int64))
    if stride > 1:
        ok &= trace["frame"] % stride == 0
    return np.flatnonzero(ok)


def future_rows(trace: Trace, rows, horizon: int) -> np.ndarray:
    """Row of the same vehicle ``horizon`` frames later (must exist)."""
    vpos = _vehicle_position(trace)[np.asarray(rows, dtype=np.int64)]
    return trace.vehicle_order[vpos + horizon]


def displacement_targets(trace: Trace, rows, horizon: int) -> np.ndarray:
    fut = future_rows(trace, rows, horizon)
    return np.column_stack([trace["x"][fut] - trace["x"][rows], trace["y"][fut] - trace["y"][rows]])


def make_dataset(trace: Trace, vehicle_ids, horizon: int, history: int = DEFAULT_HISTORY,
                 stride: int = 1):
    """``(X, Y, keys)``: features, ``(dx, dy)`` targets and ``(vehicle_id, frame)`` per row."""
    if horizon < 1:
        raise ValueError("horizon must be >= 1")
    if vehicle_ids is not None:
        known = set(int(v) for v in trace.vehicle_ids)
        for v in vehicle_ids:
            if int(v) not in known:
                raise UnknownVehicle(v)
    rows = sample_rows(trace, vehicle_ids, horizon, history, stride)
    if not len(rows):
        raise EmptyDataset(f"no samples with history {history} and horizon {horizon}")
    X = feature_rows(trace, rows, history)
    Y = displacement_targets(trace, rows, horizon)
    keys = np.column_stack([trace["vehicle_id"][rows], trace["frame"][rows]])
    return X, Y, keys
