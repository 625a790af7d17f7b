"""Time-shifting pipeline: stale snapshots, forecast-based shifting and directives.

A directive delivered at frame ``t`` is always computed from the snapshot
captured at ``t - total_delay``.  The snapshot is advanced to ``t`` with the
forecasters, and hazard maps and allocations are built on the shifted view.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Iterable, Sequence

import numpy as np

from .boxes import (
    DEFAULT_HAZARD_HORIZON,
    DEFAULT_VICINITY,
    Allocation,
    allocate,
    box_ranges,
    build_hazard_map,
    hazard_horizons,
    plan_maneuver,
    _paint,
)
from .errors import MissingModel, TraceTooShort, UnreachableBox
from .features import DEFAULT_HISTORY
from .forecaster import (
    DEFAULT_THRESHOLDS,
    coordinate_distances,
    evaluation_rows,
    horizon_errors,
    threshold_accuracy,
)
from .trace import RoadGeometry, Trace, VehicleClass, VehicleState, lane_from_y


@dataclass(frozen=True)
class StageConfig:
    """Per-stage latency in frames; the sum is the snapshot age at delivery."""

    capture_delay: int = 1
    transfer_delay: int = 1
    recognize_delay: int = 1
    shift_delay: int = 1
    deliver_delay: int = 1

    def __post_init__(self):
        for name in ("capture_delay", "transfer_delay", "recognize_delay", "shift_delay",
                     "deliver_delay"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")

    @property
    def total_delay(self) -> int:
        return (self.capture_delay + self.transfer_delay + self.recognize_delay
                + self.shift_delay + self.deliver_delay)

    @classmethod
    def from_millis(cls, fps: int = 25, **millis) -> "StageConfig":
        """Round wall-clock stage latencies up to whole frames."""
        return cls(**{k: ms_to_steps(v, fps) for k, v in millis.items()})


def ms_to_steps(ms: float, fps: int = 25) -> int:
    return int(math.ceil(ms * fps / 1000 - 1e-9))


_SNAP_FIELDS = ("vehicle_id", "x", "y", "vx", "vy", "ax", "ay", "lane", "length", "width",
                "klass", "autonomous")


@dataclass(frozen=True, eq=False)
class WorldSnapshot:
    """Columnar view of all vehicles captured at one frame."""

    capture_frame: int
    rows: np.ndarray
    data: dict
    shifted_to: int | None = None
    fallback: np.ndarray | None = None

    def __post_init__(self):
        if self.shifted_to is not None and self.shifted_to < self.capture_frame:
            raise ValueError("a snapshot cannot be shifted into the past")

    def __len__(self) -> int:
        return len(self.rows)

    def __getitem__(self, name):
        return self.data[name]

    @property
    def positions(self) -> np.ndarray:
        return np.column_stack([self.data["x"], self.data["y"]])

    @property
    def frame(self) -> int:
        return self.capture_frame if self.shifted_to is None else self.shifted_to

    def state(self, i: int) -> VehicleState:
        d = self.data
        return VehicleState(
            int(d["vehicle_id"][i]), int(self.frame), float(d["x"][i]), float(d["y"][i]),
            float(d["vx"][i]), float(d["vy"][i]), float(d["ax"][i]), float(d["ay"][i]),
            int(d["lane"][i]), float(d["length"][i]), float(d["width"][i]),
            VehicleClass(int(d["klass"][i])), bool(d["autonomous"][i]),
        )

    @property
    def states(self) -> tuple[VehicleState, ...]:
        return tuple(self.state(i) for i in range(len(self)))


def capture(trace: Trace, frame: int) -> WorldSnapshot:
    rows = np.asarray(trace.frame_rows(frame), dtype=np.int64)
    return WorldSnapshot(int(frame), rows, {k: trace[k][rows] for k in _SNAP_FIELDS})


def time_shift(snapshot: WorldSnapshot, predictor, target_frame: int, history: Trace,
               lane_width: float | None = None) -> WorldSnapshot:
    """Advance every captured position to ``target_frame``.

    Velocities and accelerations are carried over unchanged.  ``history`` is
    the trace the snapshot came from; predictors only read frames up to the
    capture frame from it (the oracle excepted).
    """
    horizon = int(target_frame) - snapshot.capture_frame
    if horizon < 0:
        raise ValueError("target frame precedes the capture frame")
    if horizon == 0:
        return replace(snapshot, shifted_to=snapshot.capture_frame,
                       fallback=np.zeros(len(snapshot), dtype=bool))
    disp, fallback = predictor.displacement(history, snapshot.rows, horizon)
    data = dict(snapshot.data)
    data["x"] = snapshot.data["x"] + disp[:, 0]
    data["y"] = snapshot.data["y"] + disp[:, 1]
    data["lane"] = lane_from_y(data["y"], lane_width or history.lane_width)
    return replace(snapshot, data=data, shifted_to=int(target_frame), fallback=fallback)


@dataclass
class PipelineMetrics:
    frames: list[int] = field(default_factory=list)
    staleness_error: list[float] = field(default_factory=list)
    shifted_error: list[float] = field(default_factory=list)
    thresholds: tuple[float, ...] = DEFAULT_THRESHOLDS
    hits: dict[float, int] = field(default_factory=dict)
    scored: int = 0
    fallbacks: int = 0
    grants: int = 0
    holds: int = 0
    duplicate_grants: int = 0
    human_conflicts: int = 0
    checked_grants: int = 0

    @property
    def hit_rate(self) -> dict[float, float]:
        return {t: (self.hits.get(t, 0) / self.scored if self.scored else 1.0) for t in self.thresholds}

    @property
    def mean_staleness_error(self) -> float:
        return float(np.mean(self.staleness_error)) if self.staleness_error else 0.0

    @property
    def mean_shifted_error(self) -> float:
        return float(np.mean(self.shifted_error)) if self.shifted_error else 0.0

    def to_dict(self) -> dict:
        return {
            "summary": {
                "frames": len(self.frames),
                "mean_staleness_error": self.mean_staleness_error,
                "mean_shifted_error": self.mean_shifted_error,
                "hit_rate": {repr(float(t)): v for t, v in self.hit_rate.items()},
                "scored_positions": self.scored,
                "naive_fallbacks": self.fallbacks,
            },
            "allocation": {
                "grants": self.grants,
                "holds": self.holds,
                "duplicate_grants": self.duplicate_grants,
                "human_conflicts": self.human_conflicts,
                "checked_grants": self.checked_grants,
            },
            "per_frame": {
                "frame": self.frames,
                "staleness_error": self.staleness_error,
                "shifted_error": self.shifted_error,
            },
        }


@dataclass
class PipelineResult:
    metrics: PipelineMetrics
    directives: list[dict]


def _human_grid(trace: Trace, frame: int, geom: RoadGeometry) -> np.ndarray:
    rows = np.asarray(trace.frame_rows(frame), dtype=np.int64)
    rows = rows[~trace["autonomous"][rows]]
    grid = np.zeros((geom.n_bands, geom.n_slots), dtype=bool)
    _paint(grid, *box_ranges(trace["x"][rows], trace["y"][rows], trace["length"][rows],
                             trace["width"][rows], geom))
    return grid


def run_pipeline(trace: Trace, stages: StageConfig, predictor, geom: RoadGeometry,
                 av_ids: Iterable[int] = (), *, horizon: int = DEFAULT_HAZARD_HORIZON,
                 vicinity: float = DEFAULT_VICINITY, horizons=None,
                 thresholds: Sequence[float] = DEFAULT_THRESHOLDS,
                 history: int = DEFAULT_HISTORY, waypoint_step: int = 5,
                 max_frames: int | None = None) -> PipelineResult:
    """Replay ``trace`` through the capture-to-directive pipeline."""
    D = stages.total_delay
    if not len(trace) or trace.last_frame - trace.first_frame + 1 < D + history + horizon:
        raise TraceTooShort(f"need at least {D + history + horizon} frames")
    if hasattr(predictor, "decompose") and D > 0:
        predictor.decompose(D)  # raises MissingModel early
    hs = hazard_horizons(predictor, horizon, horizons)
    av_set = {int(v) for v in av_ids}
    metrics = PipelineMetrics(thresholds=tuple(float(t) for t in thresholds))
    directives = []
    start = trace.first_frame + history - 1 + D
    stop = trace.last_frame if max_frames is None else min(trace.last_frame, start + max_frames - 1)
    if hasattr(predictor, "prefetch"):
        cap_rows = np.flatnonzero((trace["frame"] >= start - D) & (trace["frame"] <= stop - D))
        predictor.prefetch(trace, cap_rows, [D] + [D + h for h in hs])
    current: Allocation | None = None
    for t in range(start, stop + 1):
        c = t - D
        snap = capture(trace, c)
        shifted = time_shift(snap, predictor, t, trace)
        truth_rows = trace.rows_for(snap["vehicle_id"], t)
        alive = truth_rows >= 0
        truth = np.column_stack([trace["x"][truth_rows[alive]], trace["y"][truth_rows[alive]]])
        stale_e = coordinate_distances(snap.positions[alive], truth)
        shift_e = coordinate_distances(shifted.positions[alive], truth)
        metrics.frames.append(int(t))
        metrics.staleness_error.append(float(stale_e.mean()) if len(stale_e) else 0.0)
        metrics.shifted_error.append(float(shift_e.mean()) if len(shift_e) else 0.0)
        metrics.scored += len(shift_e)
        for thr in metrics.thresholds:
            metrics.hits[thr] = metrics.hits.get(thr, 0) + int(np.sum(shift_e <= thr))
        metrics.fallbacks += int(shifted.fallback.sum())

        record = {
            "frame": int(t),
            "capture_frame": int(c),
            "staleness_error": metrics.staleness_error[-1],
            "shifted_error": metrics.shifted_error[-1],
            "directives": [],
        }
        av_idx = [i for i, v in enumerate(snap["vehicle_id"]) if int(v) in av_set]
        if av_idx:
            future = {}
            for h in hs:
                disp, _ = predictor.displacement(trace, snap.rows, D + h)
                future[h] = snap.positions + disp
            sx = shifted["x"]
            maps = {}
            for i in av_idx:
                near = np.abs(sx - sx[i]) <= vicinity
                near[i] = False
                others = {k: shifted[k][near] for k in ("x", "y", "length", "width")}
                maps[int(snap["vehicle_id"][i])] = build_hazard_map(
                    geom, t, shifted.state(i), others, {h: p[near] for h, p in future.items()},
                    horizon, trace.fps,
                )
            current = allocate(maps.keys(), maps, current, frame=t)
            granted = list(current.assignments.values())
            metrics.grants += len(granted)
            metrics.holds += len(current.holds)
            metrics.duplicate_grants += len(granted) - len(set(granted))
            if granted and t + horizon <= trace.last_frame:
                grid = _human_grid(trace, t + horizon, geom)
                metrics.checked_grants += len(granted)
                metrics.human_conflicts += sum(bool(grid[b.lane, b.slot]) for b in granted)
            for vid in sorted(maps):
                box = current.assignments.get(vid)
                entry = {"ego": vid, "box": None, "hold": box is None, "waypoints": []}
                if box is not None:
                    entry["box"] = box.to_list()
                    try:
                        plan = plan_maneuver(maps[vid].ego, box, geom, horizon, trace.fps,
                                             step=waypoint_step)
                        entry["waypoints"] = plan.to_list()
                    except UnreachableBox:
                        pass
                else:
                    entry["box"] = current.holds[vid].to_list()
                record["directives"].append(entry)
        directives.append(record)
    return PipelineResult(metrics, directives)


def speculative_eval(trace: Trace, predictor, thresholds=DEFAULT_THRESHOLDS, windows=(1, 5, 10),
                     vehicle_ids=None, history: int = DEFAULT_HISTORY, stride: int = 1):
    """``{threshold: {window: accuracy}}`` over shared evaluation points."""
    for w in windows:
        if not predictor.supports(w):
            raise MissingModel(w)
    rows = evaluation_rows(trace, vehicle_ids, windows, history, stride)
    table = {float(t): {} for t in thresholds}
    for w in windows:
        err, _, _ = horizon_errors(predictor, trace, rows, w)
        for t in thresholds:
            table[float(t)][int(w)] = threshold_accuracy(err, t)
    return table
