"""Box algorithm: footprint-to-box mapping, hazard maps, allocation and maneuvers.

Boxes are half-open rectangles ``[slot*L, (slot+1)*L) x [lane*W, (lane+1)*W)``;
a footprint occupies a box only when the intersection has positive area.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from enum import IntEnum
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import MixedFrames, OutOfSegment, StaleMap, UnreachableBox
from .forecaster import DEFAULT_HORIZONS
from .trace import DEFAULT_FPS, BoxId, RoadGeometry, Trace, VehicleState

DEFAULT_VICINITY = 100.0
DEFAULT_HAZARD_HORIZON = 25
MAX_SPEED = 45.0
MAX_ACCEL = 4.0
MAX_BRAKE = 8.0
MAX_LATERAL_SPEED = 2.0


class CellStatus(IntEnum):
    SAFE = 0
    PREDICTED_OCCUPIED = 1
    OCCUPIED_NOW = 2
    HAZARD = 3


def _span(lo, hi, origin, size, count):
    """Inclusive index range of cells ``[origin + k*size, ...)`` meeting ``(lo, hi)`` with positive length."""
    first = np.floor((lo - origin) / size).astype(np.int64)
    last = np.ceil((hi - origin) / size).astype(np.int64) - 1
    return np.maximum(first, 0), np.minimum(last, count - 1)


def box_ranges(x, y, length, width, geom: RoadGeometry):
    """Vectorized footprint-to-box ranges: ``(lane_lo, lane_hi, slot_lo, slot_hi, valid)``."""
    x, y = np.asarray(x, dtype=float), np.asarray(y, dtype=float)
    length, width = np.asarray(length, dtype=float), np.asarray(width, dtype=float)
    s_lo, s_hi = _span(x - length / 2, x + length / 2, geom.segment_start, geom.box_length, geom.n_slots)
    l_lo, l_hi = _span(y - width / 2, y + width / 2, 0.0, geom.lane_width, geom.n_bands)
    valid = (s_lo <= s_hi) & (l_lo <= l_hi)
    return l_lo, l_hi, s_lo, s_hi, valid


def box_index(state: VehicleState, geom: RoadGeometry) -> frozenset[BoxId]:
    """Every box the vehicle footprint overlaps with positive area."""
    l_lo, l_hi, s_lo, s_hi, valid = box_ranges(state.x, state.y, state.length, state.width, geom)
    if not valid:
        raise OutOfSegment(f"vehicle {state.vehicle_id} footprint misses the segment")
    return frozenset(
        BoxId(lane, slot)
        for lane in range(int(l_lo), int(l_hi) + 1)
        for slot in range(int(s_lo), int(s_hi) + 1)
    )


def _paint(grid, l_lo, l_hi, s_lo, s_hi, valid):
    for a, b, c, d, ok in zip(l_lo, l_hi, s_lo, s_hi, valid):
        if ok:
            grid[a:b + 1, c:d + 1] = True


@dataclass(frozen=True, eq=False)
class OccupancyGrid:
    geometry: RoadGeometry
    frame: int
    owners: Mapping[BoxId, frozenset[int]]

    @property
    def occupied(self) -> np.ndarray:
        grid = np.zeros((self.geometry.n_bands, self.geometry.n_slots), dtype=bool)
        for box in self.owners:
            grid[box.lane, box.slot] = True
        return grid

    def is_free(self, box: BoxId) -> bool:
        return box not in self.owners

    def __eq__(self, other):
        return (isinstance(other, OccupancyGrid) and self.frame == other.frame
                and self.geometry == other.geometry and dict(self.owners) == dict(other.owners))


def occupancy(states: Sequence[VehicleState], geom: RoadGeometry, frame: int | None = None) -> OccupancyGrid:
    frames = {s.frame for s in states}
    if len(frames) > 1:
        raise MixedFrames(f"states span frames {sorted(frames)}")
    if frame is None:
        frame = frames.pop() if frames else 0
    owners: dict[BoxId, set[int]] = {}
    for s in states:
        try:
            boxes = box_index(s, geom)
        except OutOfSegment:
            continue
        for b in boxes:
            owners.setdefault(b, set()).add(s.vehicle_id)
    return OccupancyGrid(geom, int(frame), {b: frozenset(v) for b, v in owners.items()})


@dataclass(frozen=True, eq=False)
class HazardMap:
    """Per-box hazard view for one ego vehicle.

    ``now`` marks boxes occupied by other vehicles at ``base_frame``,
    ``predicted`` boxes their forecast footprints touch at any evaluated
    horizon up to ``horizon``, and ``allocated`` boxes granted to other
    autonomous vehicles.  A box is safe only when none of the three is set.
    """

    geometry: RoadGeometry
    base_frame: int
    horizon: int
    ego: VehicleState | None
    now: np.ndarray
    predicted: np.ndarray
    allocated: np.ndarray = None
    horizons: tuple[int, ...] = ()
    fps: int = DEFAULT_FPS

    def __post_init__(self):
        if self.allocated is None:
            object.__setattr__(self, "allocated", np.zeros_like(self.now))

    @property
    def ego_id(self) -> int | None:
        return None if self.ego is None else self.ego.vehicle_id

    @property
    def hazard(self) -> np.ndarray:
        return self.now | self.predicted | self.allocated

    def statuses(self) -> np.ndarray:
        out = np.full(self.now.shape, int(CellStatus.SAFE), dtype=np.int8)
        out[self.predicted] = CellStatus.PREDICTED_OCCUPIED
        out[self.now] = CellStatus.OCCUPIED_NOW
        out[(self.now & self.predicted) | self.allocated] = CellStatus.HAZARD
        return out

    def status(self, box: BoxId) -> CellStatus:
        return CellStatus(int(self.statuses()[box.lane, box.slot]))

    def is_safe(self, box: BoxId) -> bool:
        return not (self.now[box.lane, box.slot] or self.predicted[box.lane, box.slot]
                    or self.allocated[box.lane, box.slot])

    def with_allocated(self, boxes: Iterable[BoxId]) -> "HazardMap":
        alloc = self.allocated.copy()
        for b in boxes:
            alloc[b.lane, b.slot] = True
        return replace(self, allocated=alloc)

    def to_dict(self) -> dict:
        st = self.statuses()
        lanes, slots = np.nonzero(st)
        return {
            "base_frame": self.base_frame,
            "horizon": self.horizon,
            "horizons": list(self.horizons),
            "ego": self.ego_id,
            "lanes": self.geometry.n_bands,
            "slots": self.geometry.n_slots,
            "cells": [[int(a), int(b), CellStatus(int(st[a, b])).name] for a, b in zip(lanes, slots)],
        }


def build_hazard_map(geom: RoadGeometry, base_frame: int, ego: VehicleState | None, others,
                     predicted: Mapping[int, np.ndarray], horizon: int,
                     fps: int = DEFAULT_FPS) -> HazardMap:
    """Hazard map from current footprints and forecast centers.

    ``others`` is a dict of arrays ``x, y, length, width`` for the non-ego
    vehicles in the vicinity; ``predicted[h]`` holds their ``(n, 2)``
    forecast centers at horizon ``h``.
    """
    shape = (geom.n_bands, geom.n_slots)
    now = np.zeros(shape, dtype=bool)
    pred = np.zeros(shape, dtype=bool)
    _paint(now, *box_ranges(others["x"], others["y"], others["length"], others["width"], geom))
    for h in sorted(predicted):
        centers = predicted[h]
        _paint(pred, *box_ranges(centers[:, 0], centers[:, 1], others["length"], others["width"], geom))
    return HazardMap(geom, int(base_frame), int(horizon), ego, now, pred,
                     horizons=tuple(sorted(int(h) for h in predicted)), fps=fps)


def hazard_horizons(predictor, horizon: int, configured=None) -> tuple[int, ...]:
    """Horizons to evaluate: configured (or the predictor's own) ones up to ``horizon``, plus ``horizon``."""
    base = configured if configured is not None else (getattr(predictor, "horizons", None) or DEFAULT_HORIZONS)
    return tuple(sorted({int(h) for h in base if 0 < h <= horizon} | {int(horizon)}))


def hazard_map(trace: Trace, frame: int, ego_id: int, predictor, geom: RoadGeometry,
               horizon: int = DEFAULT_HAZARD_HORIZON, vicinity: float = DEFAULT_VICINITY,
               horizons=None) -> HazardMap:
    """Hazard map for ``ego_id`` at ``frame`` using forecasts for nearby vehicles.

    Vehicles without enough history fall back to persistence inside the
    predictor rather than failing.
    """
    ego_row = trace.row(ego_id, frame)
    ego = trace.state_at_row(ego_row)
    rows = np.asarray(trace.frame_rows(frame))
    rows = rows[(rows != ego_row) & (np.abs(trace["x"][rows] - ego.x) <= vicinity)]
    others = {k: trace[k][rows] for k in ("x", "y", "length", "width")}
    hs = hazard_horizons(predictor, horizon, horizons)
    predicted = {}
    base = np.column_stack([others["x"], others["y"]])
    for h in hs:
        disp, _ = predictor.displacement(trace, rows, h)
        predicted[h] = base + disp
    return build_hazard_map(geom, frame, ego, others, predicted, horizon, trace.fps)


# -- allocation --------------------------------------------------------------------

@dataclass(frozen=True)
class Allocation:
    frame: int
    horizon: int
    assignments: Mapping[int, BoxId] = field(default_factory=dict)
    holds: Mapping[int, BoxId] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "frame": self.frame,
            "horizon": self.horizon,
            "assignments": {str(k): v.to_list() for k, v in sorted(self.assignments.items())},
            "holds": {str(k): v.to_list() for k, v in sorted(self.holds.items())},
        }


@dataclass(frozen=True)
class ManeuverPlan:
    waypoints: tuple[tuple[int, float, float], ...]

    def to_list(self) -> list[list]:
        return [[f, x, y] for f, x, y in self.waypoints]


def plan_maneuver(ego: VehicleState, target: BoxId, geom: RoadGeometry,
                  horizon: int = DEFAULT_HAZARD_HORIZON, fps: int = DEFAULT_FPS, *,
                  step: int = 1, max_accel: float = MAX_ACCEL, max_brake: float = MAX_BRAKE,
                  max_lateral_speed: float = MAX_LATERAL_SPEED,
                  max_speed: float = MAX_SPEED) -> ManeuverPlan:
    """Waypoints from the ego position to the center of ``target`` in ``horizon`` frames.

    Longitudinally the vehicle keeps one constant acceleration; laterally it
    follows the smooth step ``3s^2 - 2s^3``, whose peak speed is
    ``1.5 * |dy| / T``.
    """
    if horizon < 1:
        raise UnreachableBox("horizon must be at least one frame")
    if abs(target.lane - ego.lane) > 1 or not 0 <= target.lane < geom.lane_count:
        raise UnreachableBox(f"box {target} is not within one driving lane of lane {ego.lane}")
    if not 0 <= target.slot < geom.n_slots:
        raise UnreachableBox(f"box {target} outside the segment")
    T = horizon / fps
    xc, yc = geom.slot_center(target.slot), geom.lane_center(target.lane)
    accel = 2 * (xc - ego.x - ego.vx * T) / T ** 2
    v_end = ego.vx + accel * T
    if not -max_brake <= accel <= max_accel:
        raise UnreachableBox(f"needs acceleration {accel:.2f} m/s^2")
    if not (0 <= ego.vx <= max_speed and 0 <= v_end <= max_speed):
        raise UnreachableBox(f"needs end speed {v_end:.2f} m/s")
    dy = yc - ego.y
    if 1.5 * abs(dy) / T > max_lateral_speed + 1e-12:
        raise UnreachableBox(f"lateral move of {dy:.2f} m too fast for {T:.2f} s")
    ks = list(range(0, horizon, step)) + [horizon]
    pts = []
    for k in ks:
        t = k / fps
        s = k / horizon
        pts.append((
            ego.frame + k,
            ego.x + ego.vx * t + 0.5 * accel * t * t if k < horizon else xc,
            ego.y + dy * (3 * s * s - 2 * s ** 3) if k < horizon else yc,
        ))
    return ManeuverPlan(tuple(pts))


def candidate_boxes(m: HazardMap) -> list[BoxId]:
    """Driving-lane boxes within one lane of the ego, best first.

    Order: fewest lane changes, then distance to the slot the ego would
    reach at constant speed, then lower slot, then lower lane.
    """
    ego, geom = m.ego, m.geometry
    T = m.horizon / m.fps
    preferred = geom.slot_of(ego.x + ego.vx * T)
    lo = geom.slot_of(ego.x + ego.vx * T - 0.5 * MAX_BRAKE * T * T) - 1
    hi = geom.slot_of(ego.x + ego.vx * T + 0.5 * MAX_ACCEL * T * T) + 1
    out = []
    for lane in (ego.lane - 1, ego.lane, ego.lane + 1):
        if not 0 <= lane < geom.lane_count:
            continue
        for slot in range(max(lo, 0), min(hi, geom.n_slots - 1) + 1):
            out.append(BoxId(lane, slot))
    out.sort(key=lambda b: (abs(b.lane - ego.lane), abs(b.slot - preferred), b.slot, b.lane))
    return out


def allocate(requests: Iterable[int], maps: Mapping[int, HazardMap],
             current: Allocation | None = None, frame: int | None = None,
             **plan_kwargs) -> Allocation:
    """Grant each requesting autonomous vehicle one safe, reachable box.

    Requests are served in ascending vehicle id whatever order they arrive
    in; a granted box is hazardous for everyone served later.  A vehicle with
    no such box holds the box under its center (or its previous grant).
    """
    ids = sorted(set(int(r) for r in requests))
    if not ids:
        return Allocation(frame if frame is not None else 0, DEFAULT_HAZARD_HORIZON)
    if frame is None:
        frame = maps[ids[0]].base_frame
    for vid in ids:
        if maps[vid].base_frame != frame:
            raise StaleMap(f"map for vehicle {vid} is for frame {maps[vid].base_frame}, not {frame}")
    horizon = maps[ids[0]].horizon
    taken: set[BoxId] = set()
    grants: dict[int, BoxId] = {}
    holds: dict[int, BoxId] = {}
    for vid in ids:
        m = maps[vid]
        chosen = None
        for box in candidate_boxes(m):
            if box in taken or not m.is_safe(box):
                continue
            try:
                plan_maneuver(m.ego, box, m.geometry, m.horizon, m.fps, **plan_kwargs)
            except UnreachableBox:
                continue
            chosen = box
            break
        if chosen is None:
            prev = current.assignments.get(vid) if current is not None else None
            holds[vid] = prev if prev is not None else BoxId(m.ego.lane, m.geometry.slot_of(m.ego.x))
        else:
            grants[vid] = chosen
            taken.add(chosen)
    return Allocation(int(frame), int(horizon), grants, holds)
