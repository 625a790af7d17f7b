import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from oracles import footprint_grid, hazard_oracle

from edgetwin.boxes import (MAX_ACCEL, MAX_BRAKE, MAX_LATERAL_SPEED, Allocation, CellStatus,
                            HazardMap, allocate, box_index, build_hazard_map, candidate_boxes,
                            hazard_map, occupancy, plan_maneuver)
from edgetwin.errors import MixedFrames, OutOfSegment, StaleMap, UnreachableBox
from edgetwin.forecaster import OracleForecaster
from edgetwin.trace import BoxId, RoadGeometry, VehicleState

GEOM = RoadGeometry(3, segment_end=200.0)


def state(vid=1, x=50.0, y=5.25, vx=25.0, lane=None, length=4.5, width=1.8, frame=0):
    lane = int(y // 3.5) if lane is None else lane
    return VehicleState(frame=frame, vehicle_id=vid, x=x, y=y, vx=vx, vy=0.0, ax=0.0, ay=0.0,
                        lane=lane, length=length, width=width)


@settings(max_examples=200, deadline=None)
@given(st.floats(-10, 210), st.floats(-2, 12.5), st.floats(0.5, 20), st.floats(0.5, 3.0))
def test_box_index_matches_rectangle_intersection(x, y, length, width):
    s = state(x=x, y=y, length=length, width=width, lane=0)
    expected = footprint_grid(GEOM, [x], [y], [length], [width])
    cells = {BoxId(int(a), int(b)) for a, b in zip(*np.nonzero(expected))}
    if not cells:
        with pytest.raises(OutOfSegment):
            box_index(s, GEOM)
    else:
        assert box_index(s, GEOM) == cells


def test_touching_edges_do_not_count():
    # footprint [5, 10) x [3.5, 5.3): touches slot 0 and lane 0 only along edges
    s = state(x=7.5, y=3.5 + 0.9, length=5.0, width=1.8)
    assert box_index(s, GEOM) == {BoxId(1, 1)}


def test_occupancy_matches_oracle(small_trace, small_geom, rng):
    for f in rng.integers(0, small_trace.last_frame, 30):
        states = small_trace.frame_states(int(f))
        grid = occupancy(states, small_geom).occupied
        expected = footprint_grid(small_geom, [s.x for s in states], [s.y for s in states],
                                  [s.length for s in states], [s.width for s in states])
        np.testing.assert_array_equal(grid, expected)


def test_occupancy_owners_and_errors():
    a, b = state(1, x=12.0), state(2, x=14.0)
    grid = occupancy([a, b], GEOM)
    assert grid.owners[BoxId(1, 2)] == {1, 2}
    assert not grid.is_free(BoxId(1, 2)) and grid.is_free(BoxId(0, 2))
    with pytest.raises(MixedFrames):
        occupancy([a, state(2, frame=1)], GEOM)


def test_hazard_map_matches_time_advanced_oracle(small_trace, small_geom, rng):
    oracle = OracleForecaster()
    horizons = (1, 5, 10, 25)
    frames = rng.integers(0, small_trace.last_frame, 25)
    for f in frames:
        ego = int(rng.choice(small_trace.vehicle_ids))
        m = hazard_map(small_trace, int(f), ego, oracle, small_geom, horizon=25, vicinity=100.0)
        now, pred = hazard_oracle(small_trace, int(f), ego, small_geom, horizons, 100.0)
        np.testing.assert_array_equal(m.now, now)
        np.testing.assert_array_equal(m.predicted, pred)
        assert m.horizons == horizons


def test_statuses():
    now = np.zeros((3, 40), dtype=bool)
    pred = np.zeros_like(now)
    now[1, 3] = pred[1, 3] = True
    now[0, 5] = True
    pred[2, 7] = True
    m = HazardMap(GEOM, 0, 25, state(), now, pred)
    assert m.status(BoxId(1, 3)) is CellStatus.HAZARD
    assert m.status(BoxId(0, 5)) is CellStatus.OCCUPIED_NOW
    assert m.status(BoxId(2, 7)) is CellStatus.PREDICTED_OCCUPIED
    assert m.status(BoxId(0, 0)) is CellStatus.SAFE
    m2 = m.with_allocated([BoxId(0, 0)])
    assert m2.status(BoxId(0, 0)) is CellStatus.HAZARD and m.is_safe(BoxId(0, 0))
    cells = m2.to_dict()["cells"]
    assert [0, 0, "HAZARD"] in cells and len(cells) == 4


def fd_check(plan, ego, geom, fps):
    wp = np.array([[f, x, y] for f, x, y in plan.waypoints], dtype=float)
    dt = 1.0 / fps
    vx = np.diff(wp[:, 1]) / dt
    vy = np.diff(wp[:, 2]) / dt
    ax = np.diff(vx) / dt
    return wp, vx, vy, ax


@pytest.mark.parametrize("x0,vx,target", [(52.0, 25.0, BoxId(1, 15)), (49.0, 25.0, BoxId(1, 14)),
                                           (20.0, 40.0, BoxId(1, 11)), (60.0, 3.0, BoxId(1, 12))])
def test_plan_maneuver_respects_limits_by_finite_differences(x0, vx, target):
    ego = state(x=x0, y=5.25, vx=vx)
    plan = plan_maneuver(ego, target, GEOM, horizon=25, fps=25, step=1)
    wp, vx, vy, ax = fd_check(plan, ego, GEOM, 25)
    assert len(wp) == 26 and wp[0, 0] == 0 and wp[-1, 0] == 25
    assert (wp[-1, 1], wp[-1, 2]) == (GEOM.slot_center(target.slot), GEOM.lane_center(target.lane))
    assert wp[0, 1] == ego.x and wp[0, 2] == ego.y
    assert np.all(ax >= -MAX_BRAKE - 1e-6) and np.all(ax <= MAX_ACCEL + 1e-6)
    assert np.all(vx >= 0) and np.all(np.abs(vy) <= MAX_LATERAL_SPEED + 1e-9)
    # one constant acceleration throughout
    assert np.ptp(ax) < 1e-6


def test_plan_maneuver_lateral_within_lane():
    ego = state(x=52.0, y=5.0, vx=25.0)
    plan = plan_maneuver(ego, BoxId(1, 15), GEOM, horizon=25, step=1)
    _, _, vy, _ = fd_check(plan, ego, GEOM, 25)
    assert np.abs(vy).max() <= 1.5 * 0.25 + 1e-9


def test_plan_maneuver_unreachable():
    ego = state(x=52.0, vx=25.0)
    with pytest.raises(UnreachableBox):
        plan_maneuver(ego, BoxId(0, 20), GEOM, horizon=25)  # full lane in one second
    with pytest.raises(UnreachableBox):
        plan_maneuver(ego, BoxId(1, 35), GEOM, horizon=25)  # far too far ahead
    with pytest.raises(UnreachableBox):
        plan_maneuver(ego, BoxId(1, 10), GEOM, horizon=25)  # would need to reverse
    # a full lane needs 1.5 * 3.5 / 2 = 2.6 s at the lateral limit
    with pytest.raises(UnreachableBox):
        plan_maneuver(ego, BoxId(0, 20), GEOM, horizon=50)
    plan_maneuver(ego, BoxId(0, 25), GEOM, horizon=75)


def empty_map(ego, frame=0, geom=GEOM):
    z = np.zeros((geom.n_bands, geom.n_slots), dtype=bool)
    return HazardMap(geom, frame, 25, ego, z, z.copy())


def test_candidates_prefer_own_lane_and_constant_speed_slot():
    ego = state(x=52.0, vx=25.0)
    c = candidate_boxes(empty_map(ego))
    assert c[0] == BoxId(1, GEOM.slot_of(52.0 + 25.0))
    assert all(abs(b.lane - 1) <= 1 for b in c)


def test_allocation_unique_and_ordered_by_id():
    # both AVs can only reach box (1, 15); whichever has the lower id gets it
    for low, high in ((1, 2), (2, 1)):
        a = state(low, x=52.0, vx=25.0)
        b = state(high, x=53.5, vx=25.0)
        maps = {high: empty_map(b), low: empty_map(a)}
        alloc = allocate([high, low], maps, frame=0)
        winner = min(low, high)
        assert alloc.assignments == {winner: BoxId(1, 15)}
        assert max(low, high) in alloc.holds


def test_allocation_spreads_over_free_boxes():
    avs = [state(i, x=10.0 + 12.0 * i, y=(i % 3 + 0.5) * 3.5, vx=25.0) for i in range(1, 7)]
    maps = {s.vehicle_id: empty_map(s) for s in avs}
    alloc = allocate(maps, maps, frame=0)
    granted = list(alloc.assignments.values())
    assert len(granted) == len(set(granted)) == 6
    for vid, box in alloc.assignments.items():
        assert maps[vid].is_safe(box)


def test_allocation_avoids_hazards_and_holds():
    ego = state(1, x=52.0, vx=25.0)
    m = empty_map(ego)
    m.predicted[:, :] = True
    alloc = allocate([1], {1: m}, frame=0)
    assert 1 not in alloc.assignments
    assert alloc.holds[1] == BoxId(1, GEOM.slot_of(52.0))
    prev = Allocation(0, 25, {1: BoxId(1, 16)})
    assert allocate([1], {1: m}, prev, frame=0).holds[1] == BoxId(1, 16)
    m2 = empty_map(ego)
    assert allocate([1], {1: m2}, frame=0).assignments[1] == BoxId(1, 15)
    m2.now[1, 15] = True
    assert 1 in allocate([1], {1: m2}, frame=0).holds


def test_allocation_stale_map():
    ego = state(1)
    with pytest.raises(StaleMap):
        allocate([1], {1: empty_map(ego, frame=3)}, frame=4)


def test_build_hazard_map_uses_all_horizons():
    others = {"x": np.array([30.0]), "y": np.array([5.25]), "length": np.array([4.5]),
              "width": np.array([1.8])}
    pred = {5: np.array([[40.0, 5.25]]), 25: np.array([[60.0, 5.25]])}
    m = build_hazard_map(GEOM, 0, state(x=10.0), others, pred, 25)
    assert m.now[1, 5] and m.predicted[1, 7] and m.predicted[1, 11]
    assert not m.predicted[1, 9]
