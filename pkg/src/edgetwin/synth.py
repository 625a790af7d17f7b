"""Deterministic synthetic highway traffic.

Longitudinal motion follows the Intelligent Driver Model with the constants
below, integrated with semi-implicit Euler (``v`` first, then ``x += v*dt``).
Vehicles are updated front to back; a follower never advances closer than
``MIN_GAP`` behind its leader's new position, which rules out rear-end
overlap even when the IDM braking limit is not enough.

Lane changes are scheduled per vehicle by exponential waiting times (a
Poisson process of rate ``lane_change_rate`` per second).  When a change
fires, a gap-acceptance test is applied in the target lane; if it passes,
the vehicle moves laterally along ``(1 - cos(pi*s)) / 2`` for
``LANE_CHANGE_SECONDS`` and counts as present in both lanes meanwhile.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from .errors import BadParams, InfeasibleDensity
from .trace import (
    DEFAULT_FPS,
    DEFAULT_LANE_WIDTH,
    Trace,
    VehicleClass,
    lane_from_y,
    normalize_origin,
)

IDM_ACCEL = 1.5          # m/s^2, maximum acceleration
IDM_DECEL = 2.0          # m/s^2, comfortable deceleration
IDM_JAM_GAP = 2.0        # m
IDM_HEADWAY = 1.2        # s
BRAKE_LIMIT = 6.0        # m/s^2, clip for the IDM output
MIN_GAP = 0.5            # m, hard bumper-to-bumper floor
LANE_CHANGE_SECONDS = 2.0
ACCEPT_HEADWAY = 1.5     # s, gap acceptance in the target lane
WARMUP_SECONDS = 20.0    # simulated before frame 0 so the start is not a transient

SPEED_LIMITS = (10.0, 45.0)


@dataclass(frozen=True)
class GeneratorConfig:
    vehicles: int = 30
    steps: int = 10_000
    lane_count: int = 3
    seed: int = 0
    lane_change_rate: float = 0.05
    speed_range: tuple[float, float] = (22.0, 36.0)
    road_length: float = 600.0
    truck_fraction: float = 0.1
    n_autonomous: int = 0
    fps: int = DEFAULT_FPS
    lane_width: float = DEFAULT_LANE_WIDTH

    def __post_init__(self):
        object.__setattr__(self, "speed_range", tuple(float(v) for v in self.speed_range))
        lo, hi = self.speed_range
        if self.vehicles < 0 or self.steps < 1 or self.lane_count < 1 or self.fps < 1:
            raise BadParams("vehicles >= 0, steps >= 1, lane_count >= 1 and fps >= 1 required")
        if not SPEED_LIMITS[0] <= lo <= hi <= SPEED_LIMITS[1]:
            raise BadParams(f"speed_range must lie within {SPEED_LIMITS}, got {self.speed_range}")
        if self.lane_change_rate < 0 or not 0 <= self.truck_fraction <= 1:
            raise BadParams("lane_change_rate >= 0 and truck_fraction in [0, 1] required")
        if not 0 <= self.n_autonomous <= self.vehicles:
            raise BadParams("n_autonomous must lie in [0, vehicles]")
        if self.road_length <= 0:
            raise BadParams("road_length must be positive")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["speed_range"] = list(self.speed_range)
        return d


def idm_acceleration(v, v0, gap=math.inf, dv=0.0):
    """IDM acceleration for speed ``v``, desired speed ``v0``, bumper gap and closing speed."""
    free = 1.0 - (v / v0) ** 4
    if math.isinf(gap):
        return IDM_ACCEL * free
    s_star = IDM_JAM_GAP + max(0.0, v * IDM_HEADWAY + v * dv / (2 * math.sqrt(IDM_ACCEL * IDM_DECEL)))
    return IDM_ACCEL * (free - (s_star / max(gap, 1e-6)) ** 2)


def lane_change_profile(s, dy, duration):
    """Lateral offset, velocity and acceleration at progress ``s`` in [0, 1]."""
    y = dy * (1 - math.cos(math.pi * s)) / 2
    vy = dy * math.pi / (2 * duration) * math.sin(math.pi * s)
    ay = dy * math.pi ** 2 / (2 * duration ** 2) * math.cos(math.pi * s)
    return y, vy, ay


def _place(rng, cfg, lengths, lanes):
    """Rear-to-front positions per lane with random slack; raises if they cannot fit."""
    x = np.zeros(len(lengths))
    for lane in range(cfg.lane_count):
        idx = np.flatnonzero(lanes == lane)
        if not len(idx):
            continue
        idx = rng.permutation(idx)
        need = float(np.sum(lengths[idx] + MIN_GAP))
        slack = cfg.road_length - need
        if slack < 0:
            raise InfeasibleDensity(
                f"lane {lane}: {len(idx)} vehicles need {need:.1f} m, road_length is {cfg.road_length}"
            )
        gaps = slack * rng.dirichlet(np.ones(len(idx) + 1))[:-1]
        pos = 0.0
        for k, i in enumerate(idx):
            pos += gaps[k]
            x[i] = pos + lengths[i] / 2
            pos += lengths[i] + MIN_GAP
    return x


def synth_trace(cfg: GeneratorConfig | None = None, **overrides) -> Trace:
    """Generate a trace; identical configs always give identical traces."""
    if cfg is None:
        cfg = GeneratorConfig(**overrides)
    elif overrides:
        cfg = GeneratorConfig(**{**cfg.to_dict(), **overrides})
    n, steps, L = cfg.vehicles, cfg.steps, cfg.lane_count
    w = cfg.lane_width
    dt = 1.0 / cfg.fps
    rng = np.random.default_rng(cfg.seed)

    trucks = rng.random(n) < cfg.truck_fraction
    klass = np.where(trucks, int(VehicleClass.TRUCK), int(VehicleClass.CAR)).astype(np.int64)
    length = np.where(trucks, rng.uniform(10.0, 14.0, n), rng.uniform(4.2, 5.0, n))
    width = np.where(trucks, 2.5, rng.uniform(1.7, 2.0, n))
    lo, hi = cfg.speed_range
    v0 = rng.uniform(lo, hi, n)
    v0 = np.where(trucks, np.minimum(v0, lo + 0.3 * (hi - lo)), v0)
    lane_from = (np.arange(n) % L).astype(np.int64)
    x = _place(rng, cfg, length, lane_from)
    cars = np.flatnonzero(~trucks)
    n_av = min(cfg.n_autonomous, len(cars))
    autonomous = np.zeros(n, dtype=bool)
    autonomous[rng.choice(cars, n_av, replace=False)] = True

    # Start each vehicle no faster than its leader and than its gap supports.
    v = v0.copy()
    for lane in range(L):
        idx = np.flatnonzero(lane_from == lane)
        idx = idx[np.argsort(-x[idx])]
        for b, a in zip(idx[:-1], idx[1:]):
            gap = x[b] - x[a] - (length[a] + length[b]) / 2
            v[a] = min(v[a], v[b], max(0.0, (gap - IDM_JAM_GAP) / IDM_HEADWAY))
    lane_to = lane_from.copy()
    lc_start = np.full(n, -1, dtype=np.int64)
    y = (lane_from + 0.5) * w
    vy = np.zeros(n)
    ay = np.zeros(n)
    acc = np.zeros(n)
    if cfg.lane_change_rate > 0:
        next_lc = rng.exponential(cfg.fps / cfg.lane_change_rate, n)
    else:
        next_lc = np.full(n, np.inf)
    lc_frames = int(round(LANE_CHANGE_SECONDS * cfg.fps))

    out = {k: np.empty((steps, n)) for k in ("x", "y", "vx", "vy", "ax", "ay")}

    def record(t):
        out["x"][t], out["y"][t] = x, y
        out["vx"][t], out["vy"][t] = v, vy
        out["ax"][t], out["ay"][t] = acc, ay

    warm = int(round(WARMUP_SECONDS * cfg.fps)) if n > 1 else 0
    if warm == 0:
        record(0)
    for t in range(warm + steps - 1):
        for i in range(n):
            if next_lc[i] > t or lc_start[i] >= 0:
                continue
            next_lc[i] = t + rng.exponential(cfg.fps / cfg.lane_change_rate)
            options = [lane for lane in (lane_from[i] - 1, lane_from[i] + 1) if 0 <= lane < L]
            target = options[rng.integers(len(options))]
            if _gap_accepted(i, target, x, v, length, lane_from, lane_to):
                lane_to[i] = target
                lc_start[i] = t

        order = np.lexsort((np.arange(n), -x))
        last_in_lane = [-1] * L
        x_new = x.copy()
        for i in order:
            lanes_i = {lane_from[i], lane_to[i]}
            leader = -1
            for lane in lanes_i:
                j = last_in_lane[lane]
                if j >= 0 and (leader < 0 or x[j] < x[leader]):
                    leader = j
            for lane in lanes_i:
                last_in_lane[lane] = i
            if leader < 0:
                a = idm_acceleration(v[i], v0[i])
            else:
                gap = x[leader] - x[i] - (length[leader] + length[i]) / 2
                a = idm_acceleration(v[i], v0[i], gap, v[i] - v[leader])
            a = min(max(a, -BRAKE_LIMIT), IDM_ACCEL)
            vn = max(0.0, v[i] + a * dt)
            xn = x[i] + vn * dt
            if leader >= 0:
                limit = x_new[leader] - (length[leader] + length[i]) / 2 - MIN_GAP
                if xn > limit:
                    xn = max(limit, x[i])
                    vn = (xn - x[i]) / dt
            acc[i] = (vn - v[i]) / dt if vn != v[i] + a * dt else a
            v[i] = vn
            x_new[i] = xn
        x = x_new

        for i in range(n):
            if lc_start[i] < 0:
                continue
            k = t + 1 - lc_start[i]
            dy = (lane_to[i] - lane_from[i]) * w
            if k >= lc_frames:
                lane_from[i] = lane_to[i]
                lc_start[i] = -1
                y[i] = (lane_from[i] + 0.5) * w
                vy[i] = ay[i] = 0.0
            else:
                off, vy[i], ay[i] = lane_change_profile(k / lc_frames, dy, LANE_CHANGE_SECONDS)
                y[i] = (lane_from[i] + 0.5) * w + off
        if t + 1 >= warm:
            record(t + 1 - warm)

    frames = np.repeat(np.arange(steps, dtype=np.int64), n)
    cols = {
        "frame": frames,
        "vehicle_id": np.tile(np.arange(1, n + 1, dtype=np.int64), steps),
        "length": np.tile(length, steps),
        "width": np.tile(width, steps),
        "klass": np.tile(klass, steps),
        "autonomous": np.tile(autonomous, steps),
    }
    for k, arr in out.items():
        cols[k] = arr.reshape(-1)
    cols["lane"] = lane_from_y(cols["y"], w)
    cols = normalize_origin(cols)
    return Trace(cols, fps=cfg.fps, lane_width=w, lane_count=L)


def _gap_accepted(i, target, x, v, length, lane_from, lane_to):
    ahead = behind = None
    for j in range(len(x)):
        if j == i or target not in (lane_from[j], lane_to[j]):
            continue
        if x[j] >= x[i]:
            if ahead is None or x[j] < x[ahead]:
                ahead = j
        elif behind is None or x[j] > x[behind]:
            behind = j
    if ahead is not None:
        gap = x[ahead] - x[i] - (length[ahead] + length[i]) / 2
        if gap < IDM_JAM_GAP + v[i] * ACCEPT_HEADWAY:
            return False
    if behind is not None:
        gap = x[i] - x[behind] - (length[behind] + length[i]) / 2
        if gap < IDM_JAM_GAP + v[behind] * ACCEPT_HEADWAY:
            return False
    return True


# -- scripted traces ------------------------------------------------------------

def _build(rows, fps, lane_width, lane_count):
    cols = {k: np.array([r[k] for r in rows]) for k in rows[0]} if rows else {
        k: np.empty(0) for k in ("frame", "vehicle_id", "x", "y", "vx", "vy", "ax", "ay",
                                 "lane", "length", "width")
    }
    cols["lane"] = lane_from_y(cols["y"], lane_width)
    return Trace(cols, fps=fps, lane_width=lane_width, lane_count=lane_count)


def constant_velocity_trace(speeds, steps, *, lanes=None, x0=None, lane_count=3,
                            fps=DEFAULT_FPS, lane_width=DEFAULT_LANE_WIDTH,
                            length=4.5, width=1.8, autonomous=()) -> Trace:
    """Vehicles ``1..n`` cruising at fixed speeds along their lane centers."""
    n = len(speeds)
    lanes = list(lanes) if lanes is not None else [i % lane_count for i in range(n)]
    x0 = list(x0) if x0 is not None else [10.0 + 30.0 * (i // lane_count) for i in range(n)]
    rows = []
    for t in range(steps):
        for i in range(n):
            rows.append(dict(
                frame=t, vehicle_id=i + 1, x=x0[i] + speeds[i] * t / fps,
                y=(lanes[i] + 0.5) * lane_width, vx=float(speeds[i]), vy=0.0, ax=0.0, ay=0.0,
                lane=lanes[i], length=length, width=width, autonomous=(i + 1) in autonomous,
            ))
    return _build(rows, fps, lane_width, lane_count)


def lane_change_scenario(*, speed=28.0, start_frame=60, steps=200, from_lane=1, to_lane=0,
                         lead=20.0, fps=DEFAULT_FPS, lane_width=DEFAULT_LANE_WIDTH):
    """Ego (id 1) cruises in ``to_lane``; vehicle 2, ``lead`` m ahead in
    ``from_lane``, changes into the ego lane starting at ``start_frame``.
    A third vehicle cruises two lanes away when that lane exists.

    Returns ``(trace, changer_id)``.
    """
    lane_count = max(from_lane, to_lane) + 2
    lc_frames = int(round(LANE_CHANGE_SECONDS * fps))
    dy = (to_lane - from_lane) * lane_width
    rows = []
    for t in range(steps):
        x_ego = 50.0 + speed * t / fps
        rows.append(dict(frame=t, vehicle_id=1, x=x_ego, y=(to_lane + 0.5) * lane_width,
                         vx=speed, vy=0.0, ax=0.0, ay=0.0, lane=to_lane, length=4.5, width=1.8))
        k = t - start_frame
        if k <= 0:
            off = vy = ay = 0.0
        elif k >= lc_frames:
            off, vy, ay = dy, 0.0, 0.0
        else:
            off, vy, ay = lane_change_profile(k / lc_frames, dy, LANE_CHANGE_SECONDS)
        rows.append(dict(frame=t, vehicle_id=2, x=x_ego + lead, y=(from_lane + 0.5) * lane_width + off,
                         vx=speed, vy=vy, ax=0.0, ay=ay, lane=from_lane, length=4.5, width=1.8))
        other = from_lane + 1 if from_lane + 1 != to_lane else from_lane - 1
        if 0 <= other < lane_count and other not in (from_lane, to_lane):
            rows.append(dict(frame=t, vehicle_id=3, x=x_ego - 15.0 + 0.0 * t,
                             y=(other + 0.5) * lane_width, vx=speed, vy=0.0, ax=0.0, ay=0.0,
                             lane=other, length=4.5, width=1.8))
    return _build(rows, fps, lane_width, lane_count), 2
