"""World data model: vehicle states, traces, road geometry and trace I/O."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import IntEnum
from pathlib import Path
from typing import Iterator, Mapping

import numpy as np
import pandas as pd

from . import _kernels
from .errors import (
    BadParams,
    DataError,
    EmptyTrace,
    FrameOutOfRange,
    MissingColumn,
    NonContiguousVehicle,
    NonMonotoneFrames,
    UnknownVehicle,
)

DEFAULT_FPS = 25
DEFAULT_LANE_WIDTH = 3.5
DEFAULT_BOX_LENGTH = 5.0

COLUMNS = (
    "frame", "vehicle_id", "x", "y", "vx", "vy", "ax", "ay",
    "lane", "length", "width", "klass", "autonomous",
)
_INT_COLUMNS = {"frame", "vehicle_id", "lane", "klass"}


class VehicleClass(IntEnum):
    CAR = 0
    TRUCK = 1

    @classmethod
    def parse(cls, value) -> "VehicleClass":
        if isinstance(value, str):
            return cls[value.strip().upper()]
        return cls(int(value))


@dataclass(frozen=True, slots=True)
class VehicleState:
    """Kinematics of one vehicle at one frame (SI units, road coordinates)."""

    vehicle_id: int
    frame: int
    x: float
    y: float
    vx: float = 0.0
    vy: float = 0.0
    ax: float = 0.0
    ay: float = 0.0
    lane: int = 0
    length: float = 4.5
    width: float = 1.8
    klass: VehicleClass = VehicleClass.CAR
    autonomous: bool = False

    def __post_init__(self):
        if not (self.length > 0 and self.width > 0):
            raise DataError(f"vehicle {self.vehicle_id}: footprint must be positive")
        if self.frame < 0:
            raise DataError(f"vehicle {self.vehicle_id}: negative frame {self.frame}")

    @property
    def position(self) -> tuple[float, float]:
        return (self.x, self.y)


@dataclass(frozen=True)
class RoadGeometry:
    """Straight road segment split into lanes and fixed-length boxes.

    Lane 0 is the leftmost lane and occupies ``y`` in ``[0, lane_width)``.
    With ``has_shoulder`` an extra band with index ``lane_count`` follows the
    last lane.
    """

    lane_count: int
    lane_width: float = DEFAULT_LANE_WIDTH
    box_length: float = DEFAULT_BOX_LENGTH
    segment_start: float = 0.0
    segment_end: float = 15.0
    has_shoulder: bool = False

    def __post_init__(self):
        if self.lane_count < 1 or self.lane_width <= 0 or self.box_length <= 0:
            raise BadParams("lane_count >= 1, lane_width > 0 and box_length > 0 required")
        span = self.segment_end - self.segment_start
        slots = span / self.box_length
        if span <= 0 or abs(slots - round(slots)) > 1e-9:
            raise BadParams(
                f"segment length {span} is not a positive multiple of box_length {self.box_length}"
            )

    @classmethod
    def padded(cls, lane_count, start, end, **kwargs) -> "RoadGeometry":
        """Geometry covering ``[start, end]``, end padded up to a whole box."""
        box = kwargs.get("box_length", DEFAULT_BOX_LENGTH)
        n = max(1, math.ceil((end - start) / box - 1e-9))
        return cls(lane_count, segment_start=start, segment_end=start + n * box, **kwargs)

    @classmethod
    def for_trace(cls, trace: "Trace", **kwargs) -> "RoadGeometry":
        kwargs.setdefault("lane_width", trace.lane_width)
        return cls.padded(trace.lane_count, 0.0, trace.extent, **kwargs)

    @property
    def n_slots(self) -> int:
        return int(round((self.segment_end - self.segment_start) / self.box_length))

    @property
    def n_bands(self) -> int:
        return self.lane_count + int(self.has_shoulder)

    def lane_of(self, y: float) -> int:
        return int(math.floor(y / self.lane_width))

    def lane_center(self, lane: int) -> float:
        return (lane + 0.5) * self.lane_width

    def slot_of(self, x: float) -> int:
        return int(math.floor((x - self.segment_start) / self.box_length))

    def slot_center(self, slot: int) -> float:
        return self.segment_start + (slot + 0.5) * self.box_length

    def boxes(self) -> Iterator["BoxId"]:
        for lane in range(self.n_bands):
            for slot in range(self.n_slots):
                yield BoxId(lane, slot)


@dataclass(frozen=True, order=True, slots=True)
class BoxId:
    lane: int
    slot: int

    def to_list(self) -> list[int]:
        return [self.lane, self.slot]


@dataclass(frozen=True, slots=True)
class Neighbors:
    """The six surrounding slots of one vehicle; ``None`` marks an absent slot."""

    front_same: VehicleState | None = None
    rear_same: VehicleState | None = None
    front_left: VehicleState | None = None
    rear_left: VehicleState | None = None
    front_right: VehicleState | None = None
    rear_right: VehicleState | None = None

    def as_tuple(self) -> tuple:
        return (
            self.front_same, self.rear_same, self.front_left,
            self.rear_left, self.front_right, self.rear_right,
        )


def lane_from_y(y, lane_width=DEFAULT_LANE_WIDTH):
    return np.floor(np.asarray(y, dtype=float) / lane_width).astype(np.int64)


class Trace:
    """Immutable columnar store of vehicle states, rows sorted by (frame, id).

    Construction validates the invariants: unique (frame, vehicle) rows,
    gap-free frame coverage per vehicle, positive footprints, non-negative
    frames and a lane index consistent with the lateral position.
    """

    def __init__(self, columns: Mapping[str, np.ndarray], *, fps: int = DEFAULT_FPS,
                 extent: float | None = None, lane_width: float = DEFAULT_LANE_WIDTH,
                 lane_count: int | None = None):
        n = len(np.asarray(columns["frame"]))
        cols = {}
        for name in COLUMNS:
            if name in columns:
                arr = np.asarray(columns[name])
            elif name == "klass":
                arr = np.zeros(n, dtype=np.int64)
            elif name == "autonomous":
                arr = np.zeros(n, dtype=bool)
            else:
                raise MissingColumn(name)
            if name in _INT_COLUMNS:
                arr = arr.astype(np.int64)
            elif name == "autonomous":
                arr = arr.astype(bool)
            else:
                arr = arr.astype(np.float64)
            if arr.shape != (n,):
                raise DataError(f"column {name} has shape {arr.shape}, expected ({n},)")
            cols[name] = arr
        order = np.lexsort((cols["vehicle_id"], cols["frame"]))
        for name in COLUMNS:
            a = cols[name][order]
            a.flags.writeable = False
            cols[name] = a
        self._cols = cols
        self.fps = int(fps)
        self.lane_width = float(lane_width)
        self._build_index()
        self._validate()
        if lane_count is None:
            lane_count = int(cols["lane"].max()) + 1 if n else 1
        self.lane_count = int(lane_count)
        if extent is None:
            extent = _padded_extent(cols["x"], cols["length"])
        self.extent = float(extent)

    # -- construction helpers -------------------------------------------------
    def _build_index(self):
        c = self._cols
        self._frames, starts = np.unique(c["frame"], return_index=True)
        self._frame_start = np.append(starts, len(c["frame"])).astype(np.int64)
        vorder = np.lexsort((c["frame"], c["vehicle_id"]))
        self._vorder = vorder
        self._vorder.flags.writeable = False
        vids_sorted = c["vehicle_id"][vorder]
        self._vehicle_ids, vstart = np.unique(vids_sorted, return_index=True)
        self._veh_start = np.append(vstart, len(vorder)).astype(np.int64)
        self._veh_first = c["frame"][vorder[vstart]] if len(vorder) else np.empty(0, np.int64)

    def _validate(self):
        c = self._cols
        if not len(c["frame"]):
            return
        if (c["frame"] < 0).any():
            raise DataError("negative frame index")
        if not ((c["length"] > 0).all() and (c["width"] > 0).all()):
            raise DataError("vehicle footprints must be positive")
        fv = c["frame"][self._vorder]
        same = np.diff(c["vehicle_id"][self._vorder]) == 0
        step = np.diff(fv)
        if (same & (step <= 0)).any():
            raise NonMonotoneFrames("duplicate (frame, vehicle) rows")
        bad = same & (step != 1)
        if bad.any():
            raise NonContiguousVehicle(int(c["vehicle_id"][self._vorder][1:][bad][0]))
        expected = lane_from_y(c["y"], self.lane_width)
        if (expected != c["lane"]).any():
            i = int(np.flatnonzero(expected != c["lane"])[0])
            raise DataError(
                f"vehicle {c['vehicle_id'][i]} frame {c['frame'][i]}: lane {c['lane'][i]} "
                f"does not contain y={c['y'][i]}"
            )

    # -- basic accessors -------------------------------------------------------
    def __len__(self) -> int:
        return len(self._cols["frame"])

    def __getitem__(self, name: str) -> np.ndarray:
        return self._cols[name]

    @property
    def columns(self) -> dict[str, np.ndarray]:
        return dict(self._cols)

    @property
    def frame_indices(self) -> np.ndarray:
        return self._frames

    @property
    def vehicle_ids(self) -> np.ndarray:
        return self._vehicle_ids

    @property
    def n_vehicles(self) -> int:
        return len(self._vehicle_ids)

    @property
    def first_frame(self) -> int:
        return int(self._frames[0])

    @property
    def last_frame(self) -> int:
        return int(self._frames[-1])

    @property
    def frames(self) -> list[tuple[VehicleState, ...]]:
        return [states for _, states in self.iter_frames()]

    @property
    def frame_start(self) -> np.ndarray:
        return self._frame_start

    @property
    def vehicle_order(self) -> np.ndarray:
        """Row indices sorted by (vehicle, frame)."""
        return self._vorder

    def __eq__(self, other) -> bool:
        if other is self:
            return True
        if not isinstance(other, Trace):
            return NotImplemented
        return (
            self.fps == other.fps
            and self.extent == other.extent
            and self.lane_width == other.lane_width
            and self.lane_count == other.lane_count
            and all(np.array_equal(self._cols[k], other._cols[k]) for k in COLUMNS)
        )

    __hash__ = object.__hash__

    def __repr__(self) -> str:
        return (f"Trace(rows={len(self)}, vehicles={self.n_vehicles}, "
                f"frames={len(self._frames)}, extent={self.extent})")

    # -- lookups ---------------------------------------------------------------
    def state_at_row(self, i: int) -> VehicleState:
        c = self._cols
        return VehicleState(
            int(c["vehicle_id"][i]), int(c["frame"][i]),
            float(c["x"][i]), float(c["y"][i]), float(c["vx"][i]), float(c["vy"][i]),
            float(c["ax"][i]), float(c["ay"][i]), int(c["lane"][i]),
            float(c["length"][i]), float(c["width"][i]),
            VehicleClass(int(c["klass"][i])), bool(c["autonomous"][i]),
        )

    def frame_rows(self, frame: int) -> range:
        b = np.searchsorted(self._frames, frame)
        if b == len(self._frames) or self._frames[b] != frame:
            return range(0)
        return range(int(self._frame_start[b]), int(self._frame_start[b + 1]))

    def frame_states(self, frame: int) -> tuple[VehicleState, ...]:
        return tuple(self.state_at_row(i) for i in self.frame_rows(frame))

    def iter_frames(self) -> Iterator[tuple[int, tuple[VehicleState, ...]]]:
        for f in self._frames:
            yield int(f), self.frame_states(int(f))

    def vehicle_rows(self, vehicle_id: int) -> np.ndarray:
        k = np.searchsorted(self._vehicle_ids, vehicle_id)
        if k == len(self._vehicle_ids) or self._vehicle_ids[k] != vehicle_id:
            raise UnknownVehicle(vehicle_id)
        return self._vorder[self._veh_start[k]:self._veh_start[k + 1]]

    def lifetime(self, vehicle_id: int) -> tuple[int, int]:
        rows = self.vehicle_rows(vehicle_id)
        return int(self._cols["frame"][rows[0]]), int(self._cols["frame"][rows[-1]])

    def rows_for(self, vehicle_ids, frames) -> np.ndarray:
        """Row index of each (vehicle, frame) pair, ``-1`` where absent."""
        vids = np.atleast_1d(np.asarray(vehicle_ids, dtype=np.int64))
        frs = np.atleast_1d(np.asarray(frames, dtype=np.int64))
        vids, frs = np.broadcast_arrays(vids, frs)
        out = np.full(vids.shape, -1, dtype=np.int64)
        if not len(self._vehicle_ids):
            return out
        k = np.searchsorted(self._vehicle_ids, vids)
        k_ok = k < len(self._vehicle_ids)
        k_ok[k_ok] &= self._vehicle_ids[k[k_ok]] == vids[k_ok]
        kk = np.where(k_ok, k, 0)
        offset = frs - self._veh_first[kk]
        life = self._veh_start[kk + 1] - self._veh_start[kk]
        ok = k_ok & (offset >= 0) & (offset < life)
        out[ok] = self._vorder[self._veh_start[kk[ok]] + offset[ok]]
        return out

    def row(self, vehicle_id: int, frame: int) -> int:
        if frame < 0 or not len(self._frames) or frame > self._frames[-1]:
            raise FrameOutOfRange(f"frame {frame} outside trace")
        self.vehicle_rows(vehicle_id)
        r = int(self.rows_for(vehicle_id, frame)[0])
        if r < 0:
            raise UnknownVehicle(vehicle_id, frame)
        return r

    def state(self, vehicle_id: int, frame: int) -> VehicleState:
        return self.state_at_row(self.row(vehicle_id, frame))

    def vehicle_position_in_life(self) -> tuple[np.ndarray, np.ndarray]:
        """Per row: frames since the vehicle appeared, and frames until it leaves."""
        cached = getattr(self, "_life_cache", None)
        if cached is None:
            c = self._cols
            k = np.searchsorted(self._vehicle_ids, c["vehicle_id"])
            before = c["frame"] - self._veh_first[k]
            after = self._veh_start[k + 1] - self._veh_start[k] - 1 - before
            before.flags.writeable = False
            after.flags.writeable = False
            cached = self._life_cache = (before, after)
        return cached

    # -- derived traces --------------------------------------------------------
    def _derive(self, mask=None, **overrides) -> "Trace":
        cols = {k: (v if mask is None else v[mask]) for k, v in self._cols.items()}
        cols.update({k: v for k, v in overrides.items() if k in COLUMNS})
        return Trace(cols, fps=self.fps, extent=overrides.get("extent", self.extent),
                     lane_width=self.lane_width, lane_count=self.lane_count)

    def subset(self, vehicle_ids) -> "Trace":
        keep = np.isin(self._cols["vehicle_id"], np.asarray(list(vehicle_ids), dtype=np.int64))
        return self._derive(keep)

    def until(self, last_frame: int) -> "Trace":
        """The trace as known at ``last_frame`` (nothing later)."""
        return self._derive(self._cols["frame"] <= last_frame)

    def shifted(self, dx: float) -> "Trace":
        return self._derive(x=self._cols["x"] + dx, extent=self.extent + dx)

    # -- neighbor structure ----------------------------------------------------
    def neighbor_table(self) -> np.ndarray:
        """``(rows, 6)`` neighbor row indices for every row (cached)."""
        tab = getattr(self, "_neighbor_table", None)
        if tab is None:
            c = self._cols
            tab = _kernels.neighbor_rows(self._frame_start, c["x"], c["lane"], c["vehicle_id"])
            tab.flags.writeable = False
            self._neighbor_table = tab
        return tab


def _padded_extent(x, length, box_length=DEFAULT_BOX_LENGTH) -> float:
    if not len(x):
        return box_length
    front = float(np.max(x + length / 2))
    return max(1, math.ceil(front / box_length - 1e-9)) * box_length


def normalize_origin(cols: dict, box_length=DEFAULT_BOX_LENGTH) -> dict:
    """Translate x by a whole number of boxes so the rearmost footprint starts in [0, box)."""
    if not len(cols["x"]):
        return cols
    rear = float(np.min(cols["x"] - cols["length"] / 2))
    offset = math.floor((rear + 1e-9) / box_length) * box_length
    if offset != 0:
        cols = dict(cols)
        cols["x"] = cols["x"] - offset
    return cols


def neighbors(trace: Trace, vehicle_id: int, frame: int) -> Neighbors:
    """Nearest vehicle ahead of and behind ``vehicle_id`` in its own and adjacent lanes."""
    ego_row = trace.row(vehicle_id, frame)
    tab = trace.neighbor_table()[ego_row]
    return Neighbors(*(trace.state_at_row(int(r)) if r >= 0 else None for r in tab))


def split_train_test(trace: Trace, ratio: float = 0.75, seed: int = 0):
    """Partition vehicle ids into (train, test) sets, whole vehicles per side."""
    if not 0 < ratio < 1:
        raise BadParams(f"ratio must lie in (0, 1), got {ratio}")
    ids = trace.vehicle_ids
    if not len(ids):
        raise EmptyTrace("cannot split an empty trace")
    perm = np.random.default_rng(seed).permutation(ids)
    n_train = int(math.floor(ratio * len(ids) + 0.5))
    train = frozenset(int(v) for v in perm[:n_train])
    test = frozenset(int(v) for v in perm[n_train:])
    return train, test


# -- file formats ---------------------------------------------------------------

_CANONICAL_NAMES = {
    "frame": "frame", "vehicle_id": "id", "x": "x", "y": "y",
    "vx": "xVelocity", "vy": "yVelocity", "ax": "xAcceleration", "ay": "yAcceleration",
    "lane": "laneId", "length": "width", "width": "height",
    "klass": "class", "autonomous": "autonomous",
}
_OPTIONAL = ("klass", "autonomous")


@dataclass(frozen=True)
class TraceSchema:
    """How to read a comma-separated trace file.

    ``columns`` maps internal field names to header names; the defaults are
    the highD names (highD calls the longitudinal extent ``width`` and the
    lateral extent ``height``).  ``anchor="corner"`` means x/y give the
    upper-left bounding-box corner, as in raw highD tracks.  ``flip_y``
    negates the lateral axis (image coordinates point down).  With
    ``derive_lane`` the lane index is recomputed from y after the lateral
    origin is moved to the leftmost footprint edge, instead of being read.
    ``segment`` restricts the data to footprints fully inside ``[start, end]``.
    """

    columns: Mapping[str, str] = field(default_factory=lambda: dict(_CANONICAL_NAMES))
    anchor: str = "center"
    flip_y: bool = False
    derive_lane: bool = False
    forward_only: bool = False
    segment: tuple[float, float] | None = None

    @classmethod
    def highd(cls, **kwargs) -> "TraceSchema":
        kwargs.setdefault("anchor", "corner")
        kwargs.setdefault("derive_lane", True)
        kwargs.setdefault("forward_only", True)
        return cls(**kwargs)

    @classmethod
    def from_mapping(cls, m: Mapping) -> "TraceSchema":
        m = dict(m)
        cols = dict(_CANONICAL_NAMES)
        cols.update(m.pop("columns", {}))
        if "segment" in m and m["segment"] is not None:
            m["segment"] = tuple(m["segment"])
        return cls(columns=cols, **m)


def parse_trace(path, schema: TraceSchema | Mapping | None = None, *,
                fps: int = DEFAULT_FPS, lane_width: float = DEFAULT_LANE_WIDTH,
                box_length: float = DEFAULT_BOX_LENGTH) -> Trace:
    """Read a header-first CSV trace and return a validated, origin-normalized Trace."""
    if schema is None:
        schema = TraceSchema()
    elif not isinstance(schema, TraceSchema):
        schema = TraceSchema.from_mapping(schema)
    df = pd.read_csv(path, skipinitialspace=True, float_precision="round_trip")
    names = schema.columns
    for key in COLUMNS:
        if key not in _OPTIONAL and names[key] not in df.columns:
            raise MissingColumn(names[key])

    vid = df[names["vehicle_id"]].to_numpy(np.int64)
    frame = df[names["frame"]].to_numpy(np.int64)
    _check_file_order(vid, frame)

    cols = {k: df[names[k]].to_numpy() for k in COLUMNS if names.get(k) in df.columns}
    cols["klass"] = (
        np.array([VehicleClass.parse(v) for v in cols["klass"]], dtype=np.int64)
        if "klass" in cols else np.zeros(len(df), dtype=np.int64)
    )
    for k in ("x", "y", "vx", "vy", "ax", "ay", "length", "width"):
        cols[k] = cols[k].astype(np.float64)
    if schema.anchor == "corner":
        cols["x"] = cols["x"] + cols["length"] / 2
        cols["y"] = cols["y"] + cols["width"] / 2
    elif schema.anchor != "center":
        raise BadParams(f"unknown anchor {schema.anchor!r}")
    if schema.flip_y:
        cols["y"], cols["vy"], cols["ay"] = -cols["y"], -cols["vy"], -cols["ay"]
    if schema.forward_only:
        fwd = _vehicle_mean(cols["vehicle_id"], cols["vx"]) > 0
        cols = {k: v[fwd] for k, v in cols.items()}
    if schema.derive_lane and len(cols["y"]):
        cols["y"] = cols["y"] - float(np.min(cols["y"] - cols["width"] / 2))
        cols["lane"] = lane_from_y(cols["y"], lane_width)

    if schema.segment is not None:
        start, end = schema.segment
        inside = (cols["x"] - cols["length"] / 2 >= start) & (cols["x"] + cols["length"] / 2 <= end)
        cols = {k: v[inside] for k, v in cols.items()}
        cols["x"] = cols["x"] - start
    else:
        cols = normalize_origin(cols, box_length)
    extent = _padded_extent(cols["x"], cols["length"], box_length)
    return Trace(cols, fps=fps, extent=extent, lane_width=lane_width)


def _check_file_order(vid, frame):
    if not len(vid):
        return
    order = np.argsort(vid, kind="stable")
    v, f = vid[order], frame[order]
    same = np.diff(v) == 0
    step = np.diff(f)
    if (same & (step <= 0)).any():
        raise NonMonotoneFrames("frames of a vehicle must be strictly increasing in file order")
    gap = same & (step != 1)
    if gap.any():
        raise NonContiguousVehicle(int(v[1:][gap][0]))


def _vehicle_mean(vid, values):
    uniq, inv = np.unique(vid, return_inverse=True)
    sums = np.bincount(inv, weights=values, minlength=len(uniq))
    counts = np.bincount(inv, minlength=len(uniq))
    return (sums / counts)[inv]


def write_trace(trace: Trace, path) -> Path:
    """Write the canonical CSV form (center anchor, road coordinates)."""
    path = Path(path)
    data = {}
    for key in COLUMNS:
        arr = trace[key]
        if key == "klass":
            arr = np.array([VehicleClass(int(k)).name.capitalize() for k in arr], dtype=object)
        elif key == "autonomous":
            arr = arr.astype(np.int64)
        data[_CANONICAL_NAMES[key]] = arr
    pd.DataFrame(data).to_csv(path, index=False, lineterminator="\n")
    return path
