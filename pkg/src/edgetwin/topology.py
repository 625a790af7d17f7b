"""Fog and camera arrangement along a linear road segment, with failure injection.

Fogs are numbered from 1. Fog ``i`` owns the section ``[(i-1)*span, i*span)``.
Primary camera ``i`` covers that section exactly. Secondary camera ``j``
(``1 <= j < n``) straddles the boundary between sections ``j`` and ``j+1``,
covering ``[(j-0.5)*span, (j+0.5)*span)``; the first and last secondaries are
stretched to the segment ends so the secondary layer alone covers the road.

Fog ``i`` receives primary ``i``, secondaries ``i-1`` and ``i`` and the
primaries of its two neighbours. A healthy fog may take over the nearer half of
a failed neighbour's section, or the whole of it when that neighbour sits at
the end of the segment.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from itertools import product
from typing import Iterable

import numpy as np

from .errors import BadParams

DEFAULT_RESOLUTION = 5.0
UNCOVERED = 0


@dataclass(frozen=True, order=True)
class Camera:
    """A camera is identified by its layer ("P" or "S") and its index."""

    kind: str
    index: int

    def __post_init__(self):
        if self.kind not in ("P", "S"):
            raise BadParams(f"camera kind must be 'P' or 'S', got {self.kind!r}")

    def __str__(self):
        return f"{self.kind}{self.index}"

    @classmethod
    def parse(cls, value) -> "Camera":
        if isinstance(value, Camera):
            return value
        text = str(value).strip().upper()
        if len(text) < 2 or text[0] not in "PS" or not text[1:].isdigit():
            raise BadParams(f"cannot parse camera id {value!r}; use e.g. 'P3' or 'S2'")
        return cls(text[0], int(text[1:]))


@dataclass(frozen=True)
class FogTopology:
    n_fogs: int
    fog_span: float
    failed_fogs: frozenset = field(default_factory=frozenset)
    failed_cams: frozenset = field(default_factory=frozenset)

    def __post_init__(self):
        if int(self.n_fogs) != self.n_fogs or self.n_fogs < 2:
            raise BadParams(f"n_fogs must be an integer >= 2, got {self.n_fogs}")
        if not self.fog_span > 0:
            raise BadParams(f"fog_span must be positive, got {self.fog_span}")
        object.__setattr__(self, "n_fogs", int(self.n_fogs))
        object.__setattr__(self, "fog_span", float(self.fog_span))
        fogs = frozenset(int(f) for f in self.failed_fogs)
        bad = sorted(f for f in fogs if not 1 <= f <= self.n_fogs)
        if bad:
            raise BadParams(f"fog ids {bad} outside 1..{self.n_fogs}")
        cams = frozenset(Camera.parse(c) for c in self.failed_cams)
        known = set(self.cameras)
        bad = sorted(str(c) for c in cams if c not in known)
        if bad:
            raise BadParams(f"unknown cameras {bad}")
        object.__setattr__(self, "failed_fogs", fogs)
        object.__setattr__(self, "failed_cams", cams)

    @property
    def length(self) -> float:
        return self.n_fogs * self.fog_span

    def section(self, fog: int) -> tuple[float, float]:
        return ((fog - 1) * self.fog_span, fog * self.fog_span)

    @property
    def primary_cams(self) -> dict:
        return {Camera("P", i): self.section(i) for i in range(1, self.n_fogs + 1)}

    @property
    def secondary_cams(self) -> dict:
        s, n = self.fog_span, self.n_fogs
        out = {}
        for j in range(1, n):
            lo = 0.0 if j == 1 else (j - 0.5) * s
            hi = self.length if j == n - 1 else (j + 0.5) * s
            out[Camera("S", j)] = (lo, hi)
        return out

    @property
    def cameras(self) -> dict:
        return {**self.primary_cams, **self.secondary_cams}

    def feeds(self, fog: int) -> list:
        """Cameras whose feeds reach ``fog``."""
        n = self.n_fogs
        out = [Camera("P", fog)]
        out += [Camera("S", j) for j in (fog - 1, fog) if 1 <= j < n]
        out += [Camera("P", j) for j in (fog - 1, fog + 1) if 1 <= j <= n]
        return out

    @property
    def links(self) -> dict:
        """Camera to the set of fogs receiving it."""
        out = {c: set() for c in self.cameras}
        for fog in range(1, self.n_fogs + 1):
            for cam in self.feeds(fog):
                out[cam].add(fog)
        return {c: frozenset(f) for c, f in out.items()}

    def reach(self, fog: int) -> tuple[float, float]:
        """Road interval a fog is able to serve when its neighbours fail."""
        s, n = self.fog_span, self.n_fogs
        lo = 0.0 if fog - 1 <= 1 else (fog - 1.5) * s
        hi = self.length if fog + 1 >= n else (fog + 0.5) * s
        return lo, hi

    def healthy_fogs(self) -> list:
        return [f for f in range(1, self.n_fogs + 1) if f not in self.failed_fogs]

    def with_failures(self, fogs: Iterable = (), cams: Iterable = ()) -> "FogTopology":
        return FogTopology(self.n_fogs, self.fog_span,
                           self.failed_fogs | frozenset(fogs),
                           self.failed_cams | frozenset(Camera.parse(c) for c in cams))

    def positions(self, resolution: float = DEFAULT_RESOLUTION) -> np.ndarray:
        """Box centres along the segment."""
        if not resolution > 0:
            raise BadParams(f"resolution must be positive, got {resolution}")
        return np.arange(resolution / 2.0, self.length, resolution)

    def to_dict(self) -> dict:
        return {
            "n_fogs": self.n_fogs,
            "fog_span": self.fog_span,
            "failed_fogs": sorted(self.failed_fogs),
            "failed_cams": [str(c) for c in sorted(self.failed_cams)],
        }


def build(n_fogs: int, fog_span: float) -> FogTopology:
    return FogTopology(n_fogs, fog_span)


def _inside(x, interval):
    lo, hi = interval
    return (x >= lo) & (x < hi)


def _distance(x, interval):
    lo, hi = interval
    return np.maximum(np.maximum(lo - x, x - hi), 0.0)


@dataclass(frozen=True)
class CoverageReport:
    positions: np.ndarray
    serving: np.ndarray  # fog id per position, 0 when uncovered
    topology: FogTopology

    @property
    def operational(self) -> bool:
        return bool(np.all(self.serving != UNCOVERED))

    @property
    def uncovered(self) -> np.ndarray:
        return self.positions[self.serving == UNCOVERED]

    def served_by(self, fog: int) -> np.ndarray:
        return self.positions[self.serving == fog]

    def to_dict(self) -> dict:
        # runs of equal serving fog keep the report readable
        runs = []
        start = 0
        for k in range(1, len(self.positions) + 1):
            if k == len(self.positions) or self.serving[k] != self.serving[start]:
                fog = int(self.serving[start])
                runs.append({
                    "from": float(self.positions[start]),
                    "to": float(self.positions[k - 1]),
                    "fog": fog if fog != UNCOVERED else None,
                })
                start = k
        return {
            **self.topology.to_dict(),
            "operational": self.operational,
            "uncovered_positions": len(self.uncovered),
            "serving": runs,
        }


def coverage(topo: FogTopology, resolution: float = DEFAULT_RESOLUTION) -> CoverageReport:
    """Assign each position to the nearest healthy fog able to see and serve it."""
    x = topo.positions(resolution)
    serving = np.full(len(x), UNCOVERED, dtype=np.int64)
    best = np.full(len(x), np.inf)
    for fog in topo.healthy_fogs():
        seen = np.zeros(len(x), dtype=bool)
        for cam in topo.feeds(fog):
            if cam not in topo.failed_cams:
                seen |= _inside(x, topo.cameras[cam])
        ok = seen & _inside(x, topo.reach(fog))
        d = _distance(x, topo.section(fog))
        # strict comparison keeps the lower fog id on ties
        take = ok & (d < best)
        serving[take] = fog
        best[take] = d[take]
    return CoverageReport(x, serving, topo)


def operational_after(topo: FogTopology, fog_failures=(), cam_failures=(),
                      resolution: float = DEFAULT_RESOLUTION) -> bool:
    return coverage(topo.with_failures(fog_failures, cam_failures), resolution).operational


def adjacent_failure(fogs: Iterable) -> bool:
    fogs = set(fogs)
    return any(f + 1 in fogs for f in fogs)


def camera_fault_cases(topo: FogTopology, fog: int,
                       resolution: float = DEFAULT_RESOLUTION) -> dict:
    """Whether ``fog``'s section stays covered when its own cameras fail.

    The "one secondary" case holds only if the section survives the loss of
    each of the fog's secondaries separately.
    """
    if fog in topo.failed_fogs or not 1 <= fog <= topo.n_fogs:
        raise BadParams(f"fog {fog} must be a healthy fog of the topology")
    secondaries = [Camera("S", j) for j in (fog - 1, fog) if 1 <= j < topo.n_fogs]

    def section_ok(cams):
        rep = coverage(topo.with_failures((), cams), resolution)
        inside = _inside(rep.positions, topo.section(fog))
        return bool(np.all(rep.serving[inside] != UNCOVERED))

    return {
        "primary": section_ok([Camera("P", fog)]),
        "one_secondary": all(section_ok([c]) for c in secondaries),
        "both_secondaries": section_ok(secondaries),
    }


def enumerate_fog_failures(topo: FogTopology, resolution: float = DEFAULT_RESOLUTION):
    """Yield ``(failed_fogs, operational)`` for every subset of fogs."""
    for mask in product((False, True), repeat=topo.n_fogs):
        failed = frozenset(i + 1 for i, m in enumerate(mask) if m)
        yield failed, operational_after(topo, failed, (), resolution)


def single_camera_sweep(topo: FogTopology, resolution: float = DEFAULT_RESOLUTION) -> dict:
    return {str(c): operational_after(topo, (), [c], resolution) for c in sorted(topo.cameras)}
