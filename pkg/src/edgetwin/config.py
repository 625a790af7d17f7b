"""Run configuration: nested dataclasses loaded from JSON with ``--set`` overrides.

Every field has a default, so an empty JSON object is a valid configuration.
Unknown keys are rejected with the dotted path of the offending key.

All randomness flows from the top-level ``seed``.  Named sub-seeds
(``generator``, ``split``, ``learner``, ``transfer``) are derived from it and
can be pinned individually under ``seeds``.
"""
import dataclasses
import json
import typing
import zlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional

import numpy as np

from .errors import ConfigError

SEED_NAMES = ("generator", "split", "learner", "transfer")


@dataclass
class GeneratorSection:
    """Synthetic traffic used when ``trace.path`` is not given."""

    vehicles: int = 30
    steps: int = 10_000
    lane_count: int = 3
    lane_change_rate: float = 0.05   # lane-change attempts per vehicle per second
    speed_range: list = field(default_factory=lambda: [22.0, 36.0])  # desired speeds, m/s
    road_length: float = 600.0       # initial placement span, m
    truck_fraction: float = 0.1
    n_autonomous: int = 5
    fps: int = 25
    lane_width: float = 3.5


@dataclass
class TraceSection:
    path: Optional[str] = None       # CSV trace; synthetic generation when null
    schema: Optional[dict] = None    # column mapping and options, see TraceSchema
    box_length: float = 5.0


@dataclass
class FeatureSection:
    history: int = 10                # frames of history per sample
    split_ratio: float = 0.75        # fraction of vehicles used for training
    train_stride: int = 10           # keep training frames with frame % stride == 0
    eval_stride: int = 5


@dataclass
class LearnerSection:
    n_trees: int = 200
    learning_rate: float = 0.1
    max_depth: int = 4
    min_samples_leaf: int = 5
    subsample: float = 1.0


@dataclass
class StageSection:
    """Per-stage latency in frames."""

    capture_delay: int = 1
    transfer_delay: int = 1
    recognize_delay: int = 1
    shift_delay: int = 1
    deliver_delay: int = 1


@dataclass
class HazardSection:
    horizon: int = 25                # frames ahead a directive must hold
    vicinity: float = 100.0          # m, longitudinal radius of a hazard map
    waypoint_step: int = 5
    has_shoulder: bool = False


@dataclass
class EvalSection:
    predictor: str = "trained"       # trained | oracle | naive
    models_dir: Optional[str] = None  # defaults to <out>/models
    transfer: Optional[dict] = None  # generator overrides for scenario B


@dataclass
class SimulateSection:
    predictor: str = "trained"
    models_dir: Optional[str] = None
    max_frames: Optional[int] = None


@dataclass
class FaultScenario:
    name: str = "scenario"
    fogs: list = field(default_factory=list)
    cams: list = field(default_factory=list)


@dataclass
class TopologySection:
    n_fogs: int = 8
    fog_span: float = 250.0          # m per fog section
    resolution: float = 5.0          # m between checked positions
    scenarios: list = field(default_factory=list)  # of FaultScenario


@dataclass
class SeedSection:
    generator: Optional[int] = None
    split: Optional[int] = None
    learner: Optional[int] = None
    transfer: Optional[int] = None


@dataclass
class RunConfig:
    seed: int = 0
    horizons: list = field(default_factory=lambda: [1, 5, 10, 25])
    thresholds: list = field(default_factory=lambda: [0.01, 0.05, 0.1, 0.5])
    windows: list = field(default_factory=lambda: [1, 5, 10])
    out: str = "out"
    seeds: SeedSection = field(default_factory=SeedSection)
    generator: GeneratorSection = field(default_factory=GeneratorSection)
    trace: TraceSection = field(default_factory=TraceSection)
    features: FeatureSection = field(default_factory=FeatureSection)
    learner: LearnerSection = field(default_factory=LearnerSection)
    stages: StageSection = field(default_factory=StageSection)
    hazard: HazardSection = field(default_factory=HazardSection)
    eval: EvalSection = field(default_factory=EvalSection)
    simulate: SimulateSection = field(default_factory=SimulateSection)
    topology: TopologySection = field(default_factory=TopologySection)

    def sub_seed(self, name: str) -> int:
        """Seed for a named component, derived from ``seed`` unless pinned."""
        if name not in SEED_NAMES:
            raise ConfigError(f"seeds.{name}", "unknown seed name")
        pinned = getattr(self.seeds, name)
        if pinned is not None:
            return int(pinned)
        ss = np.random.SeedSequence([int(self.seed), zlib.crc32(name.encode())])
        return int(ss.generate_state(1)[0] & 0x7FFFFFFF)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def echo(self) -> dict:
        """The configuration as recorded in outputs; the output location is left out
        so that runs written to different directories stay byte-identical."""
        d = self.to_dict()
        d.pop("out")
        return d

    def validate(self) -> "RunConfig":
        def positive_ints(key, values):
            if not values or any(int(v) != v or v < 1 for v in values):
                raise ConfigError(key, "must be a non-empty list of positive integers")
        positive_ints("horizons", self.horizons)
        positive_ints("windows", self.windows)
        if not self.thresholds or any(t <= 0 for t in self.thresholds):
            raise ConfigError("thresholds", "must be a non-empty list of positive numbers")
        if self.features.history < 1:
            raise ConfigError("features.history", "must be >= 1")
        if not 0 < self.features.split_ratio < 1:
            raise ConfigError("features.split_ratio", "must lie in (0, 1)")
        for k in ("train_stride", "eval_stride"):
            if getattr(self.features, k) < 1:
                raise ConfigError(f"features.{k}", "must be >= 1")
        for k, v in dataclasses.asdict(self.stages).items():
            if v < 0:
                raise ConfigError(f"stages.{k}", "must be >= 0")
        for section in ("eval", "simulate"):
            p = getattr(self, section).predictor
            if p not in ("trained", "oracle", "naive"):
                raise ConfigError(f"{section}.predictor", f"unknown predictor {p!r}")
        if self.hazard.horizon < 1:
            raise ConfigError("hazard.horizon", "must be >= 1")
        return self


# -- construction ------------------------------------------------------------------

def _coerce(key: str, tp, value):
    origin = typing.get_origin(tp)
    if origin is typing.Union:  # Optional[...]
        if value is None:
            return None
        inner = [a for a in typing.get_args(tp) if a is not type(None)][0]
        return _coerce(key, inner, value)
    if dataclasses.is_dataclass(tp):
        if not isinstance(value, dict):
            raise ConfigError(key, "expected an object")
        return _build(tp, value, key + ".")
    if tp is bool:
        if not isinstance(value, bool):
            raise ConfigError(key, f"expected true/false, got {value!r}")
        return value
    if tp is int:
        if isinstance(value, bool) or not isinstance(value, (int, float)) or int(value) != value:
            raise ConfigError(key, f"expected an integer, got {value!r}")
        return int(value)
    if tp is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(key, f"expected a number, got {value!r}")
        return float(value)
    if tp is str:
        if not isinstance(value, str):
            raise ConfigError(key, f"expected a string, got {value!r}")
        return value
    if tp in (list, tuple):
        if not isinstance(value, (list, tuple)):
            raise ConfigError(key, f"expected a list, got {value!r}")
        return tp(value)
    if tp is dict:
        if not isinstance(value, dict):
            raise ConfigError(key, f"expected an object, got {value!r}")
        return dict(value)
    return value


def _build(cls, data: dict, prefix: str = ""):
    hints = typing.get_type_hints(cls)
    names = {f.name for f in dataclasses.fields(cls)}
    for key in data:
        if key not in names:
            raise ConfigError(prefix + key, "unknown configuration key")
    kwargs = {k: _coerce(prefix + k, hints[k], v) for k, v in data.items()}
    obj = cls(**kwargs)
    if cls is TopologySection:
        obj.scenarios = [
            s if isinstance(s, FaultScenario) else _coerce(f"{prefix}scenarios[{i}]", FaultScenario, s)
            for i, s in enumerate(obj.scenarios)
        ]
    return obj


def parse_value(text: str) -> Any:
    """JSON literal if it parses, the raw string otherwise."""
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def apply_override(data: dict, assignment: str) -> dict:
    """Apply one ``dotted.key=value`` override to a raw config mapping."""
    if "=" not in assignment:
        raise ConfigError(assignment, "override must look like key=value")
    key, text = assignment.split("=", 1)
    key = key.strip()
    parts = key.split(".")
    if not all(parts):
        raise ConfigError(key, "malformed key")
    # validate the path against the schema before touching the mapping
    cls = RunConfig
    for i, part in enumerate(parts):
        if cls is None or not dataclasses.is_dataclass(cls):
            raise ConfigError(key, "unknown configuration key")
        hints = typing.get_type_hints(cls)
        if part not in hints:
            raise ConfigError(".".join(parts[: i + 1]), "unknown configuration key")
        nxt = hints[part]
        if typing.get_origin(nxt) is typing.Union:
            nxt = [a for a in typing.get_args(nxt) if a is not type(None)][0]
        cls = nxt if dataclasses.is_dataclass(nxt) else None
        if cls is None and i < len(parts) - 1 and nxt is dict:
            break  # free-form mapping, e.g. eval.transfer.vehicles
    node = data
    for part in parts[:-1]:
        nxt = node.get(part)
        if nxt is None:
            nxt = node[part] = {}
        elif not isinstance(nxt, dict):
            raise ConfigError(key, "cannot override inside a non-object value")
        node = nxt
    node[parts[-1]] = parse_value(text)
    return data


def config_from_dict(data: dict, overrides=()) -> RunConfig:
    data = json.loads(json.dumps(data))  # deep copy of plain JSON data
    for item in overrides:
        apply_override(data, item)
    return _build(RunConfig, data).validate()


def load_config(path=None, overrides=()) -> RunConfig:
    data = {}
    if path is not None:
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise ConfigError("--config", f"cannot read {path}: {exc.strerror}") from None
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError("--config", f"invalid JSON: {exc}") from None
        if not isinstance(data, dict):
            raise ConfigError("--config", "top level must be an object")
    return config_from_dict(data, overrides)
