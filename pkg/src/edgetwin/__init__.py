"""Edge digital twin for highway traffic: trajectory forecasting, box allocation and fog topology."""

__version__ = "0.1.0"

from .errors import ConfigError, DataError, EdgeTwinError, InvariantViolation  # noqa: E402
from .trace import BoxId, RoadGeometry, Trace, TraceSchema, VehicleState, parse_trace, write_trace  # noqa: E402
from .synth import GeneratorConfig, lane_change_scenario, synth_trace  # noqa: E402
from .features import extract_features, make_dataset  # noqa: E402
from .trees import GradientBoostedTrees  # noqa: E402
from .forecaster import (DisplacementForecaster, ForecasterSet, NaiveForecaster,  # noqa: E402
                         OracleForecaster, evaluate)
from .boxes import CellStatus, HazardMap, allocate, hazard_map, occupancy, plan_maneuver  # noqa: E402
from .pipeline import StageConfig, run_pipeline, speculative_eval  # noqa: E402
from .topology import FogTopology, build, coverage, operational_after  # noqa: E402

__all__ = [
    "__version__", "ConfigError", "DataError", "EdgeTwinError", "InvariantViolation",
    "BoxId", "RoadGeometry", "Trace", "TraceSchema", "VehicleState", "parse_trace", "write_trace",
    "GeneratorConfig", "lane_change_scenario", "synth_trace", "extract_features", "make_dataset",
    "GradientBoostedTrees", "DisplacementForecaster", "ForecasterSet", "NaiveForecaster",
    "OracleForecaster", "evaluate", "CellStatus", "HazardMap", "allocate", "hazard_map",
    "occupancy", "plan_maneuver", "StageConfig", "run_pipeline", "speculative_eval",
    "FogTopology", "build", "coverage", "operational_after",
]
