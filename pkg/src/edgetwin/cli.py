"""``edgetwin`` command-line entry point.

    edgetwin generate|train|eval|simulate|faults --config FILE [--set k=v]... [--out DIR]

Each command merges its section into ``<out>/metrics.json``; JSON output is
written with sorted keys so identical runs produce identical bytes.
Exit codes: 0 success, 2 configuration error, 3 data error, 4 invariant violation.
"""
import argparse
import contextlib
import dataclasses
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .config import RunConfig, load_config
from .errors import BadParams, ConfigError, DataError, EdgeTwinError, InvariantViolation, MissingModel
from .features import make_dataset
from .forecaster import (DisplacementForecaster, ForecasterSet, NaiveForecaster, OracleForecaster,
                         evaluate, train)
from .pipeline import StageConfig, run_pipeline, speculative_eval
from .synth import GeneratorConfig, synth_trace
from .topology import (FogTopology, adjacent_failure, camera_fault_cases, coverage,
                       enumerate_fog_failures, single_camera_sweep)
from .trace import RoadGeometry, Trace, parse_trace, split_train_test, write_trace

log = logging.getLogger("edgetwin")

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_INVARIANT = 0, 2, 3, 4


@contextlib.contextmanager
def config_key(key: str):
    """Attribute module errors raised while handling ``key`` to that config key."""
    try:
        yield
    except BadParams as exc:
        raise ConfigError(key, str(exc)) from exc
    except EdgeTwinError as exc:
        if not getattr(exc, "config_key", None):
            exc.config_key = key
        raise


def dump_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, indent=2, allow_nan=False) + "\n"


def write_section(out: Path, section: str, payload: dict) -> Path:
    path = out / "metrics.json"
    data = json.loads(path.read_text()) if path.exists() else {}
    data[section] = payload
    data["version"] = __version__
    path.write_text(dump_json(data))
    return path


# -- shared plumbing ----------------------------------------------------------------

def generator_config(cfg: RunConfig, overrides=None, seed_name="generator") -> GeneratorConfig:
    params = dataclasses.asdict(cfg.generator)
    params.update(overrides or {})
    unknown = set(params) - {f.name for f in dataclasses.fields(GeneratorConfig)}
    if unknown:
        raise ConfigError(f"eval.transfer.{sorted(unknown)[0]}", "unknown generator key")
    params["seed"] = cfg.sub_seed(seed_name)
    return GeneratorConfig(**params)


def load_trace(cfg: RunConfig) -> Trace:
    if cfg.trace.path is not None:
        with config_key("trace"):
            if not Path(cfg.trace.path).exists():
                raise ConfigError("trace.path", f"no such file {cfg.trace.path}")
            return parse_trace(cfg.trace.path, cfg.trace.schema, fps=cfg.generator.fps,
                               lane_width=cfg.generator.lane_width,
                               box_length=cfg.trace.box_length)
    with config_key("generator"):
        return synth_trace(generator_config(cfg))


def geometry(cfg: RunConfig, trace: Trace) -> RoadGeometry:
    with config_key("trace.box_length"):
        return RoadGeometry.for_trace(trace, box_length=cfg.trace.box_length,
                                      has_shoulder=cfg.hazard.has_shoulder)


def split(cfg: RunConfig, trace: Trace):
    return split_train_test(trace, cfg.features.split_ratio, cfg.sub_seed("split"))


def model_path(models_dir: Path, horizon: int) -> Path:
    return models_dir / f"model_h{horizon}.json"


def load_models(cfg: RunConfig, models_dir) -> ForecasterSet:
    """Every model file found in ``models_dir`` (default ``<out>/models``)."""
    models_dir = Path(models_dir) if models_dir else Path(cfg.out) / "models"
    models = {}
    for p in sorted(models_dir.glob("model_h*.json")):
        m = DisplacementForecaster.load(p)
        models[int(m.horizon)] = m
    if not models:
        raise MissingModel(f"any (looked in {models_dir})")
    return ForecasterSet(models)


def make_predictor(cfg: RunConfig, kind: str, models_dir):
    if kind == "oracle":
        return OracleForecaster()
    if kind == "naive":
        return NaiveForecaster()
    return load_models(cfg, models_dir)


def train_models(cfg: RunConfig, trace: Trace, train_ids, horizons=None) -> dict:
    params = dataclasses.asdict(cfg.learner)
    params["random_state"] = cfg.sub_seed("learner")
    models = {}
    for h in horizons or cfg.horizons:
        with config_key("features"):
            X, Y, _ = make_dataset(trace, train_ids, int(h), cfg.features.history,
                                   cfg.features.train_stride)
        with config_key("learner"):
            models[int(h)] = train(X, Y, params, horizon=int(h), history=cfg.features.history)
        log.info("trained horizon %d on %d samples", h, len(X))
    return models


# -- commands -----------------------------------------------------------------------

def cmd_generate(cfg: RunConfig, out: Path) -> Path:
    trace = load_trace(cfg)
    path = write_trace(trace, out / "trace.csv")
    log.info("wrote %d rows to %s", len(trace), path)
    return path


def cmd_train(cfg: RunConfig, out: Path) -> dict:
    trace = load_trace(cfg)
    train_ids, test_ids = split(cfg, trace)
    models = train_models(cfg, trace, train_ids)
    models_dir = out / "models"
    models_dir.mkdir(parents=True, exist_ok=True)
    training_log = {}
    for h, m in models.items():
        m.save(model_path(models_dir, h))
        training_log[str(h)] = {"dx": m.dx_.train_loss_, "dy": m.dy_.train_loss_}
    (out / "train_log.json").write_text(dump_json(training_log))
    payload = {
        "horizons": sorted(models),
        "train_vehicles": sorted(int(v) for v in train_ids),
        "test_vehicles": sorted(int(v) for v in test_ids),
        "final_loss": {str(h): {"dx": m.dx_.train_loss_[-1], "dy": m.dy_.train_loss_[-1]}
                       for h, m in models.items()},
        "config": cfg.echo(),
    }
    write_section(out, "train", payload)
    return models


def cmd_eval(cfg: RunConfig, out: Path) -> dict:
    trace = load_trace(cfg)
    _, test_ids = split(cfg, trace)
    horizons = [int(h) for h in cfg.horizons]
    predictor = make_predictor(cfg, cfg.eval.predictor, cfg.eval.models_dir)
    f = cfg.features
    report = evaluate(predictor, trace, test_ids, horizons, cfg.thresholds, f.history, f.eval_stride)
    payload = {
        "predictor": cfg.eval.predictor,
        "report": report.to_dict(),
        "speculative": _table_dict(speculative_eval(
            trace, predictor, cfg.thresholds, cfg.windows, test_ids, f.history, f.eval_stride)),
        "config": cfg.echo(),
    }
    if cfg.eval.transfer is not None:
        with config_key("eval.transfer"):
            other = synth_trace(generator_config(cfg, cfg.eval.transfer, "transfer"))
        rep_b = evaluate(predictor, other, None, horizons, cfg.thresholds, f.history, f.eval_stride)
        mean_a = float(np.mean([r.model.mean for r in report.horizons.values()]))
        mean_b = float(np.mean([r.model.mean for r in rep_b.horizons.values()]))
        payload["transfer"] = {
            "report": rep_b.to_dict(),
            "mean_error_a": mean_a,
            "mean_error_b": mean_b,
            "ratio": mean_b / mean_a if mean_a > 0 else None,
        }
    write_section(out, "eval", payload)
    return payload


def _table_dict(table) -> dict:
    return {repr(float(t)): {str(w): a for w, a in row.items()} for t, row in table.items()}


def cmd_simulate(cfg: RunConfig, out: Path) -> dict:
    trace = load_trace(cfg)
    geom = geometry(cfg, trace)
    stages = StageConfig(**dataclasses.asdict(cfg.stages))
    hz = cfg.hazard
    predictor = make_predictor(cfg, cfg.simulate.predictor, cfg.simulate.models_dir)
    av_ids = sorted({int(v) for v in trace["vehicle_id"][trace["autonomous"]]})
    with config_key("simulate"):
        result = run_pipeline(trace, stages, predictor, geom, av_ids, horizon=hz.horizon,
                              vicinity=hz.vicinity, thresholds=cfg.thresholds,
                              history=cfg.features.history, waypoint_step=hz.waypoint_step,
                              max_frames=cfg.simulate.max_frames)
    m = result.metrics
    if m.duplicate_grants:
        raise InvariantViolation(f"{m.duplicate_grants} boxes granted to more than one vehicle")
    with (out / "directives.jsonl").open("w") as fh:
        for record in result.directives:
            fh.write(json.dumps(record, sort_keys=True, allow_nan=False) + "\n")
    payload = {
        "predictor": cfg.simulate.predictor,
        "autonomous_vehicles": av_ids,
        "total_delay": stages.total_delay,
        "pipeline": m.to_dict(),
        "config": cfg.echo(),
    }
    write_section(out, "simulate", payload)
    return payload


def cmd_faults(cfg: RunConfig, out: Path) -> dict:
    t = cfg.topology
    with config_key("topology"):
        topo = FogTopology(t.n_fogs, t.fog_span)
        scenarios = []
        for i, sc in enumerate(t.scenarios):
            with config_key(f"topology.scenarios[{i}]"):
                rep = coverage(topo.with_failures(sc.fogs, sc.cams), t.resolution)
            scenarios.append({"name": sc.name, **rep.to_dict()})
        enum = [(sorted(f), ok) for f, ok in enumerate_fog_failures(topo, t.resolution)]
    mismatches = [f for f, ok in enum if ok == adjacent_failure(f)]
    healthy = coverage(topo, t.resolution)
    if not healthy.operational or any(
            s != i for s, i in zip(healthy.serving, np.ceil(healthy.positions / t.fog_span))):
        raise InvariantViolation("healthy topology must serve every position from its own fog")
    payload = {
        "topology": topo.to_dict(),
        "scenarios": scenarios,
        "exhaustive": {
            "subsets": len(enum),
            "operational": sum(ok for _, ok in enum),
            "matches_adjacency_rule": not mismatches,
            "mismatches": mismatches,
        },
        "single_camera_failures": single_camera_sweep(topo, t.resolution),
        "camera_fault_cases": {str(f): camera_fault_cases(topo, f, t.resolution)
                               for f in range(1, t.n_fogs + 1)},
    }
    (out / "coverage.json").write_text(dump_json(payload))
    return payload


COMMANDS = {
    "generate": cmd_generate,
    "train": cmd_train,
    "eval": cmd_eval,
    "simulate": cmd_simulate,
    "faults": cmd_faults,
}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="edgetwin", description=__doc__.splitlines()[0])
    p.add_argument("command", choices=sorted(COMMANDS))
    p.add_argument("--config", help="JSON configuration file")
    p.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                   help="override a configuration value (dotted key, JSON value)")
    p.add_argument("--out", help="output directory (overrides the 'out' key)")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        overrides = list(args.overrides)
        if args.out is not None:
            overrides.append(f"out={json.dumps(args.out)}")
        cfg = load_config(args.config, overrides)
        out = Path(cfg.out)
        out.mkdir(parents=True, exist_ok=True)
        COMMANDS[args.command](cfg, out)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except InvariantViolation as exc:
        print(f"invariant violation: {exc}", file=sys.stderr)
        return EXIT_INVARIANT
    except DataError as exc:
        key = getattr(exc, "config_key", None)
        where = f" [{key}]" if key else ""
        print(f"data error{where}: {exc}", file=sys.stderr)
        return EXIT_DATA
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
