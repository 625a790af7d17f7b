"""Per-horizon displacement forecasters, baselines and error metrics."""

from __future__ import annotations

import json
import math
import weakref
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from .errors import DataError, DimensionMismatch, EmptyDataset, EmptyErrors, MissingModel
from .features import (
    DEFAULT_HISTORY,
    feature_rows,
    future_rows,
    history_available,
    n_features,
    sample_rows,
)
from .trace import Trace
from .trees import GradientBoostedTrees, Presorted

MODEL_FORMAT = "edgetwin.forecaster"
MODEL_VERSION = 1
DEFAULT_HORIZONS = (1, 5, 10, 25)
DEFAULT_THRESHOLDS = (0.01, 0.05, 0.1, 0.5)


class DisplacementForecaster(RegressorMixin, BaseEstimator):
    """Predicts the ``(dx, dy)`` displacement ``horizon`` frames ahead.

    Two independent boosted ensembles, one per axis, share the learner
    parameters.  ``fit`` takes the matrices produced by
    :func:`edgetwin.features.make_dataset`.
    """

    def __init__(self, horizon=1, history=DEFAULT_HISTORY, n_trees=200, learning_rate=0.1,
                 max_depth=4, min_samples_leaf=5, subsample=1.0, random_state=0):
        self.horizon = horizon
        self.history = history
        self.n_trees = n_trees
        self.learning_rate = learning_rate
        self.max_depth = max_depth
        self.min_samples_leaf = min_samples_leaf
        self.subsample = subsample
        self.random_state = random_state

    def _learner(self, seed_offset):
        return GradientBoostedTrees(
            n_trees=self.n_trees, learning_rate=self.learning_rate, max_depth=self.max_depth,
            min_samples_leaf=self.min_samples_leaf, subsample=self.subsample,
            random_state=self.random_state + seed_offset,
        )

    def fit(self, X, Y):
        X, Y = check_X_y(X, Y, multi_output=True, dtype=np.float64, y_numeric=True)
        if Y.ndim != 2 or Y.shape[1] != 2:
            raise DimensionMismatch("targets must have two columns (dx, dy)")
        if len(X) < 2:
            raise EmptyDataset("need at least two rows to train")
        self.n_features_in_ = X.shape[1]
        data = Presorted(X)
        self.dx_ = self._learner(0).fit(X, Y[:, 0], presorted=data)
        self.dy_ = self._learner(1).fit(X, Y[:, 1], presorted=data)
        return self

    # read-only views of the fitted state
    @property
    def base_dx(self) -> float:
        return self.dx_.base_

    @property
    def base_dy(self) -> float:
        return self.dy_.base_

    @property
    def trees_dx(self):
        return self.dx_.trees_

    @property
    def trees_dy(self):
        return self.dy_.trees_

    def predict(self, X) -> np.ndarray:
        check_is_fitted(self, "dx_")
        X = check_array(np.atleast_2d(X), dtype=np.float64)
        if X.shape[1] != self.n_features_in_:
            raise DimensionMismatch(f"expected {self.n_features_in_} features, got {X.shape[1]}")
        return np.column_stack([self.dx_.predict(X), self.dy_.predict(X)])

    def predict_position(self, fv, anchor) -> tuple[float, float]:
        dx, dy = self.predict(np.asarray(fv, dtype=float).reshape(1, -1))[0]
        return (anchor[0] + dx, anchor[1] + dy)

    # -- serialization -----------------------------------------------------------
    def to_dict(self) -> dict:
        check_is_fitted(self, "dx_")
        return {
            "format": MODEL_FORMAT,
            "version": MODEL_VERSION,
            "params": self.get_params(),
            "n_features": self.n_features_in_,
            "base_dx": self.dx_.base_,
            "base_dy": self.dy_.base_,
            "dx": self.dx_.to_dict(),
            "dy": self.dy_.to_dict(),
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "DisplacementForecaster":
        if d.get("format") != MODEL_FORMAT or d.get("version") != MODEL_VERSION:
            raise DataError(f"not a {MODEL_FORMAT} v{MODEL_VERSION} document")
        model = cls(**d["params"])
        model.n_features_in_ = int(d["n_features"])
        model.dx_ = GradientBoostedTrees.from_dict(d["dx"])
        model.dy_ = GradientBoostedTrees.from_dict(d["dy"])
        return model

    def save(self, path) -> Path:
        path = Path(path)
        path.write_text(json.dumps(self.to_dict(), sort_keys=True))
        return path

    @classmethod
    def load(cls, path) -> "DisplacementForecaster":
        return cls.from_dict(json.loads(Path(path).read_text()))


def train(X, Y, params: Mapping | None = None, horizon: int = 1,
          history: int = DEFAULT_HISTORY) -> DisplacementForecaster:
    params = dict(params or {})
    if "seed" in params:
        params["random_state"] = params.pop("seed")
    return DisplacementForecaster(horizon=horizon, history=history, **params).fit(X, Y)


def predict(model: DisplacementForecaster, fv, anchor) -> tuple[float, float]:
    return model.predict_position(fv, anchor)


# -- predictors over traces --------------------------------------------------------
#
# A predictor maps trace rows to displacements ``horizon`` frames ahead and
# reports which rows had to fall back to persistence.

class NaiveForecaster:
    """Persistence: the last observed position is the forecast for every horizon."""

    name = "naive"
    horizons = None

    def supports(self, horizon: int) -> bool:
        return True

    def displacement(self, trace: Trace, rows, horizon: int):
        rows = np.asarray(rows, dtype=np.int64)
        return np.zeros((len(rows), 2)), np.zeros(len(rows), dtype=bool)


class OracleForecaster:
    """Reads the answer from the trace itself; rows without that future fall back."""

    name = "oracle"
    horizons = None

    def supports(self, horizon: int) -> bool:
        return True

    def displacement(self, trace: Trace, rows, horizon: int):
        rows = np.asarray(rows, dtype=np.int64)
        _, after = trace.vehicle_position_in_life()
        ok = after[rows] >= horizon
        out = np.zeros((len(rows), 2))
        if ok.any():
            fut = future_rows(trace, rows[ok], horizon)
            out[ok, 0] = trace["x"][fut] - trace["x"][rows[ok]]
            out[ok, 1] = trace["y"][fut] - trace["y"][rows[ok]]
        return out, ~ok


class ForecasterSet:
    """Trained per-horizon models.

    Horizons without a model are composed greedily from the largest available
    ones, summing displacements predicted from the same features (this treats
    later sub-windows as repeating the motion pattern of the first).
    Predictions for a whole trace are computed once per horizon and cached;
    features only read frames up to the predicted row, so this is causal.
    """

    name = "trained"

    def __init__(self, models: Mapping[int, DisplacementForecaster] | Iterable):
        if not isinstance(models, Mapping):
            models = {m.horizon: m for m in models}
        if not models:
            raise MissingModel("any")
        self.models = dict(sorted((int(h), m) for h, m in models.items()))
        histories = {m.history for m in self.models.values()}
        if len(histories) != 1:
            raise DataError("all models must share one history length")
        self.history = histories.pop()
        self._cache = weakref.WeakKeyDictionary()

    @property
    def horizons(self) -> tuple[int, ...]:
        return tuple(self.models)

    def supports(self, horizon: int) -> bool:
        return horizon in self.models

    def decompose(self, horizon: int) -> list[int]:
        parts, rest = [], horizon
        for h in sorted(self.models, reverse=True):
            while h <= rest:
                parts.append(h)
                rest -= h
        if rest:
            raise MissingModel(horizon)
        return parts

    def _table(self, trace: Trace, horizon: int, rows) -> np.ndarray:
        """Cached predictions for ``rows``; computes only rows not seen before."""
        per = self._cache.setdefault(trace, {})
        if horizon not in per:
            per[horizon] = (np.full((len(trace), 2), np.nan), np.zeros(len(trace), dtype=bool))
        table, done = per[horizon]
        todo = np.unique(rows[~done[rows]])
        if len(todo):
            ok = todo[history_available(trace, self.history)[todo]]
            for chunk in np.array_split(ok, max(1, len(ok) // 50_000)):
                if len(chunk):
                    table[chunk] = self.models[horizon].predict(
                        feature_rows(trace, chunk, self.history))
            done[todo] = True
        return table[rows]

    def prefetch(self, trace: Trace, rows, horizons=None):
        rows = np.asarray(rows, dtype=np.int64)
        for h in horizons or self.horizons:
            for part in set(self.decompose(h)):
                self._table(trace, part, rows)

    def displacement(self, trace: Trace, rows, horizon: int):
        rows = np.asarray(rows, dtype=np.int64)
        if horizon == 0:
            return np.zeros((len(rows), 2)), np.zeros(len(rows), dtype=bool)
        out = np.zeros((len(rows), 2))
        for h in self.decompose(horizon):
            out += self._table(trace, h, rows)
        fallback = np.isnan(out[:, 0])
        out[fallback] = 0.0
        return out, fallback


def predict_positions(predictor, trace: Trace, rows, horizon: int):
    disp, fallback = predictor.displacement(trace, rows, horizon)
    rows = np.asarray(rows, dtype=np.int64)
    pos = np.column_stack([trace["x"][rows], trace["y"][rows]]) + disp
    return pos, fallback


def naive_predict(trace: Trace, vehicle_id: int, frame: int, horizon: int = 0) -> tuple[float, float]:
    s = trace.state(vehicle_id, frame)
    return (s.x, s.y)


def coordinate_distance(pred, actual) -> float:
    return math.hypot(pred[0] - actual[0], pred[1] - actual[1])


def coordinate_distances(pred, actual) -> np.ndarray:
    pred, actual = np.asarray(pred, dtype=float), np.asarray(actual, dtype=float)
    return np.hypot(pred[..., 0] - actual[..., 0], pred[..., 1] - actual[..., 1])


def threshold_accuracy(errors, threshold: float) -> float:
    if threshold <= 0:
        raise ValueError("threshold must be positive")
    errors = np.asarray(errors, dtype=float)
    if not errors.size:
        raise EmptyErrors("no errors to score")
    return float(np.mean(errors <= threshold))


# -- evaluation ----------------------------------------------------------------------

@dataclass(frozen=True)
class ErrorStats:
    n: int
    mean: float
    median: float
    q1: float
    q3: float
    max: float

    @classmethod
    def of(cls, errors) -> "ErrorStats":
        e = np.asarray(errors, dtype=float)
        if not e.size:
            raise EmptyErrors("no errors to summarize")
        q1, med, q3 = np.percentile(e, [25, 50, 75])
        return cls(int(e.size), float(e.mean()), float(med), float(q1), float(q3), float(e.max()))

    def to_dict(self) -> dict:
        return dict(n=self.n, mean=self.mean, median=self.median, q1=self.q1, q3=self.q3,
                    max=self.max)


@dataclass(frozen=True)
class HorizonReport:
    horizon: int
    model: ErrorStats
    naive: ErrorStats
    accuracy: dict[float, float]
    naive_accuracy: dict[float, float]
    fallbacks: int = 0

    def to_dict(self) -> dict:
        return {
            "horizon": self.horizon,
            "model": self.model.to_dict(),
            "naive": self.naive.to_dict(),
            "accuracy": {repr(float(k)): v for k, v in self.accuracy.items()},
            "naive_accuracy": {repr(float(k)): v for k, v in self.naive_accuracy.items()},
            "fallbacks": self.fallbacks,
        }


@dataclass(frozen=True)
class EvalReport:
    horizons: dict[int, HorizonReport] = field(default_factory=dict)

    def accuracy_table(self) -> dict[float, dict[int, float]]:
        """``{threshold: {window: accuracy}}`` in the layout of a speculative table."""
        table: dict[float, dict[int, float]] = {}
        for h, rep in self.horizons.items():
            for thr, acc in rep.accuracy.items():
                table.setdefault(thr, {})[h] = acc
        return table

    def to_dict(self) -> dict:
        return {"horizons": {str(h): r.to_dict() for h, r in self.horizons.items()}}


def evaluation_rows(trace: Trace, vehicle_ids, horizons, history=DEFAULT_HISTORY, stride=1):
    """Shared evaluation points: every horizon is scored on the same (vehicle, frame) set."""
    return sample_rows(trace, vehicle_ids, max(horizons), history, stride)


def horizon_errors(predictor, trace: Trace, rows, horizon: int):
    pred, fallback = predict_positions(predictor, trace, rows, horizon)
    fut = future_rows(trace, rows, horizon)
    actual = np.column_stack([trace["x"][fut], trace["y"][fut]])
    naive = np.column_stack([trace["x"][rows], trace["y"][rows]])
    return coordinate_distances(pred, actual), coordinate_distances(naive, actual), fallback


def evaluate(predictor, trace: Trace, test_ids, horizons=DEFAULT_HORIZONS,
             thresholds=DEFAULT_THRESHOLDS, history=DEFAULT_HISTORY, stride=1) -> EvalReport:
    for h in horizons:
        if not predictor.supports(h):
            raise MissingModel(h)
    rows = evaluation_rows(trace, test_ids, horizons, history, stride)
    if not len(rows):
        raise EmptyDataset("no evaluation points for the requested horizons")
    reports = {}
    for h in horizons:
        err, naive, fallback = horizon_errors(predictor, trace, rows, h)
        reports[int(h)] = HorizonReport(
            int(h), ErrorStats.of(err), ErrorStats.of(naive),
            {float(t): threshold_accuracy(err, t) for t in thresholds},
            {float(t): threshold_accuracy(naive, t) for t in thresholds},
            int(fallback.sum()),
        )
    return EvalReport(reports)


def recursive_rollout(model: DisplacementForecaster, trace: Trace, rows, steps: int,
                      lane_width: float | None = None) -> np.ndarray:
    """Apply a one-frame model ``steps`` times, feeding predictions back as history.

    Ego velocity and acceleration are re-derived from the predicted
    displacements; neighbors are advanced at constant velocity.
    Returns predicted positions ``(n, 2)``.
    """
    H = model.history
    fps = trace.fps
    lane_width = lane_width or trace.lane_width
    rows = np.asarray(rows, dtype=np.int64)
    X = feature_rows(trace, rows, H)
    n = len(rows)
    # absolute ego history, newest first: (n, H, 7)
    ego = X[:, : 7 * H].reshape(n, H, 7).copy()
    origin = np.column_stack([trace["x"][rows], trace["y"][rows]])
    ego[:, :, 0] += origin[:, :1]
    ego[:, :, 1] += origin[:, 1:]
    nb = X[:, 7 * H:].reshape(n, 6, 5).copy()
    present = nb[:, :, 4] > 0
    nb[:, :, 0] += origin[:, :1]
    nb[:, :, 1] += origin[:, 1:]
    for _ in range(steps):
        cur = ego[:, 0, :2]
        feats = np.empty((n, n_features(H)))
        rel = ego.copy()
        rel[:, :, 0] -= cur[:, :1]
        rel[:, :, 1] -= cur[:, 1:]
        feats[:, : 7 * H] = rel.reshape(n, -1)
        nrel = nb.copy()
        nrel[:, :, 0] = np.where(present, nb[:, :, 0] - cur[:, :1], 0.0)
        nrel[:, :, 1] = np.where(present, nb[:, :, 1] - cur[:, 1:], 0.0)
        feats[:, 7 * H:] = nrel.reshape(n, -1)
        d = model.predict(feats)
        new = np.empty((n, 7))
        new[:, 0] = cur[:, 0] + d[:, 0]
        new[:, 1] = cur[:, 1] + d[:, 1]
        new[:, 2] = d[:, 0] * fps
        new[:, 3] = d[:, 1] * fps
        new[:, 4] = (new[:, 2] - ego[:, 0, 2]) * fps
        new[:, 5] = (new[:, 3] - ego[:, 0, 3]) * fps
        new[:, 6] = np.floor(new[:, 1] / lane_width)
        ego = np.concatenate([new[:, None, :], ego[:, :-1, :]], axis=1)
        nb[:, :, 0] += nb[:, :, 2] / fps
        nb[:, :, 1] += nb[:, :, 3] / fps
    return ego[:, 0, :2].copy()
