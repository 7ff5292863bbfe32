"""Time series I/O, net generation, the lagged linear predictor and Laplace fitting."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from datetime import datetime, timedelta, timezone

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from .distributions import LaplaceModel
from .rng import make_rng, open_uniform
from .exceptions import GapError, InsufficientData, ParseError, SingularDesign, UnitError

UNIT_SCALE = {"W": 1e-6, "kW": 1e-3, "MW": 1.0, "GW": 1e3}
RIDGE = 1e-10
COND_LIMIT = 1e12


@dataclass
class TimeSeries:
    start_time: datetime
    step: timedelta
    values: np.ndarray
    label: str = ""

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float).ravel()
        if self.step <= timedelta(0):
            raise ValueError("step must be positive")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("values must be finite")
        if self.start_time.tzinfo is None:
            self.start_time = self.start_time.replace(tzinfo=timezone.utc)

    def __len__(self):
        return self.values.size

    def times(self) -> list[datetime]:
        return [self.start_time + i * self.step for i in range(len(self))]

    def slice(self, start: int, stop: int) -> "TimeSeries":
        return TimeSeries(self.start_time + start * self.step, self.step, self.values[start:stop].copy(), self.label)


@dataclass(frozen=True)
class Schema:
    timestamp_col: str = "timestamp"
    value_col: str = "value_mw"
    unit: str = "MW"
    resample_step: timedelta | None = None
    fill_gaps: bool = False


def parse_time(text: str) -> datetime:
    t = text.strip()
    if t.endswith(("Z", "z")):
        t = t[:-1] + "+00:00"
    dt = datetime.fromisoformat(t)
    if dt.tzinfo is None:
        raise ValueError("timestamp lacks a UTC offset")
    return dt


def format_time(dt: datetime) -> str:
    dt = dt.astimezone(timezone.utc)
    return dt.strftime("%Y-%m-%dT%H:%M:%S") + (f".{dt.microsecond:06d}" if dt.microsecond else "") + "Z"


def load_timeseries(path, schema_cfg: Schema | dict | None = None) -> TimeSeries:
    """Read a ``timestamp,value_mw`` CSV with RFC3339 timestamps and a fixed step."""
    schema = schema_cfg if isinstance(schema_cfg, Schema) else Schema(**(schema_cfg or {}))
    if schema.unit not in UNIT_SCALE:
        raise UnitError(f"unknown unit {schema.unit!r}")
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise ParseError(1, "empty file") from None
        if schema.timestamp_col not in header:
            raise ParseError(1, f"missing column {schema.timestamp_col!r}")
        if schema.value_col not in header:
            others = [h for h in header if h.startswith("value_")]
            if others:
                raise UnitError(f"expected column {schema.value_col!r}, found {others}")
            raise ParseError(1, f"missing column {schema.value_col!r}")
        ti = header.index(schema.timestamp_col)
        vi = header.index(schema.value_col)
        times, vals = [], []
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            try:
                times.append(parse_time(row[ti]))
                v = float(row[vi])
            except (ValueError, IndexError) as exc:
                raise ParseError(lineno, str(exc)) from None
            if not math.isfinite(v):
                raise ParseError(lineno, f"non-finite value {row[vi]!r}")
            vals.append(v)
    if not vals:
        raise ParseError(2, "no data rows")
    if len(times) == 1:
        raise ParseError(2, "need at least two rows to infer the step")
    step = times[1] - times[0]
    if step <= timedelta(0):
        raise ParseError(3, "timestamps must increase")
    values = np.array(vals) * UNIT_SCALE[schema.unit]
    out_vals = [values[0]]
    for k in range(1, len(times)):
        dt = times[k] - times[k - 1]
        if dt == step:
            out_vals.append(values[k])
            continue
        ratio = dt / step
        if dt <= timedelta(0) or ratio != int(ratio):
            raise ParseError(k + 2, f"irregular step {dt} (expected {step})")
        if not schema.fill_gaps:
            raise GapError(format_time(times[k - 1]), format_time(times[k]))
        missing = int(ratio) - 1
        fill = np.linspace(values[k - 1], values[k], missing + 2)[1:-1]
        out_vals.extend(fill.tolist())
        out_vals.append(values[k])
    ts = TimeSeries(times[0], step, np.array(out_vals), label=str(path))
    if schema.resample_step is not None:
        ts = resample(ts, schema.resample_step)
    return ts


def write_timeseries(ts: TimeSeries, path) -> None:
    """Write ``timestamp,value_mw``; values use shortest round-trip formatting."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["timestamp", "value_mw"])
        for t, v in zip(ts.times(), ts.values):
            w.writerow([format_time(t), repr(float(v))])


def resample(ts: TimeSeries, step: timedelta) -> TimeSeries:
    """Mean over consecutive blocks; a trailing partial block is dropped."""
    ratio = step / ts.step
    if ratio < 1 or ratio != int(ratio):
        raise ValueError(f"target step {step} must be a multiple of {ts.step}")
    k = int(ratio)
    m = len(ts) // k
    if m == 0:
        raise InsufficientData("series shorter than one target step")
    vals = ts.values[: m * k].reshape(m, k).mean(axis=1)
    return TimeSeries(ts.start_time, step, vals, ts.label)


def net_generation(wind: TimeSeries, load: TimeSeries) -> TimeSeries:
    if wind.step != load.step:
        raise ValueError(f"step mismatch: {wind.step} vs {load.step}; resample first")
    if wind.start_time != load.start_time:
        raise ValueError("series start at different times")
    if len(wind) != len(load):
        raise ValueError("series have different lengths")
    return TimeSeries(wind.start_time, wind.step, wind.values - load.values, "net")


# ---------------------------------------------------------------- prediction


def lag_matrix(x, lags: int):
    """Rows ``(x[t-1], ..., x[t-lags])`` with targets ``x[t]`` for ``t >= lags``."""
    x = np.asarray(x, dtype=float)
    n = x.size - lags
    if n <= 0:
        raise InsufficientData(f"need more than {lags} samples")
    X = np.column_stack([x[lags - j: lags - j + n] for j in range(1, lags + 1)])
    return X, x[lags:]


class LinearPredictor(BaseEstimator, RegressorMixin):
    """Least squares on lagged values with an intercept (normal equations plus a tiny ridge).

    ``on_singular='intercept'`` falls back to the intercept-only model when
    the design is rank deficient, e.g. for a constant series.
    """

    def __init__(self, ridge=RIDGE, on_singular="raise"):
        self.ridge = ridge
        self.on_singular = on_singular

    def fit(self, X, y):
        X, y = check_X_y(X, y, dtype=float, y_numeric=True)
        A = np.column_stack([np.ones(len(y)), X])
        gram = A.T @ A
        scale = np.sqrt(np.diag(gram))
        scale[scale == 0] = 1.0
        scaled = gram / np.outer(scale, scale)
        cond = np.linalg.cond(scaled)
        if not np.isfinite(cond) or cond > COND_LIMIT:
            if self.on_singular != "intercept":
                raise SingularDesign(f"design matrix is singular (condition {cond:.3g})")
            self.intercept_ = float(y.mean())
            self.coef_ = np.zeros(X.shape[1])
        else:
            beta = np.linalg.solve(gram + self.ridge * np.eye(gram.shape[0]), A.T @ y)
            self.intercept_ = float(beta[0])
            self.coef_ = beta[1:]
        self.n_features_in_ = X.shape[1]
        return self

    def predict(self, X):
        check_is_fitted(self, "coef_")
        X = check_array(X, dtype=float)
        return X @ self.coef_ + self.intercept_


@dataclass(frozen=True)
class PredictorModel:
    lags: int
    coefficients: tuple
    intercept: float
    train_range: tuple

    def predict_series(self, x) -> np.ndarray:
        X, _ = lag_matrix(x, self.lags)
        return X @ np.asarray(self.coefficients) + self.intercept

    def to_dict(self) -> dict:
        return {"lags": self.lags, "coefficients": list(self.coefficients),
                "intercept": self.intercept, "train_range": list(self.train_range)}


def _span(series: TimeSeries, rng):
    n = len(series)
    start, stop = (0, n) if rng is None else (int(rng[0]), int(rng[1]))
    if not (0 <= start < stop <= n):
        raise ValueError(f"range {rng!r} outside [0, {n}]")
    return start, stop


def fit_predictor(series: TimeSeries, lags: int = 6, train_range=None, on_singular: str = "raise") -> PredictorModel:
    """Predict ``x[t]`` from the previous ``lags`` samples, fitted on ``train_range``."""
    if lags < 1:
        raise ValueError("lags must be >= 1")
    start, stop = _span(series, train_range)
    if stop - start <= lags:
        raise InsufficientData(f"train range of {stop - start} samples needs more than {lags}")
    X, y = lag_matrix(series.values[start:stop], lags)
    est = LinearPredictor(on_singular=on_singular).fit(X, y)
    return PredictorModel(lags, tuple(float(c) for c in est.coef_), est.intercept_, (start, stop))


def residuals(model: PredictorModel, series: TimeSeries, eval_range=None) -> TimeSeries:
    """Actual minus predicted for every target slot in ``eval_range``."""
    start, stop = _span(series, eval_range)
    seg = series.values[start:stop]
    pred = model.predict_series(seg)
    actual = seg[model.lags:]
    return TimeSeries(series.start_time + (start + model.lags) * series.step, series.step,
                      actual - pred, f"residuals:{series.label}")


# ---------------------------------------------------------------- Laplace fit


def _as_array(x) -> np.ndarray:
    return x.values if isinstance(x, TimeSeries) else np.asarray(x, dtype=float).ravel()


def fit_laplace(resid, location_mode: str = "zero") -> LaplaceModel:
    """Scale = mean absolute deviation about the location (0, or the sample median)."""
    x = _as_array(resid)
    if x.size < 2:
        raise InsufficientData("need at least two residuals")
    if location_mode == "zero":
        mu = 0.0
    elif location_mode == "median":
        mu = float(np.median(x))
    else:
        raise ValueError(f"unknown location mode {location_mode!r}")
    b = float(np.mean(np.abs(x - mu)))
    if b <= 0:
        raise SingularDesign("residuals have zero spread")
    return LaplaceModel(mu=mu, b=b)


class LaplaceDensity(BaseEstimator):
    """Density estimator wrapper around ``fit_laplace``."""

    def __init__(self, location_mode="zero"):
        self.location_mode = location_mode

    def fit(self, X, y=None):
        self.model_ = fit_laplace(X, self.location_mode)
        return self

    def score_samples(self, X):
        check_is_fitted(self, "model_")
        x = _as_array(X)
        return np.log(self.model_.pdf(x))

    def score(self, X, y=None):
        return float(np.sum(self.score_samples(X)))


def ks_distance(sample, cdf) -> float:
    """Sup distance between the empirical cdf of ``sample`` and a reference cdf.

    Both one-sided limits are compared at every sample point, so reference
    cdfs with atoms are handled.
    """
    x = np.sort(_as_array(sample))
    if x.size == 0:
        raise InsufficientData("empty sample")
    F = cdf.cdf if hasattr(cdf, "cdf") else cdf
    n = x.size
    u, first = np.unique(x, return_index=True)
    last = np.append(first[1:], n)
    emp_right = last / n
    emp_left = first / n
    ref_right = np.asarray(F(u), dtype=float)
    ref_left = np.asarray(F(np.nextafter(u, -np.inf)), dtype=float)
    return float(max(np.max(np.abs(emp_right - ref_right)), np.max(np.abs(emp_left - ref_left))))


# ---------------------------------------------------------------- synthetic data


def synthetic_ar1(n: int, phi: float, noise_b: float, seed: int, mean: float = 0.0,
                  start: datetime | None = None, step: timedelta = timedelta(minutes=10)) -> TimeSeries:
    """AR(1) series ``x[t] = mean + phi (x[t-1] - mean) + e[t]`` with Laplace noise."""
    e = LaplaceModel(0.0, noise_b).ppf(open_uniform(make_rng(seed), int(n)))
    x = np.empty(int(n))
    prev = mean
    for t in range(int(n)):
        prev = mean + phi * (prev - mean) + e[t]
        x[t] = prev
    start = start or datetime(2006, 1, 1, tzinfo=timezone.utc)
    return TimeSeries(start, step, x, f"ar1(phi={phi}, b={noise_b}, seed={seed})")
