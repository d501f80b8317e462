"""Data utilities: CSV ingestion, windowing with temporal marks, synthetic
dynamic-load scenarios, z-normalization, and a unit-root stationarity test."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np
import pandas as pd

from .errors import InputError

STATIC_PREFIX = "static_"


@dataclass
class LoadSeries:
    timestamps: np.ndarray                 # datetime64[s], strictly increasing, uniform
    values: np.ndarray                     # (n, d)
    static_context: Optional[np.ndarray] = None
    series_id: str = "series"

    @property
    def interval(self):
        return self.timestamps[1] - self.timestamps[0]


@dataclass
class WindowSample:
    x: np.ndarray                          # (L, d)
    y: np.ndarray                          # (L_y, d)
    marks_x: np.ndarray                    # (L, m)
    marks_y: np.ndarray                    # (L_token + L_y, m) decoder marks
    static: Optional[np.ndarray] = None


def _parse_timestamps(col):
    if pd.api.types.is_numeric_dtype(col):
        return pd.to_datetime(col.astype("int64"), unit="s", utc=True).dt.tz_localize(None)
    return pd.to_datetime(col, utc=True, format="ISO8601").dt.tz_localize(None)


def load_csv(path, timestamp_col="timestamp", value_cols=None, series_id=None,
             forward_fill=False):
    """Parse a load-series CSV with a header row.

    Timestamps may be RFC 3339 strings or epoch seconds; columns prefixed
    ``static_`` must be constant and become the static context vector. Gaps
    or duplicated timestamps are rejected unless forward_fill is set, which
    inserts forward-filled rows on the detected grid.
    """
    try:
        df = pd.read_csv(path)
    except (ValueError, OSError) as exc:
        raise InputError(f"{path}: cannot parse CSV: {exc}") from None
    if timestamp_col not in df.columns:
        raise InputError(f"{path}: missing timestamp column {timestamp_col!r}")
    try:
        ts = _parse_timestamps(df[timestamp_col])
    except (ValueError, TypeError) as exc:
        raise InputError(f"{path}: bad timestamps: {exc}") from None

    static_cols = [c for c in df.columns if c.startswith(STATIC_PREFIX)]
    if value_cols is None:
        value_cols = [c for c in df.columns if c != timestamp_col and c not in static_cols]
    if not value_cols:
        raise InputError(f"{path}: no value columns found")
    values = df[value_cols].to_numpy()
    if not np.issubdtype(values.dtype, np.number):
        bad = df[value_cols].apply(pd.to_numeric, errors="coerce")
        rows = np.flatnonzero(bad.isna().any(axis=1).to_numpy()) + 2  # header is line 1
        raise InputError(f"{path}: unparseable numeric cells at lines {rows[:10].tolist()}")

    dup = ts.duplicated()
    if dup.any():
        rows = (np.flatnonzero(dup.to_numpy()) + 2).tolist()
        raise InputError(f"{path}: duplicated timestamps at lines {rows[:10]}")
    order = np.argsort(ts.to_numpy())
    ts_np = ts.to_numpy()[order].astype("datetime64[s]")
    values = values[order].astype(np.float64)

    deltas = np.diff(ts_np).astype("timedelta64[s]")
    if len(deltas) == 0:
        raise InputError(f"{path}: need at least two rows")
    k = np.min(deltas)
    if np.any(deltas != k):
        bad = (np.flatnonzero(deltas != k) + 2).tolist()
        if not forward_fill:
            raise InputError(f"{path}: nonuniform intervals after lines {bad[:10]}")
        grid = np.arange(ts_np[0], ts_np[-1] + k, k)
        filled = np.empty((len(grid), values.shape[1]))
        idx = np.searchsorted(ts_np, grid, side="right") - 1
        filled[:] = values[idx]
        ts_np, values = grid.astype("datetime64[s]"), filled

    static = None
    if static_cols:
        sdf = df[static_cols]
        if (sdf.nunique() > 1).any():
            raise InputError(f"{path}: static columns are not constant per series")
        static = sdf.iloc[0].to_numpy(dtype=np.float64)

    return LoadSeries(timestamps=ts_np, values=values, static_context=static,
                      series_id=series_id or str(path))


def time_marks(timestamps):
    """Hour-of-day and day-of-week features, each scaled into [-0.5, 0.5]."""
    ts = pd.DatetimeIndex(timestamps)
    hod = ts.hour.to_numpy() / 23.0 - 0.5
    dow = ts.dayofweek.to_numpy() / 6.0 - 0.5
    return np.stack([hod, dow], axis=1)


def make_windows(series, lookback, horizon, token_len, stride=1):
    """Sliding (lookback, horizon) windows with decoder marks attached."""
    n = series.values.shape[0]
    if n < lookback + horizon:
        raise InputError(f"series length {n} < lookback {lookback} + horizon {horizon}")
    marks = time_marks(series.timestamps)
    k = series.interval
    future_ts = series.timestamps[-1] + k * np.arange(1, horizon + 1)
    count = (n - lookback - horizon) // stride + 1
    out = []
    for w in range(count):
        a = w * stride
        x_end = a + lookback
        y_end = x_end + horizon
        dec_marks = np.concatenate([marks[x_end - token_len:x_end], marks[x_end:y_end]], axis=0)
        out.append(WindowSample(
            x=series.values[a:x_end],
            y=series.values[x_end:y_end],
            marks_x=marks[a:x_end],
            marks_y=dec_marks,
            static=series.static_context,
        ))
    return out


def split_series(series, ratios=(0.7, 0.1, 0.2)):
    """Contiguous train/validation/test split of one series."""
    n = series.values.shape[0]
    n_train = int(n * ratios[0])
    n_val = int(n * ratios[1])
    pieces = []
    for lo, hi in ((0, n_train), (n_train, n_train + n_val), (n_train + n_val, n)):
        pieces.append(LoadSeries(
            timestamps=series.timestamps[lo:hi],
            values=series.values[lo:hi],
            static_context=series.static_context,
            series_id=series.series_id,
        ))
    return tuple(pieces)


@dataclass
class Scaler:
    """Per-feature z-normalization fitted on the training split."""
    mean: np.ndarray
    std: np.ndarray

    @classmethod
    def fit(cls, values):
        std = values.std(axis=0)
        return cls(mean=values.mean(axis=0), std=np.where(std < 1e-12, 1.0, std))

    def normalize(self, values):
        return (values - self.mean) / self.std

    def denormalize(self, values):
        return values * self.std + self.mean

    def to_dict(self):
        return {"mean": self.mean.tolist(), "std": self.std.tolist()}

    @classmethod
    def from_dict(cls, d):
        return cls(mean=np.asarray(d["mean"]), std=np.asarray(d["std"]))


# -- synthetic scenarios ------------------------------------------------------


@dataclass
class Segment:
    generator: str = "sine"        # sine | square | sawtooth | composite
    amplitude: float = 1.0
    period: float = 24.0
    phase: float = 0.0
    noise_std: float = 0.0
    length: int = 240
    offset: float = 0.0


@dataclass
class ScenarioSpec:
    segments: List[Segment] = field(default_factory=list)
    start: str = "2024-01-01T00:00:00"
    interval_seconds: int = 3600
    series_id: str = "scenario"

    @classmethod
    def from_json(cls, path):
        with open(path) as fh:
            doc = json.load(fh)
        segs = [Segment(**s) for s in doc.get("segments", [])]
        return cls(segments=segs, **{k: v for k, v in doc.items() if k != "segments"})

    @property
    def switch_times(self):
        ends = np.cumsum([s.length for s in self.segments])
        return ends[:-1].tolist()


def _waveform(gen, t, period, phase):
    angle = 2 * np.pi * (t / period) + phase
    if gen == "sine":
        return np.sin(angle)
    if gen == "square":
        return np.sign(np.sin(angle))
    if gen == "sawtooth":
        frac = (t / period + phase / (2 * np.pi)) % 1.0
        return 2.0 * frac - 1.0
    if gen == "composite":
        return 0.6 * np.sin(angle) + 0.4 * np.sign(np.sin(2 * angle))
    raise InputError(f"unknown generator {gen!r}")


def generate_scenario(spec, seed=0):
    """Deterministic concatenation of generator segments into one LoadSeries."""
    rng = np.random.default_rng(seed)
    parts = []
    for seg in spec.segments:
        t = np.arange(seg.length, dtype=np.float64)
        base = seg.offset + seg.amplitude * _waveform(seg.generator, t, seg.period, seg.phase)
        if seg.noise_std > 0:
            base = base + rng.normal(0.0, seg.noise_std, size=seg.length)
        parts.append(base)
    values = np.concatenate(parts)[:, None]
    start = np.datetime64(spec.start, "s")
    ts = start + np.timedelta64(spec.interval_seconds, "s") * np.arange(values.shape[0])
    return LoadSeries(timestamps=ts.astype("datetime64[s]"), values=values,
                      series_id=spec.series_id)


def preset_scenario(name, length=1200, noise_std=0.05):
    """Built-in scenario presets for concept-drift and few-shot experiments.

    ``switch`` mirrors an entity switch from a low, sine-shaped regime to a
    high square regime; ``new_app`` emits a short held-out composite series.
    """
    if name == "switch":
        half = length // 2
        return ScenarioSpec(segments=[
            Segment("sine", amplitude=1.0, period=24, noise_std=noise_std, length=half, offset=1.0),
            Segment("square", amplitude=2.0, period=12, noise_std=noise_std, length=length - half, offset=4.0),
        ], series_id="switch")
    if name == "new_app":
        return ScenarioSpec(segments=[
            Segment("composite", amplitude=1.5, period=24, noise_std=noise_std,
                    length=min(length, 240), offset=2.0),
        ], series_id="new_app")
    raise InputError(f"unknown preset {name!r}")


# -- stationarity -------------------------------------------------------------


@dataclass
class AdfResult:
    statistic: float
    critical_value_1pct: float
    is_stationary: bool


def _mackinnon_crit_1pct(nobs):
    # MacKinnon (2010) response-surface approximation, constant-only case.
    return -3.43035 - 6.5393 / nobs - 16.786 / nobs**2 - 79.433 / nobs**3


def adf_test(series):
    """Augmented Dickey-Fuller test with constant and Schwert lag order.

    Regresses the first difference on a constant, the lagged level, and
    p = floor(12 * (n/100)^(1/4)) lagged differences via least squares; the
    statistic is the t-ratio of the lagged-level coefficient, compared to the
    MacKinnon 1% critical value.
    """
    x = np.asarray(series, dtype=np.float64).ravel()
    n = x.size
    if n < 30:
        raise InputError(f"need at least 30 observations, got {n}")
    p = int(np.floor(12.0 * (n / 100.0) ** 0.25))
    dx = np.diff(x)
    rows = n - 1 - p
    if rows <= p + 2:
        raise InputError(f"series too short for lag order {p}")
    y = dx[p:]
    cols = [np.ones(rows), x[p:-1]]
    for lag in range(1, p + 1):
        cols.append(dx[p - lag:-lag])
    X = np.column_stack(cols)
    beta, _, rank, _ = np.linalg.lstsq(X, y, rcond=None)
    if rank < X.shape[1]:
        raise InputError("singular regression in unit-root test")
    resid = y - X @ beta
    dof = rows - X.shape[1]
    sigma2 = resid @ resid / dof
    cov = sigma2 * np.linalg.inv(X.T @ X)
    stat = float(beta[1] / np.sqrt(cov[1, 1]))
    crit = _mackinnon_crit_1pct(rows)
    return AdfResult(statistic=stat, critical_value_1pct=crit,
                     is_stationary=stat < crit)
