"""Data ingestion and preparation for the offline fit and the stream replay.

CSV layouts
-----------
series (long) : ``series_id,timestamp,value`` with ISO-8601 timestamps.
wide          : ``x1,...,xd,y`` plus an optional integer ``label`` column.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, asdict
from datetime import datetime
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .core import Dataset, InvalidInputError

ROLLING_STATS = ("mean", "std")


class CsvParseError(InvalidInputError):
    def __init__(self, message: str, row: Optional[int] = None):
        self.row = row
        if row is not None:
            # data rows are numbered from 1; the header is line 1 of the file
            message = f"row {row} (line {row + 1}): {message}"
        super().__init__(message)


@dataclass(frozen=True)
class SeriesFrame:
    timestamps: tuple
    values: np.ndarray
    series_id: str = "series"

    def __post_init__(self):
        v = np.array(self.values, dtype=float).reshape(-1)
        ts = tuple(self.timestamps)
        if len(ts) != v.size:
            raise InvalidInputError("timestamps and values differ in length")
        if not np.all(np.isfinite(v)):
            raise InvalidInputError("series values must be finite")
        for i in range(1, len(ts)):
            if not ts[i - 1] < ts[i]:
                raise InvalidInputError(f"timestamps must be strictly increasing (position {i})")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "timestamps", ts)

    def __len__(self) -> int:
        return self.values.size

    @classmethod
    def from_values(cls, values, series_id: str = "series") -> "SeriesFrame":
        return cls(tuple(range(len(values))), values, series_id)

    def with_values(self, values) -> "SeriesFrame":
        return SeriesFrame(self.timestamps, values, self.series_id)

    def slice(self, start: int, stop: int) -> "SeriesFrame":
        return SeriesFrame(self.timestamps[start:stop], self.values[start:stop], self.series_id)


@dataclass(frozen=True)
class FeatureSpec:
    lags: tuple = (1, 2, 3, 7)
    rolling_windows: tuple = (7, 28)
    rolling_stats: tuple = ("mean", "std")

    def __post_init__(self):
        object.__setattr__(self, "lags", tuple(int(v) for v in self.lags))
        object.__setattr__(self, "rolling_windows", tuple(int(v) for v in self.rolling_windows))
        object.__setattr__(self, "rolling_stats", tuple(self.rolling_stats))
        if not (self.lags and self.rolling_windows and self.rolling_stats):
            raise InvalidInputError("lags, rolling_windows and rolling_stats must all be nonempty")
        if any(v < 1 for v in self.lags + self.rolling_windows):
            raise InvalidInputError("lags and windows must be positive")
        unknown = set(self.rolling_stats) - set(ROLLING_STATS)
        if unknown:
            raise InvalidInputError(f"unknown rolling statistics {sorted(unknown)}")

    @property
    def horizon(self) -> int:
        return max(self.lags + self.rolling_windows)

    @property
    def n_features(self) -> int:
        return len(self.lags) + len(self.rolling_windows) * len(self.rolling_stats)

    def to_dict(self) -> dict:
        return {k: list(v) for k, v in asdict(self).items()}


@dataclass(frozen=True)
class NormalizationParams:
    min: float
    max: float

    def __post_init__(self):
        if not self.max > self.min:
            raise InvalidInputError("normalisation range is degenerate (max <= min)")

    def apply(self, values):
        return (np.asarray(values, dtype=float) - self.min) / (self.max - self.min)

    def invert(self, values):
        return np.asarray(values, dtype=float) * (self.max - self.min) + self.min

    def to_dict(self) -> dict:
        return asdict(self)


def _parse_float(text: str, row: int, column: str) -> float:
    try:
        value = float(text)
    except (TypeError, ValueError):
        raise CsvParseError(f"column {column!r}: cannot parse {text!r} as a number", row) from None
    if not math.isfinite(value):
        raise CsvParseError(f"column {column!r}: non-finite value {text!r}", row)
    return value


def _read_rows(path) -> tuple[list[str], list[list[str]]]:
    path = Path(path)
    if not path.exists():
        raise InvalidInputError(f"{path}: no such file")
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise CsvParseError(f"{path}: file is empty")
        rows = [r for r in reader if r]
    if not rows:
        raise CsvParseError(f"{path}: no data rows after the header")
    return [h.strip() for h in header], rows


def _parse_timestamp(text: str, row: int):
    """An ISO-8601 instant or an integer time step."""
    try:
        return int(text)
    except ValueError:
        pass
    try:
        return datetime.fromisoformat(text)
    except ValueError:
        raise CsvParseError(f"bad timestamp {text!r} (expected ISO-8601 or an integer step)", row) from None


def load_series_csv(path) -> dict:
    """Read a long-format file (``series_id,timestamp,value``) into one SeriesFrame per series_id."""
    header, rows = _read_rows(path)
    missing = {"series_id", "timestamp", "value"} - set(header)
    if missing:
        raise CsvParseError(f"missing column(s) {sorted(missing)}")
    col = {name: header.index(name) for name in ("series_id", "timestamp", "value")}
    grouped: dict[str, tuple[list, list]] = {}
    for n, row in enumerate(rows, start=1):
        if len(row) != len(header):
            raise CsvParseError(f"expected {len(header)} cells, found {len(row)}", n)
        sid = row[col["series_id"]].strip()
        ts = _parse_timestamp(row[col["timestamp"]].strip(), n)
        value = _parse_float(row[col["value"]], n, "value")
        stamps, values = grouped.setdefault(sid, ([], []))
        if stamps and type(stamps[-1]) is not type(ts):
            raise CsvParseError(f"series {sid!r} mixes integer and ISO-8601 timestamps", n)
        if stamps and not stamps[-1] < ts:
            raise CsvParseError(f"timestamp {ts} does not increase within series {sid!r}", n)
        stamps.append(ts)
        values.append(value)
    return {sid: SeriesFrame(tuple(s), v, sid) for sid, (s, v) in grouped.items()}


def load_wide_csv(path) -> tuple[Dataset, Optional[np.ndarray]]:
    """Read ``x1..xd,y[,label]``; returns the dataset and the labels (or None)."""
    header, rows = _read_rows(path)
    if "y" not in header:
        raise CsvParseError("missing column 'y'")
    feature_cols = [h for h in header if h not in ("y", "label")]
    if not feature_cols:
        raise CsvParseError("no feature columns")
    idx = {h: i for i, h in enumerate(header)}
    X, y, labels = [], [], []
    for n, row in enumerate(rows, start=1):
        if len(row) != len(header):
            raise CsvParseError(f"expected {len(header)} cells, found {len(row)}", n)
        X.append([_parse_float(row[idx[c]], n, c) for c in feature_cols])
        y.append(_parse_float(row[idx["y"]], n, "y"))
        if "label" in idx:
            try:
                labels.append(int(row[idx["label"]]))
            except ValueError:
                raise CsvParseError(f"label {row[idx['label']]!r} is not an integer", n) from None
    return Dataset(X, y), (np.array(labels, dtype=np.int64) if "label" in idx else None)


def load_csv(path, schema: str = "series", series_id: Optional[str] = None):
    """Load ``path`` as a single SeriesFrame (``schema="series"``) or a Dataset (``"wide"``)."""
    if schema == "wide":
        return load_wide_csv(path)[0]
    if schema != "series":
        raise InvalidInputError(f"unknown schema {schema!r}")
    frames = load_series_csv(path)
    if series_id is None:
        if len(frames) != 1:
            raise InvalidInputError(f"file holds {len(frames)} series; pass series_id")
        return next(iter(frames.values()))
    if series_id not in frames:
        raise InvalidInputError(f"series {series_id!r} not found")
    return frames[series_id]


def write_wide_csv(path, dataset: Dataset, labels=None) -> None:
    path = Path(path)
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow([f"x{j + 1}" for j in range(dataset.dimension)] + ["y"] + (["label"] if labels is not None else []))
        for i in range(len(dataset)):
            row = [repr(float(v)) for v in dataset.X[i]] + [repr(float(dataset.y[i]))]
            if labels is not None:
                row.append(int(labels[i]))
            w.writerow(row)


def write_series_csv(path, frames: Sequence[SeriesFrame]) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["series_id", "timestamp", "value"])
        for frame in frames:
            for ts, v in zip(frame.timestamps, frame.values):
                stamp = ts.isoformat() if hasattr(ts, "isoformat") else str(ts)
                w.writerow([frame.series_id, stamp, repr(float(v))])


def build_features(series: SeriesFrame, spec: FeatureSpec) -> Dataset:
    """Lagged values and trailing window statistics, one row per time t >= horizon.

    Windows cover ``t-w .. t-1`` so no feature sees the value at ``t``. The
    rolling std is the population std (ddof=0).
    """
    v = series.values
    h = spec.horizon
    if len(v) <= h:
        raise InvalidInputError(f"series of length {len(v)} is too short for horizon {h}")
    t = np.arange(h, len(v))
    cols = [v[t - lag] for lag in spec.lags]
    for w in spec.rolling_windows:
        windows = np.lib.stride_tricks.sliding_window_view(v, w)[t - w]
        for stat in spec.rolling_stats:
            cols.append(windows.mean(axis=1) if stat == "mean" else windows.std(axis=1))
    return Dataset(np.column_stack(cols), v[t])


def fit_normalization(train: SeriesFrame) -> NormalizationParams:
    return NormalizationParams(float(np.min(train.values)), float(np.max(train.values)))


def normalize_unit_interval(train: SeriesFrame):
    """Scale ``train`` to [0, 1]; returns the scaled series and the parameters."""
    params = fit_normalization(train)
    return train.with_values(params.apply(train.values)), params


def split_sizes(n: int, fractions=(0.8, 0.1, 0.1)) -> tuple[int, int, int]:
    if len(fractions) != 3 or any(f < 0 for f in fractions) or not math.isclose(sum(fractions), 1.0):
        raise InvalidInputError("split fractions must be three nonnegative numbers summing to 1")
    n_train = math.floor(fractions[0] * n)
    n_val = math.floor(fractions[1] * n)
    return n_train, n_val, n - n_train - n_val


def temporal_split(dataset: Dataset, fractions=(0.8, 0.1, 0.1)):
    n_train, n_val, n_test = split_sizes(len(dataset), fractions)
    if min(n_train, n_val, n_test) < 1:
        raise InvalidInputError(f"split of {len(dataset)} rows leaves an empty part")
    return (
        dataset.subset(slice(0, n_train)),
        dataset.subset(slice(n_train, n_train + n_val)),
        dataset.subset(slice(n_train + n_val, len(dataset))),
    )


def make_batches(test: Dataset, batch_size: int = 200) -> list[Dataset]:
    if batch_size < 1:
        raise InvalidInputError("batch_size must be >= 1")
    return [test.subset(slice(s, s + batch_size)) for s in range(0, len(test), batch_size)]


@dataclass
class PreparedSeries:
    train: Dataset
    validation: Dataset
    test: Dataset
    normalization: Optional[NormalizationParams] = None
    # index into the series of each row's target, per split
    target_index: dict = field(default_factory=dict, repr=False)


def prepare_series(series: SeriesFrame, spec: FeatureSpec, fractions=(0.8, 0.1, 0.1),
                   normalize: bool = True,
                   params: Optional[NormalizationParams] = None) -> PreparedSeries:
    """Features, optional [0, 1] scaling and the temporal split for one series.

    Unless ``params`` is given, scaling parameters come from the values the
    training rows can see (their features and targets), so later values
    never influence them.
    """
    h = spec.horizon
    n_rows = len(series) - h
    if n_rows < 1:
        raise InvalidInputError(f"series of length {len(series)} is too short for horizon {h}")
    n_train, n_val, _ = split_sizes(n_rows, fractions)
    if normalize:
        if params is None:
            params = fit_normalization(series.slice(0, h + n_train))
        series = series.with_values(params.apply(series.values))
    train, val, test = temporal_split(build_features(series, spec), fractions)
    idx = np.arange(h, len(series))
    target_index = {
        "train": idx[:n_train],
        "validation": idx[n_train:n_train + n_val],
        "test": idx[n_train + n_val:],
    }
    return PreparedSeries(train, val, test, params, target_index)
