"""Dataset ingestion, chronological splits, sliding windows, per-window
normalization, and few-shot subsetting.

Window ids are positions in the split's stride-1 enumeration; the embedding
store written by the exporter follows the same numbering, so id ``i`` in a
store built for a split always describes the lookback starting at step
``i`` of that split (including any context rows prepended from the previous
split).
"""

from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass
from datetime import datetime

import numpy as np

from .errors import ConfigError, DataError, DimensionError, InsufficientDataError

MARKER_DIM = 5  # month, day, weekday, hour, minute-bucket


@dataclass
class DatasetSpec:
    """Per-benchmark metadata: split step counts and the prompt cadence."""

    name: str
    split_steps: tuple[int, int, int]
    variables: int
    frequency_phrase: str
    default_lookback: int = 96


# Split sizes follow the published per-dataset (train, val, test) step
# counts; val and test windows may draw lookback context from the previous
# segment (toggleable below).
DATASETS: dict[str, DatasetSpec] = {
    "ETTm1": DatasetSpec("ETTm1", (34465, 11521, 11521), 7, "15 minutes"),
    "ETTm2": DatasetSpec("ETTm2", (34465, 11521, 11521), 7, "15 minutes"),
    "ETTh1": DatasetSpec("ETTh1", (8545, 2881, 2881), 7, "hour"),
    "ETTh2": DatasetSpec("ETTh2", (8545, 2881, 2881), 7, "hour"),
    "ECL": DatasetSpec("ECL", (18317, 2633, 5261), 321, "hour"),
    "Weather": DatasetSpec("Weather", (36792, 5271, 10540), 21, "10 minutes"),
    "Exchange": DatasetSpec("Exchange", (5120, 665, 1422), 8, "day"),
    "ILI": DatasetSpec("ILI", (617, 74, 170), 7, "week", default_lookback=36),
}

_TIMESTAMP_FORMATS = ("%Y-%m-%d %H:%M:%S", "%Y-%m-%d %H:%M", "%Y/%m/%d %H:%M",
                      "%Y-%m-%d", "%Y/%m/%d")


def _parse_timestamp(text: str, row: int) -> datetime:
    for fmt in _TIMESTAMP_FORMATS:
        try:
            return datetime.strptime(text, fmt)
        except ValueError:
            continue
    raise DataError(f"row {row}: unparseable timestamp {text!r}")


@dataclass
class SeriesTable:
    """Chronological multivariate series: timestamps plus a [T, N] matrix."""

    timestamps: list[datetime]
    values: np.ndarray
    variable_names: list[str]

    def __post_init__(self):
        if self.values.ndim != 2:
            raise DataError(f"values must be [steps, variables], got {self.values.shape}")
        if len(self.timestamps) != self.values.shape[0]:
            raise DataError(
                f"{len(self.timestamps)} timestamps for {self.values.shape[0]} rows")

    def __len__(self) -> int:
        return self.values.shape[0]

    @property
    def num_variables(self) -> int:
        return self.values.shape[1]

    def slice(self, start: int, stop: int) -> "SeriesTable":
        return SeriesTable(self.timestamps[start:stop], self.values[start:stop],
                           self.variable_names)


def load_csv(path: str) -> SeriesTable:
    """First column timestamp, remaining columns numeric, header required."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{path}: empty file") from None
        names = [h.strip() for h in header[1:]]
        if not names:
            raise DataError(f"{path}: no value columns")
        timestamps: list[datetime] = []
        rows: list[list[float]] = []
        for row_num, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(names) + 1:
                raise DataError(
                    f"row {row_num}: expected {len(names) + 1} cells, got {len(row)}")
            timestamps.append(_parse_timestamp(row[0].strip(), row_num))
            parsed = []
            for col, cell in enumerate(row[1:], start=2):
                try:
                    parsed.append(float(cell))
                except ValueError:
                    raise DataError(
                        f"row {row_num}, column {col}: unparseable value {cell!r}") from None
            rows.append(parsed)
    if not rows:
        raise DataError(f"{path}: no data rows")
    for i in range(1, len(timestamps)):
        if timestamps[i] <= timestamps[i - 1]:
            raise DataError(
                f"row {i + 2}: timestamp {timestamps[i]} not after {timestamps[i - 1]}")
    return SeriesTable(timestamps, np.asarray(rows, dtype=np.float64), names)


# ---------------------------------------------------------------------------
# splits


@dataclass
class SplitTables:
    train: SeriesTable
    val: SeriesTable
    test: SeriesTable

    def sizes(self) -> tuple[int, int, int]:
        return (len(self.train), len(self.val), len(self.test))


def split(table: SeriesTable, steps_or_ratios, context: int = 0,
          include_context: bool = True) -> SplitTables:
    """Chronological (train, val, test) split.

    `steps_or_ratios` is either absolute step counts or fractions summing to
    <= 1. When `include_context` is set, val and test are extended backwards
    by `context` steps (the lookback) so their first targets start exactly at
    the split boundary.
    """
    total = len(table)
    a, b, c = steps_or_ratios
    if isinstance(a, float) or isinstance(b, float) or isinstance(c, float):
        counts = (int(a * total), int(b * total), int(c * total))
    else:
        counts = (int(a), int(b), int(c))
    if sum(counts) > total:
        raise DataError(
            f"split counts {counts} exceed the {total} available steps")
    t_end = counts[0]
    v_end = t_end + counts[1]
    s_end = v_end + counts[2]
    ctx = context if include_context else 0
    return SplitTables(
        train=table.slice(0, t_end),
        val=table.slice(max(0, t_end - ctx), v_end),
        test=table.slice(max(0, v_end - ctx), s_end),
    )


def split_named(table: SeriesTable, name: str, context: int,
                include_context: bool = True) -> SplitTables:
    spec = dataset_spec(name)
    if table.num_variables != spec.variables:
        raise DataError(
            f"{name} expects {spec.variables} variables, file has {table.num_variables}")
    return split(table, spec.split_steps, context=context, include_context=include_context)


def dataset_spec(name: str) -> DatasetSpec:
    if name not in DATASETS:
        raise ConfigError(f"unknown dataset {name!r}; known: {sorted(DATASETS)}")
    return DATASETS[name]


def few_shot_subset(train: SeriesTable, fraction: float, lookback: int,
                    horizon: int) -> SeriesTable:
    """First floor(fraction * len) steps of the training split.

    Raises InsufficientDataError when the subset cannot hold one full
    (lookback + horizon) window.
    """
    if not 0.0 < fraction <= 1.0:
        raise ConfigError(f"few-shot fraction must be in (0, 1], got {fraction}")
    steps = math.floor(fraction * len(train))
    if steps < lookback + horizon:
        raise InsufficientDataError(
            f"few-shot fraction {fraction} keeps {steps} steps, fewer than the "
            f"{lookback + horizon} needed for one window")
    return train.slice(0, steps)


# ---------------------------------------------------------------------------
# time markers


def calendar_markers(timestamps: list[datetime]) -> np.ndarray:
    """Per-step (month, day, weekday, hour, minute-bucket) in [-0.5, 0.5]."""
    out = np.empty((len(timestamps), MARKER_DIM), dtype=np.float32)
    for i, ts in enumerate(timestamps):
        out[i, 0] = (ts.month - 1) / 11.0 - 0.5
        out[i, 1] = (ts.day - 1) / 30.0 - 0.5
        out[i, 2] = ts.weekday() / 6.0 - 0.5
        out[i, 3] = ts.hour / 23.0 - 0.5
        out[i, 4] = (ts.minute // 15) / 3.0 - 0.5
    return out


# ---------------------------------------------------------------------------
# windows and normalization


@dataclass
class NormStats:
    """Per-(sample, variable) lookback statistics for inverting forecasts."""

    mean: np.ndarray  # [B, N]
    std: np.ndarray   # [B, N], zero-variance windows clamped to 1


@dataclass
class WindowBatch:
    x_norm: np.ndarray        # [B, N, L]
    target_norm: np.ndarray   # [B, L_p, N]
    stats: NormStats
    window_indices: np.ndarray
    time_markers: np.ndarray  # [B, L, MARKER_DIM]
    x_raw: np.ndarray         # [B, N, L] pre-normalization (stub embedder input)

    @property
    def size(self) -> int:
        return self.x_norm.shape[0]


def normalize_window(x_raw: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Per-variable z-score of one [N, L] window over its lookback.

    Population statistics; zero-variance rows keep mean subtraction and a
    std clamped to 1 so the result is all zeros rather than a blowup.
    """
    mean = x_raw.mean(axis=-1)
    std = x_raw.std(axis=-1)
    std = np.where(std < 1e-12, 1.0, std)
    x_norm = (x_raw - mean[:, None]) / std[:, None]
    return x_norm, mean, std


def denormalize_forecast(y_norm: np.ndarray, stats: NormStats) -> np.ndarray:
    """Invert normalization on forecasts [B, L_p, N] using lookback stats."""
    if y_norm.ndim != 3 or y_norm.shape[0] != stats.mean.shape[0] \
            or y_norm.shape[2] != stats.mean.shape[1]:
        raise DimensionError(
            f"forecast {y_norm.shape} does not match stats for "
            f"{stats.mean.shape} (batch, variables)")
    return y_norm * stats.std[:, None, :] + stats.mean[:, None, :]


class WindowSet:
    """Stride-1 sliding (lookback, horizon) windows over one split.

    A pure indexed view: window ``i`` covers steps [i, i+L) with targets
    [i+L, i+L+L_p). Enumeration order defines the embedding-store ids.
    """

    def __init__(self, table: SeriesTable, lookback: int, horizon: int,
                 normalization: str = "instance"):
        if normalization not in ("instance", "global"):
            raise ConfigError(f"unknown normalization mode {normalization!r}")
        self.table = table
        self.lookback = lookback
        self.horizon = horizon
        self.normalization = normalization
        self.count = max(0, len(table) - lookback - horizon + 1)
        self._markers = calendar_markers(table.timestamps)
        if normalization == "global":
            self._global_mean = table.values.mean(axis=0)
            std = table.values.std(axis=0)
            self._global_std = np.where(std < 1e-12, 1.0, std)

    def __len__(self) -> int:
        return self.count

    def batch(self, indices) -> WindowBatch:
        idx = np.asarray(indices, dtype=np.int64)
        if idx.size and (idx.min() < 0 or idx.max() >= self.count):
            raise DataError(
                f"window indices out of range [0, {self.count})")
        length, horizon = self.lookback, self.horizon
        b = idx.size
        n = self.table.num_variables
        x_raw = np.empty((b, n, length), dtype=np.float64)
        target_raw = np.empty((b, horizon, n), dtype=np.float64)
        markers = np.empty((b, length, MARKER_DIM), dtype=np.float32)
        for out_i, win_i in enumerate(idx):
            start = int(win_i)
            x_raw[out_i] = self.table.values[start: start + length].T
            target_raw[out_i] = self.table.values[start + length: start + length + horizon]
            markers[out_i] = self._markers[start: start + length]

        if self.normalization == "instance":
            mean = x_raw.mean(axis=-1)
            std = x_raw.std(axis=-1)
            std = np.where(std < 1e-12, 1.0, std)
        else:
            mean = np.broadcast_to(self._global_mean, (b, n)).copy()
            std = np.broadcast_to(self._global_std, (b, n)).copy()
        x_norm = (x_raw - mean[..., None]) / std[..., None]
        target_norm = (target_raw - mean[:, None, :]) / std[:, None, :]
        return WindowBatch(
            x_norm=x_norm.astype(np.float32),
            target_norm=target_norm.astype(np.float32),
            stats=NormStats(mean=mean, std=std),
            window_indices=idx,
            time_markers=markers,
            x_raw=x_raw,
        )


def make_windows(table: SeriesTable, lookback: int, horizon: int,
                 normalization: str = "instance") -> WindowSet:
    """Build the stride-1 window view; an undersized segment yields an empty
    set with a warning (callers that need windows raise their own error)."""
    ws = WindowSet(table, lookback, horizon, normalization)
    if len(ws) == 0:
        warnings.warn(
            f"segment of {len(table)} steps cannot hold a single "
            f"{lookback}+{horizon} window; stream is empty", stacklevel=2)
    return ws
