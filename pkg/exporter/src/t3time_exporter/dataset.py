"""CSV ingestion and window enumeration.

This mirrors the forecaster's data contract without importing it: named
benchmarks split into their published (train, val, test) step counts with
the lookback prepended to val/test as context, windows slide with stride 1,
and window id i covers steps [i, i + L) of its split. Smaller files fall
back to a 0.7/0.1/0.2 chronological split so toy exports work with any
registered template.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from datetime import datetime

import numpy as np

SPLIT_STEPS = {
    "ETTm1": (34465, 11521, 11521),
    "ETTm2": (34465, 11521, 11521),
    "ETTh1": (8545, 2881, 2881),
    "ETTh2": (8545, 2881, 2881),
    "ECL": (18317, 2633, 5261),
    "Weather": (36792, 5271, 10540),
    "Exchange": (5120, 665, 1422),
    "ILI": (617, 74, 170),
}

_TS_FORMATS = ("%Y-%m-%d %H:%M:%S", "%Y-%m-%d %H:%M", "%Y/%m/%d %H:%M",
               "%Y-%m-%d", "%Y/%m/%d")


class DatasetError(ValueError):
    pass


@dataclass
class Series:
    timestamps: list[datetime]
    values: np.ndarray  # [steps, variables]
    names: list[str]

    def __len__(self):
        return self.values.shape[0]


def load_csv(path: str) -> Series:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or len(header) < 2:
            raise DatasetError(f"{path}: need a header with timestamp + value columns")
        names = [h.strip() for h in header[1:]]
        timestamps, rows = [], []
        for row_num, row in enumerate(reader, start=2):
            if not row:
                continue
            stamp = None
            for fmt in _TS_FORMATS:
                try:
                    stamp = datetime.strptime(row[0].strip(), fmt)
                    break
                except ValueError:
                    continue
            if stamp is None:
                raise DatasetError(f"row {row_num}: unparseable timestamp {row[0]!r}")
            timestamps.append(stamp)
            try:
                rows.append([float(cell) for cell in row[1:]])
            except ValueError:
                raise DatasetError(f"row {row_num}: non-numeric cell") from None
    if not rows:
        raise DatasetError(f"{path}: no data rows")
    return Series(timestamps, np.asarray(rows, dtype=np.float64), names)


def select_split(series: Series, dataset: str, split: str, lookback: int) -> Series:
    """The requested split with `lookback` context steps prepended for
    val/test (matching the forecaster's window numbering)."""
    if split not in ("train", "val", "test"):
        raise DatasetError(f"split must be train/val/test, got {split!r}")
    total = len(series)
    published = SPLIT_STEPS.get(dataset)
    if published and total >= sum(published):
        counts = published
    else:
        counts = (int(0.7 * total), int(0.1 * total), int(0.2 * total))
    t_end = counts[0]
    v_end = t_end + counts[1]
    s_end = v_end + counts[2]
    bounds = {
        "train": (0, t_end),
        "val": (max(0, t_end - lookback), v_end),
        "test": (max(0, v_end - lookback), s_end),
    }[split]
    return Series(series.timestamps[bounds[0]: bounds[1]],
                  series.values[bounds[0]: bounds[1]], series.names)


def window_count(series: Series, lookback: int, horizon: int) -> int:
    return max(0, len(series) - lookback - horizon + 1)


def iter_windows(series: Series, lookback: int, horizon: int):
    """Yield (window_id, timestamps, values[L, N]) in enumeration order."""
    for start in range(window_count(series, lookback, horizon)):
        yield (start, series.timestamps[start: start + lookback],
               series.values[start: start + lookback])


def normalize_lookback(values: np.ndarray) -> np.ndarray:
    """Per-variable z-score of a [L, N] window (the optional prompt scale)."""
    mean = values.mean(axis=0)
    std = values.std(axis=0)
    std = np.where(std < 1e-12, 1.0, std)
    return (values - mean) / std
