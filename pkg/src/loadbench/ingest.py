"""Ingestion of metered building data: hourly resampling, gap filling,
exclusion rules and spike removal.

Missing hours are carried as NaN in a :class:`GappySeries` until
:func:`fill_missing` resolves them, so genuine zero readings are never
confused with gaps.
"""
from __future__ import annotations

import csv
import enum
from dataclasses import dataclass
from datetime import datetime, timezone
from pathlib import Path
from typing import Iterable, Sequence, Union

import numpy as np

from .core import HOUR, BuildingRecord, BuildingType, LoadSeries, as_utc


class Aggregation(enum.Enum):
    SUM = "sum"
    MEAN = "mean"


@dataclass(frozen=True)
class IngestPolicy:
    max_missing_fraction: float = 0.10
    long_gap_threshold: int = 168
    max_hourly_kw: float = 5100.0
    outlier_window: int = 24
    aggregation: Aggregation = Aggregation.MEAN

    def __post_init__(self):
        if not 0.0 <= self.max_missing_fraction <= 1.0:
            raise ValueError("max_missing_fraction must lie in [0, 1]")
        if self.long_gap_threshold <= 0 or self.max_hourly_kw <= 0 or self.outlier_window <= 0:
            raise ValueError("ingest thresholds must be positive")


@dataclass(frozen=True)
class Excluded:
    """A building dropped by an ingestion rule."""

    reason: str


@dataclass(frozen=True, eq=False)
class GappySeries:
    """Hourly series whose missing hours are NaN."""

    start: datetime
    values: np.ndarray

    def __len__(self) -> int:
        return len(self.values)

    @property
    def missing(self) -> np.ndarray:
        return np.isnan(self.values)


class IngestError(ValueError):
    pass


def _floor_hour(ts: datetime) -> datetime:
    return ts.replace(minute=0, second=0, microsecond=0)


def resample_hourly(
    timestamps: Sequence[datetime],
    values: Sequence[float],
    aggregation: Aggregation = Aggregation.MEAN,
) -> GappySeries:
    """Bucket samples into clock hours.

    NaN samples count as absent. Hours without a single observed sample stay
    NaN. Input must be sorted by timestamp.
    """
    if len(timestamps) != len(values):
        raise IngestError("timestamps and values differ in length")
    if not timestamps:
        raise IngestError("no samples")
    stamps = [as_utc(t) for t in timestamps]
    for i in range(1, len(stamps)):
        if stamps[i] < stamps[i - 1]:
            raise IngestError(
                f"samples not sorted: {stamps[i].isoformat()} follows {stamps[i - 1].isoformat()}"
            )
    start = _floor_hour(stamps[0])
    n_hours = int((_floor_hour(stamps[-1]) - start) / HOUR) + 1
    bucket = np.array([int((_floor_hour(t) - start) / HOUR) for t in stamps])
    vals = np.asarray(values, dtype=float)
    seen = ~np.isnan(vals)
    sums = np.bincount(bucket[seen], weights=vals[seen], minlength=n_hours)
    counts = np.bincount(bucket[seen], minlength=n_hours)
    out = np.full(n_hours, np.nan)
    has = counts > 0
    if aggregation is Aggregation.SUM:
        out[has] = sums[has]
    else:
        out[has] = sums[has] / counts[has]
    return GappySeries(start, out)


def _runs(mask: np.ndarray) -> list[tuple[int, int]]:
    """Half-open ``(begin, end)`` spans where ``mask`` is true."""
    padded = np.concatenate([[False], mask, [False]])
    edges = np.flatnonzero(np.diff(padded.astype(np.int8)))
    return list(zip(edges[::2].tolist(), edges[1::2].tolist()))


def fill_missing(series: GappySeries, policy: IngestPolicy = IngestPolicy()) -> Union[LoadSeries, Excluded]:
    values = np.array(series.values, dtype=float)
    missing = np.isnan(values)
    n = values.size
    if n == 0 or missing.all():
        return Excluded("all values missing")
    fraction = missing.mean()
    if fraction > policy.max_missing_fraction:
        return Excluded(f"missing fraction {fraction:.3f} exceeds {policy.max_missing_fraction:.3f}")
    for begin, end in _runs(missing):
        length = end - begin
        if length > policy.long_gap_threshold:
            values[begin:end] = 0.0
        elif begin == 0:
            values[begin:end] = values[end]
        elif end == n:
            values[begin:end] = values[begin - 1]
        else:
            left, right = values[begin - 1], values[end]
            frac = np.arange(1, length + 1) / (length + 1)
            values[begin:end] = left + (right - left) * frac
    return LoadSeries(series.start, values)


def _window_bounds(n: int, width: int) -> tuple[np.ndarray, np.ndarray]:
    before = width // 2
    after = width - before - 1
    idx = np.arange(n)
    return np.maximum(idx - before, 0), np.minimum(idx + after + 1, n)


def daily_peak_base_spread(series: LoadSeries) -> float:
    """Average daily peak minus average daily base, grouping by UTC calendar day."""
    offset = series.start.hour
    days = (np.arange(len(series)) + offset) // 24
    peaks, bases = [], []
    for d in np.unique(days):
        chunk = series.values[days == d]
        peaks.append(chunk.max())
        bases.append(chunk.min())
    return float(np.mean(peaks) - np.mean(bases))


def remove_outliers(series: LoadSeries, policy: IngestPolicy = IngestPolicy()) -> LoadSeries:
    """Replace isolated spikes by the median of their sliding window.

    A value is a spike when the distance to its nearest neighbour inside the
    centred window (12 h before, 11 h after) is strictly larger than the
    average daily peak-to-base spread. Medians are taken from the input
    series, so replacements do not cascade.
    """
    x = series.values
    n = x.size
    if n < 2:
        return series
    threshold = daily_peak_base_spread(series)
    lo, hi = _window_bounds(n, policy.outlier_window)
    out = x.copy()
    for i in range(n):
        window = x[lo[i]:hi[i]]
        others = np.delete(window, i - lo[i])
        if others.size == 0:
            continue
        nn = np.min(np.abs(others - x[i]))
        if nn > threshold:
            out[i] = np.median(window)
    return LoadSeries(series.start, out)


def apply_consumption_cap(series: LoadSeries, policy: IngestPolicy = IngestPolicy()) -> Union[LoadSeries, Excluded]:
    peak = float(series.values.max())
    if peak > policy.max_hourly_kw:
        return Excluded(f"max hourly consumption {peak:g} kWh exceeds cap {policy.max_hourly_kw:g}")
    return series


def clean(
    timestamps: Sequence[datetime],
    values: Sequence[float],
    policy: IngestPolicy = IngestPolicy(),
) -> Union[LoadSeries, Excluded]:
    """Full ingestion pipeline for one building."""
    hourly = resample_hourly(timestamps, values, policy.aggregation)
    filled = fill_missing(hourly, policy)
    if isinstance(filled, Excluded):
        return filled
    capped = apply_consumption_cap(filled, policy)
    if isinstance(capped, Excluded):
        return capped
    if len(capped) < policy.outlier_window:
        return capped
    return remove_outliers(capped, policy)


# -- CSV interfaces ----------------------------------------------------------

METADATA_COLUMNS = ("id", "dataset", "building_type", "latitude", "longitude", "region_id")


def parse_timestamp(text: str) -> datetime:
    """Parse RFC 3339 or ``YYYY-MM-DD HH:MM:SS``; naive values are UTC."""
    text = text.strip()
    if text.endswith(("Z", "z")):
        text = text[:-1] + "+00:00"
    try:
        ts = datetime.fromisoformat(text)
    except ValueError:
        raise IngestError(f"unparseable timestamp: {text!r}") from None
    return as_utc(ts)


def read_building_csv(path: Union[str, Path]) -> tuple[list[datetime], np.ndarray]:
    """Read a ``timestamp,kwh`` file; empty kwh fields become NaN."""
    stamps: list[datetime] = []
    vals: list[float] = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or not {"timestamp", "kwh"} <= set(reader.fieldnames):
            raise IngestError(f"{path}: expected header 'timestamp,kwh'")
        for lineno, row in enumerate(reader, start=2):
            stamps.append(parse_timestamp(row["timestamp"]))
            field = (row["kwh"] or "").strip()
            try:
                vals.append(float(field) if field else np.nan)
            except ValueError:
                raise IngestError(f"{path}:{lineno}: bad kwh value {field!r}") from None
    return stamps, np.array(vals, dtype=float)


def read_metadata_csv(path: Union[str, Path]) -> list[BuildingRecord]:
    records = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        missing = set(METADATA_COLUMNS) - set(reader.fieldnames or ())
        if missing:
            raise IngestError(f"{path}: metadata missing columns {sorted(missing)}")
        for row in reader:
            records.append(
                BuildingRecord(
                    id=row["id"],
                    building_type=BuildingType.parse(row["building_type"]),
                    latitude=float(row["latitude"] or 0.0),
                    longitude=float(row["longitude"] or 0.0),
                    region_id=row["region_id"],
                    dataset_name=row["dataset"],
                )
            )
    return records


def write_metadata_csv(path: Union[str, Path], records: Iterable[BuildingRecord]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(METADATA_COLUMNS)
        for r in records:
            writer.writerow(
                [r.id, r.dataset_name, r.building_type.value, repr(r.latitude), repr(r.longitude), r.region_id]
            )


def format_timestamp(ts: datetime) -> str:
    return ts.astimezone(timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ")
