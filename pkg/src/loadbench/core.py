"""Shared domain types and covariate extraction.

All series are hourly and timezone-aware (UTC). Calendar fields are
zero-indexed before cyclic encoding: hour 0..23, weekday 0..6 (Monday = 0),
day of year 0..365 with a fixed period of 366 so leap and non-leap years
encode identically.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from datetime import datetime, timedelta, timezone
from functools import cached_property
from typing import Optional

import numpy as np

CONTEXT_HOURS = 168
HORIZON_HOURS = 24
WINDOW_HOURS = CONTEXT_HOURS + HORIZON_HOURS

HOUR = timedelta(hours=1)

DAY_OF_YEAR_PERIOD = 366
DAY_OF_WEEK_PERIOD = 7
HOUR_OF_DAY_PERIOD = 24

COVARIATE_NAMES = (
    "day_of_year_sin",
    "day_of_year_cos",
    "day_of_week_sin",
    "day_of_week_cos",
    "hour_of_day_sin",
    "hour_of_day_cos",
    "latitude_norm",
    "longitude_norm",
    "building_type_flag",
)


class BuildingType(enum.Enum):
    RESIDENTIAL = "residential"
    COMMERCIAL = "commercial"

    @classmethod
    def parse(cls, text: str) -> "BuildingType":
        try:
            return cls(text.strip().lower())
        except ValueError:
            raise ValueError(f"unknown building type: {text!r}") from None

    @property
    def flag(self) -> int:
        return 1 if self is BuildingType.COMMERCIAL else 0


def as_utc(ts: datetime) -> datetime:
    """Return ``ts`` as an aware UTC datetime; naive values are taken as UTC."""
    if ts.tzinfo is None:
        return ts.replace(tzinfo=timezone.utc)
    return ts.astimezone(timezone.utc)


def _check_hour_aligned(ts: datetime) -> None:
    if ts.minute or ts.second or ts.microsecond:
        raise ValueError(f"timestamp is not hour-aligned: {ts.isoformat()}")


def _frozen(values) -> np.ndarray:
    arr = np.array(values, dtype=float)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class LoadSeries:
    """Hourly load in kWh starting at ``start`` with no gaps."""

    start: datetime
    values: np.ndarray

    def __post_init__(self):
        start = as_utc(self.start)
        _check_hour_aligned(start)
        object.__setattr__(self, "start", start)
        values = _frozen(self.values)
        if values.ndim != 1 or values.size == 0:
            raise ValueError("load series must be a non-empty 1-D sequence")
        if not np.all(np.isfinite(values)):
            raise ValueError("load series contains non-finite values")
        if np.any(values < 0):
            raise ValueError("load series contains negative values")
        object.__setattr__(self, "values", values)

    def __len__(self) -> int:
        return self.values.size

    def __eq__(self, other) -> bool:
        if not isinstance(other, LoadSeries):
            return NotImplemented
        return self.start == other.start and np.array_equal(self.values, other.values)

    def timestamp(self, i: int) -> datetime:
        return self.start + i * HOUR

    def timestamps(self) -> list[datetime]:
        return [self.start + i * HOUR for i in range(len(self))]

    def slice(self, begin: int, end: int) -> "LoadSeries":
        return LoadSeries(self.timestamp(begin), self.values[begin:end])


@dataclass(frozen=True)
class BuildingRecord:
    id: str
    building_type: BuildingType
    latitude: float = 0.0
    longitude: float = 0.0
    region_id: str = ""
    dataset_name: str = ""

    def __post_init__(self):
        if not isinstance(self.building_type, BuildingType):
            object.__setattr__(self, "building_type", BuildingType.parse(str(self.building_type)))
        if not -90.0 <= self.latitude <= 90.0:
            raise ValueError(f"latitude out of range: {self.latitude}")
        if not -180.0 <= self.longitude <= 180.0:
            raise ValueError(f"longitude out of range: {self.longitude}")


@dataclass(frozen=True)
class CovariateVector:
    day_of_year_sin: float
    day_of_year_cos: float
    day_of_week_sin: float
    day_of_week_cos: float
    hour_of_day_sin: float
    hour_of_day_cos: float
    latitude_norm: float
    longitude_norm: float
    building_type_flag: int

    def as_array(self) -> np.ndarray:
        return np.array([getattr(self, name) for name in COVARIATE_NAMES], dtype=float)


def _cyclic(value: float, period: float) -> tuple[float, float]:
    phase = 2.0 * math.pi * value / period
    return math.sin(phase), math.cos(phase)


def extract_covariates(timestamp: datetime, building: BuildingRecord) -> CovariateVector:
    ts = as_utc(timestamp)
    _check_hour_aligned(ts)
    doy = _cyclic(ts.timetuple().tm_yday - 1, DAY_OF_YEAR_PERIOD)
    dow = _cyclic(ts.weekday(), DAY_OF_WEEK_PERIOD)
    hod = _cyclic(ts.hour, HOUR_OF_DAY_PERIOD)
    return CovariateVector(
        day_of_year_sin=doy[0],
        day_of_year_cos=doy[1],
        day_of_week_sin=dow[0],
        day_of_week_cos=dow[1],
        hour_of_day_sin=hod[0],
        hour_of_day_cos=hod[1],
        latitude_norm=building.latitude / 90.0,
        longitude_norm=building.longitude / 180.0,
        building_type_flag=building.building_type.flag,
    )


def covariate_matrix(start: datetime, n_hours: int, building: BuildingRecord) -> np.ndarray:
    """Covariates for ``n_hours`` consecutive hours as an ``(n_hours, 9)`` array."""
    start = as_utc(start)
    return np.stack([extract_covariates(start + i * HOUR, building).as_array() for i in range(n_hours)])


@dataclass(frozen=True, eq=False)
class Window:
    context: LoadSeries
    target: LoadSeries
    building: Optional[BuildingRecord] = field(default=None, compare=False)

    def __post_init__(self):
        if len(self.context) != CONTEXT_HOURS or len(self.target) != HORIZON_HOURS:
            raise ValueError(
                f"window needs {CONTEXT_HOURS}+{HORIZON_HOURS} hours, "
                f"got {len(self.context)}+{len(self.target)}"
            )
        if self.context.timestamp(CONTEXT_HOURS) != self.target.start:
            raise ValueError("context and target are not contiguous")

    def __eq__(self, other) -> bool:
        if not isinstance(other, Window):
            return NotImplemented
        return self.context == other.context and self.target == other.target

    @property
    def start(self) -> datetime:
        return self.context.start

    @property
    def values(self) -> np.ndarray:
        return np.concatenate([self.context.values, self.target.values])

    @cached_property
    def covariates(self) -> np.ndarray:
        if self.building is None:
            raise ValueError("window has no building record; covariates unavailable")
        return covariate_matrix(self.start, WINDOW_HOURS, self.building)


def window_count(n_hours: int, stride: int) -> int:
    if stride < 1:
        raise ValueError("stride must be >= 1")
    if n_hours < WINDOW_HOURS:
        return 0
    return (n_hours - WINDOW_HOURS) // stride + 1


def sliding_windows(
    series: LoadSeries, stride: int = HORIZON_HOURS, building: Optional[BuildingRecord] = None
) -> list[Window]:
    windows = []
    for k in range(window_count(len(series), stride)):
        begin = k * stride
        windows.append(
            Window(
                series.slice(begin, begin + CONTEXT_HOURS),
                series.slice(begin + CONTEXT_HOURS, begin + WINDOW_HOURS),
                building,
            )
        )
    return windows
