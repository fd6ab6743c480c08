"""Seeded generator of synthetic hourly building loads.

Each building is built from a deterministic 168-hour template tiled over the
requested span, then perturbed by multiplicative lognormal noise and (for
residential buildings) a Poisson process of short appliance spikes. With
``noise_scale = 0`` the noise and spikes vanish and the series is exactly
weekly periodic.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from datetime import datetime, timezone

import numpy as np

from .core import BuildingRecord, BuildingType, LoadSeries

RESIDENTIAL_NOISE_FACTOR = 2.5
SPIKES_PER_DAY = 1.0


@dataclass(frozen=True)
class SynthConfig:
    n_residential: int = 10
    n_commercial: int = 10
    n_days: int = 365
    seed: int = 0
    base_load_range: tuple[float, float] = (0.5, 2.0)
    peak_load_range: tuple[float, float] = (1.0, 4.0)
    noise_scale: float = 0.1
    weekend_attenuation: float = 0.7
    n_regions: int = 4
    start: datetime = field(default_factory=lambda: datetime(2018, 1, 1, tzinfo=timezone.utc))

    def __post_init__(self):
        if self.n_residential < 0 or self.n_commercial < 0 or self.n_days < 1:
            raise ValueError("building counts must be >= 0 and n_days >= 1")
        for lo, hi in (self.base_load_range, self.peak_load_range):
            if not 0 < lo <= hi:
                raise ValueError("load ranges must be positive with lo <= hi")
        if self.noise_scale < 0:
            raise ValueError("noise_scale must be >= 0")
        if not 0.0 <= self.weekend_attenuation <= 1.0:
            raise ValueError("weekend_attenuation must lie in [0, 1]")
        if self.n_regions < 1:
            raise ValueError("n_regions must be >= 1")

    @property
    def n_buildings(self) -> int:
        return self.n_residential + self.n_commercial


def _circular_bump(hours: np.ndarray, center: float, width: float) -> np.ndarray:
    d = np.abs(hours - center)
    d = np.minimum(d, 24.0 - d)
    return np.exp(-0.5 * (d / width) ** 2)


def _weekly_template(kind: BuildingType, base: float, peak: float, shift: float,
                     weekend_attenuation: float, start_weekday: int) -> np.ndarray:
    hour = np.arange(168) % 24
    weekday = (np.arange(168) // 24 + start_weekday) % 7
    weekend = weekday >= 5
    if kind is BuildingType.COMMERCIAL:
        phase = (hour - 6.0 - shift) / 14.0
        bump = np.where((phase > 0) & (phase < 1), np.sin(np.pi * phase) ** 2, 0.0)
        bump = np.where(weekend, bump * (1.0 - weekend_attenuation), bump)
        return base + peak * bump
    morning = np.where(weekend, 9.5, 7.5) + shift
    bump = 0.6 * _circular_bump(hour, morning, 1.2) + _circular_bump(hour, 19.0 + shift, 2.0)
    return base + peak * bump


def building_type_of(config: SynthConfig, ordinal: int) -> BuildingType:
    return BuildingType.RESIDENTIAL if ordinal < config.n_residential else BuildingType.COMMERCIAL


def generate_building(config: SynthConfig, building_ordinal: int) -> tuple[BuildingRecord, LoadSeries]:
    if not 0 <= building_ordinal < config.n_buildings:
        raise ValueError(f"ordinal {building_ordinal} outside [0, {config.n_buildings})")
    rng = np.random.default_rng([config.seed, building_ordinal])
    kind = building_type_of(config, building_ordinal)
    base = rng.uniform(*config.base_load_range)
    peak = rng.uniform(*config.peak_load_range)
    shift = rng.uniform(-1.0, 1.0)
    region = int(rng.integers(config.n_regions))
    lat = float(np.round(rng.uniform(25.0, 49.0), 4))
    lon = float(np.round(rng.uniform(-124.0, -67.0), 4))

    template = _weekly_template(kind, base, peak, shift, config.weekend_attenuation, config.start.weekday())
    n_hours = 24 * config.n_days
    values = np.tile(template, n_hours // 168 + 1)[:n_hours]

    sigma = config.noise_scale * (RESIDENTIAL_NOISE_FACTOR if kind is BuildingType.RESIDENTIAL else 1.0)
    if sigma > 0:
        values = values * np.exp(sigma * rng.standard_normal(n_hours) - 0.5 * sigma**2)
        if kind is BuildingType.RESIDENTIAL:
            n_spikes = rng.poisson(SPIKES_PER_DAY * config.n_days)
            at = rng.integers(0, n_hours, size=n_spikes)
            np.add.at(values, at, peak * rng.uniform(0.5, 1.5, size=n_spikes))

    prefix = "res" if kind is BuildingType.RESIDENTIAL else "com"
    record = BuildingRecord(
        id=f"{prefix}-{building_ordinal:05d}",
        building_type=kind,
        latitude=lat,
        longitude=lon,
        region_id=f"R{region:02d}",
        dataset_name=f"synthetic-{kind.value}",
    )
    return record, LoadSeries(config.start, values)


def generate_corpus(config: SynthConfig) -> list[tuple[BuildingRecord, LoadSeries]]:
    return [generate_building(config, i) for i in range(config.n_buildings)]
