import math
from datetime import datetime, timedelta, timezone

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import T0, series_of
from loadbench.core import (
    BuildingRecord,
    BuildingType,
    LoadSeries,
    Window,
    extract_covariates,
    sliding_windows,
    window_count,
)

residential = BuildingRecord("r", BuildingType.RESIDENTIAL, -33.9, 151.2, "R1", "d")


def test_hour_zero_has_zero_phase(commercial):
    cov = extract_covariates(datetime(2020, 3, 4, 0, tzinfo=timezone.utc), commercial)
    assert (cov.hour_of_day_sin, cov.hour_of_day_cos) == (0.0, 1.0)


def test_hour_six_is_quarter_period(commercial):
    cov = extract_covariates(datetime(2020, 3, 4, 6, tzinfo=timezone.utc), commercial)
    assert cov.hour_of_day_sin == pytest.approx(math.sin(math.pi / 2), abs=1e-15)
    assert cov.hour_of_day_cos == pytest.approx(0.0, abs=1e-15)


def test_building_type_flag(commercial):
    assert extract_covariates(T0, commercial).building_type_flag == 1
    assert extract_covariates(T0, residential).building_type_flag == 0


def test_coordinates_normalized(commercial):
    cov = extract_covariates(T0, commercial)
    assert cov.latitude_norm == pytest.approx(40.0 / 90.0)
    assert cov.longitude_norm == pytest.approx(-105.0 / 180.0)


def test_calendar_fields_are_zero_indexed(commercial):
    # 2018-01-01 is a Monday: day of year 0, weekday 0
    cov = extract_covariates(T0, commercial)
    assert (cov.day_of_year_sin, cov.day_of_year_cos) == (0.0, 1.0)
    assert (cov.day_of_week_sin, cov.day_of_week_cos) == (0.0, 1.0)


def test_naive_timestamps_are_utc(commercial):
    assert extract_covariates(datetime(2018, 1, 1, 5), commercial) == extract_covariates(
        datetime(2018, 1, 1, 5, tzinfo=timezone.utc), commercial)


def test_rejects_non_hour_aligned(commercial):
    with pytest.raises(ValueError):
        extract_covariates(datetime(2018, 1, 1, 5, 30, tzinfo=timezone.utc), commercial)


hours = st.integers(min_value=0, max_value=24 * 365 * 30)


@given(hours)
def test_sin_cos_pairs_on_unit_circle(offset):
    cov = extract_covariates(T0 + timedelta(hours=offset), residential)
    for prefix in ("day_of_year", "day_of_week", "hour_of_day"):
        s, c = getattr(cov, prefix + "_sin"), getattr(cov, prefix + "_cos")
        assert abs(s * s + c * c - 1.0) < 1e-12


@given(hours)
def test_daily_and_weekly_periodicity(offset):
    t = T0 + timedelta(hours=offset)
    a = extract_covariates(t, residential)
    day = extract_covariates(t + timedelta(days=1), residential)
    week = extract_covariates(t + timedelta(days=7), residential)
    assert abs(a.hour_of_day_sin - day.hour_of_day_sin) < 1e-12
    assert abs(a.hour_of_day_cos - day.hour_of_day_cos) < 1e-12
    assert abs(a.day_of_week_sin - week.day_of_week_sin) < 1e-12
    assert abs(a.day_of_week_cos - week.day_of_week_cos) < 1e-12


def test_load_series_invariants():
    with pytest.raises(ValueError):
        series_of([])
    with pytest.raises(ValueError):
        series_of([1.0, -0.1])
    with pytest.raises(ValueError):
        series_of([1.0, np.nan])
    s = series_of([1.0, 2.0, 3.0])
    assert s.timestamp(2) == T0 + timedelta(hours=2)
    with pytest.raises(ValueError):
        s.values[0] = 5.0


@pytest.mark.parametrize("n, expected", [(192, 1), (216, 2), (191, 0), (215, 1)])
def test_window_counts(n, expected):
    assert len(sliding_windows(series_of(np.arange(n)), 24)) == expected
    assert window_count(n, 24) == expected


def test_window_offsets_by_enumeration():
    windows = sliding_windows(series_of(np.arange(216)), 24)
    assert [w.context.values[0] for w in windows] == [0.0, 24.0]
    assert [w.start for w in windows] == [T0, T0 + timedelta(hours=24)]


@given(st.integers(192, 700), st.integers(1, 50))
@settings(max_examples=40)
def test_windows_reproduce_source_slices(n, stride):
    values = np.arange(n, dtype=float) * 0.5
    windows = sliding_windows(series_of(values), stride)
    assert len(windows) == (n - 192) // stride + 1
    for k, w in enumerate(windows):
        assert np.array_equal(w.values, values[k * stride:k * stride + 192])
        assert len(w.context) == 168 and len(w.target) == 24


def test_window_covariates_shape(commercial):
    w = sliding_windows(series_of(np.ones(192)), 24, commercial)[0]
    assert w.covariates.shape == (192, 9)
    bare = sliding_windows(series_of(np.ones(192)), 24)[0]
    with pytest.raises(ValueError):
        bare.covariates


def test_window_requires_contiguity():
    ctx = LoadSeries(T0, np.ones(168))
    with pytest.raises(ValueError):
        Window(ctx, LoadSeries(T0 + timedelta(hours=169), np.ones(24)))


def test_building_record_validation():
    with pytest.raises(ValueError):
        BuildingRecord("x", BuildingType.RESIDENTIAL, 91.0, 0.0)
    with pytest.raises(ValueError):
        BuildingRecord("x", BuildingType.RESIDENTIAL, 0.0, 181.0)
    assert BuildingRecord("x", "Commercial").building_type is BuildingType.COMMERCIAL
