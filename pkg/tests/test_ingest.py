from datetime import timedelta

import numpy as np
import pytest

from conftest import T0, series_of
from loadbench.ingest import (
    Aggregation,
    Excluded,
    GappySeries,
    IngestError,
    IngestPolicy,
    apply_consumption_cap,
    clean,
    daily_peak_base_spread,
    fill_missing,
    read_building_csv,
    read_metadata_csv,
    remove_outliers,
    resample_hourly,
)

quarter_hours = [T0 + timedelta(minutes=15 * i) for i in range(4)]


def test_resample_sum_and_mean():
    assert resample_hourly(quarter_hours, [1, 1, 1, 1], Aggregation.SUM).values.tolist() == [4.0]
    assert resample_hourly(quarter_hours, [1, 1, 1, 1], Aggregation.MEAN).values.tolist() == [1.0]


def test_resample_leaves_empty_hours_missing():
    # two days of hourly readings with hour 30 absent entirely
    stamps = [T0 + timedelta(hours=h) for h in range(48) if h != 30]
    hourly = resample_hourly(stamps, np.ones(len(stamps)))
    assert len(hourly) == 48
    assert np.isnan(hourly.values[30]) and hourly.missing.sum() == 1
    filled = fill_missing(hourly)
    assert filled.values[30] == 1.0


def test_resample_rejects_unsorted():
    with pytest.raises(IngestError, match="not sorted"):
        resample_hourly([T0 + timedelta(hours=1), T0], [1.0, 2.0])


def test_fill_midpoint():
    out = fill_missing(GappySeries(T0, np.array([2.0, np.nan, 4.0])), IngestPolicy(max_missing_fraction=0.5))
    assert out.values.tolist() == [2.0, 3.0, 4.0]


def test_long_gap_filled_with_zeros():
    values = np.full(8760, 3.0)
    values[1000:1200] = np.nan
    out = fill_missing(GappySeries(T0, values))
    assert np.all(out.values[1000:1200] == 0.0)
    assert out.values[999] == 3.0 and out.values[1200] == 3.0


def test_gap_at_threshold_is_interpolated():
    values = np.concatenate([[1.0], np.full(168, np.nan), [170.0], np.ones(2000)])
    out = fill_missing(GappySeries(T0, values))
    assert np.allclose(out.values[:170], np.arange(1.0, 171.0))


def test_too_much_missing_is_excluded():
    values = np.ones(100)
    values[:15] = np.nan
    assert isinstance(fill_missing(GappySeries(T0, values), IngestPolicy(max_missing_fraction=0.10)), Excluded)
    assert isinstance(fill_missing(GappySeries(T0, np.full(5, np.nan))), Excluded)


def test_edge_gaps_use_nearest_value_or_zero():
    values = np.concatenate([[np.nan] * 3, np.arange(1.0, 3001.0), [np.nan] * 200])
    out = fill_missing(GappySeries(T0, values))
    assert out.values[:3].tolist() == [1.0, 1.0, 1.0]
    assert np.all(out.values[-200:] == 0.0)
    assert len(out) == len(values) and not np.any(np.isnan(out.values))


def sinusoid(days=3, amplitude=1.0, base=5.0):
    h = np.arange(24 * days)
    return base + amplitude * np.sin(2 * np.pi * h / 24)


def test_outliers_constant_series_unchanged():
    s = series_of(np.full(72, 4.0))
    assert remove_outliers(s) == s


def test_single_spike_replaced_by_window_median():
    x = sinusoid()
    spike_at = 40
    x[spike_at] += 10.0
    s = series_of(x)
    days = x.reshape(-1, 24)
    assert daily_peak_base_spread(s) == pytest.approx(days.max(1).mean() - days.min(1).mean())
    assert daily_peak_base_spread(series_of(sinusoid())) == pytest.approx(2.0, abs=1e-3)
    out = remove_outliers(s)
    window = x[spike_at - 12:spike_at + 12]
    assert out.values[spike_at] == pytest.approx(np.median(window))
    untouched = np.arange(x.size) != spike_at
    assert np.array_equal(out.values[untouched], x[untouched])


def test_adjacent_equal_spikes_survive():
    x = sinusoid()
    x[40] += 10.0
    x[41] = x[40]
    out = remove_outliers(series_of(x))
    assert out.values[40] == x[40] and out.values[41] == x[41]


def test_outlier_removal_idempotent_on_synthetic():
    from loadbench.synth import SynthConfig, generate_building

    _, s = generate_building(SynthConfig(n_residential=1, n_commercial=0, n_days=28, noise_scale=0.1), 0)
    once = remove_outliers(s)
    assert remove_outliers(once) == once


def test_consumption_cap():
    assert isinstance(apply_consumption_cap(series_of([1.0, 5200.0])), Excluded)
    s = series_of([1.0, 100.0])
    assert apply_consumption_cap(s) is s
    assert apply_consumption_cap(series_of([1e9]), IngestPolicy(max_hourly_kw=float("inf"))).values[0] == 1e9


def test_pipeline_preserves_nonnegativity(rng):
    stamps = [T0 + timedelta(minutes=15 * i) for i in range(4 * 24 * 30)]
    vals = rng.gamma(2.0, 0.3, size=len(stamps))
    vals[rng.random(len(stamps)) < 0.02] = np.nan
    out = clean(stamps, vals, IngestPolicy(aggregation=Aggregation.SUM))
    assert len(out) == 24 * 30 and np.all(out.values >= 0)


def test_csv_readers(tmp_path):
    p = tmp_path / "b.csv"
    p.write_text("timestamp,kwh\n2018-01-01T00:00:00Z,1.5\n2018-01-01 01:00:00,\n2018-01-01T02:00:00+01:00,2\n")
    stamps, vals = read_building_csv(p)
    assert stamps[0] == T0 and stamps[2] == T0 + timedelta(hours=1)
    assert vals[0] == 1.5 and np.isnan(vals[1])
    m = tmp_path / "meta.csv"
    m.write_text("id,dataset,building_type,latitude,longitude,region_id\nb,ds,commercial,10,20,r\n")
    (rec,) = read_metadata_csv(m)
    assert rec.building_type.flag == 1 and rec.dataset_name == "ds"
    bad = tmp_path / "bad.csv"
    bad.write_text("time,value\n")
    with pytest.raises(IngestError):
        read_building_csv(bad)
