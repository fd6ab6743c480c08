import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import categorical_rps_loops, crps_quadrature
from loadbench.metrics import (
    BuildingScore,
    Categorical,
    ForecastInputError,
    Gaussian,
    Point,
    UndefinedScoreError,
    aggregate,
    categorical_rps,
    gaussian_crps,
    median_ci,
    nmae,
    nmbe,
    nrmse,
    performance_profile,
    probability_of_improvement,
    rps_dispatch,
    score_building,
)
from loadbench.tokenizer import fit
from loadbench.transform import BoxCoxParams


def test_perfect_forecast_scores_zero():
    y = np.arange(1.0, 25.0)
    assert nrmse(y, y) == nmae(y, y) == nmbe(y, y) == 0.0


def test_hand_computed_scores():
    y = np.array([[2.0, 4.0]])
    yhat = np.array([[1.0, 6.0]])
    assert nrmse(y, yhat) == pytest.approx(100 / 3 * math.sqrt(2.5))
    assert nmae(y, yhat) == pytest.approx(50.0)
    assert nmbe(y, yhat) == pytest.approx(-100 / 6)


def test_zero_mean_is_undefined():
    with pytest.raises(UndefinedScoreError):
        nrmse(np.zeros(24), np.ones(24))


def test_shape_mismatch():
    with pytest.raises(ValueError):
        nmae(np.ones(24), np.ones(23))


@given(st.floats(0.01, 100), st.integers(0, 2**31))
@settings(max_examples=50)
def test_normalized_scores_scale_invariant(c, seed):
    r = np.random.default_rng(seed)
    y = r.uniform(0.5, 5, (3, 24))
    yhat = r.uniform(0.5, 5, (3, 24))
    for f in (nrmse, nmae, nmbe):
        assert f(c * y, c * yhat) == pytest.approx(f(y, yhat), rel=1e-9, abs=1e-9)


@pytest.mark.parametrize("y, mu, sigma", [(0.0, 0.0, 1.0), (1.3, -0.2, 0.7), (-4.0, 2.0, 3.0), (10.0, 9.99, 0.01)])
def test_crps_matches_quadrature(y, mu, sigma):
    assert gaussian_crps(y, mu, sigma) == pytest.approx(crps_quadrature(y, mu, sigma), rel=1e-8)


def test_crps_at_the_mean():
    assert gaussian_crps(0.0, 0.0, 1.0) == pytest.approx((math.sqrt(2) - 1) / math.sqrt(math.pi), rel=1e-12)
    assert gaussian_crps(0.0, 0.0, 1.0) == pytest.approx(0.23370, abs=1e-5)


def test_crps_sigma_floor():
    assert gaussian_crps(1.0, 1.0, 0.0) == pytest.approx(1e-6 * 0.2337, rel=1e-3)
    assert gaussian_crps(3.0, 1.0, 0.0) == pytest.approx(2.0 - 1e-6 / math.sqrt(math.pi), rel=1e-12)


@given(st.floats(-50, 50), st.floats(-50, 50), st.floats(0.01, 20), st.floats(0.1, 10))
def test_crps_properties(y, mu, sigma, c):
    base = gaussian_crps(y, mu, sigma)
    assert base >= 0
    assert gaussian_crps(2 * mu - y, mu, sigma) == pytest.approx(base, rel=1e-9, abs=1e-12)
    assert gaussian_crps(c * y, c * mu, c * sigma) == pytest.approx(c * base, rel=1e-9, abs=1e-12)
    assert gaussian_crps(y + 3.0, mu + 3.0, sigma) == pytest.approx(base, rel=1e-7, abs=1e-9)


def test_categorical_examples():
    w = np.ones(3)
    assert categorical_rps(1, [0, 1, 0], w) == 0.0
    assert categorical_rps(0, [0, 0, 1], w) == pytest.approx(2.0)
    assert categorical_rps(2, [1 / 3] * 3, [0.5, 1.0, 2.0]) == pytest.approx(0.5 / 9 + 4 / 9)


@given(st.lists(st.floats(0, 1), min_size=2, max_size=12), st.data())
def test_categorical_matches_loops(raw, data):
    p = np.asarray(raw) + 1e-3
    p = p / p.sum()
    widths = data.draw(st.lists(st.floats(0.01, 5), min_size=p.size, max_size=p.size))
    k = data.draw(st.integers(0, p.size - 1))
    got = categorical_rps(k, p, widths)
    assert got == pytest.approx(categorical_rps_loops(k, p, widths), rel=1e-9, abs=1e-12)
    assert got >= 0


def test_categorical_rejects_bad_mass():
    with pytest.raises(ForecastInputError):
        categorical_rps(0, [0.5, 0.6], [1, 1])
    with pytest.raises(ForecastInputError):
        categorical_rps(5, [0.5, 0.5], [1, 1])


def test_rps_dispatch():
    y = np.full(24, 2.0)
    assert rps_dispatch(Point(y), y) is None
    per_hour = rps_dispatch(Gaussian(y, np.ones(24)), y)
    assert per_hour == pytest.approx(np.full(24, 0.23370), abs=1e-5)
    vocab = fit(np.random.default_rng(0).uniform(0, 4, 2000), k=8, tau=0.0)
    token = int(np.argmin(np.abs(vocab.centroids - 2.0)))
    mass = np.zeros((24, len(vocab)))
    mass[:, token] = 1.0
    assert np.all(rps_dispatch(Categorical(mass, vocab), np.full(24, vocab.centroids[token])) == 0.0)


def test_boxcox_gaussian_is_scored_in_kwh():
    p = BoxCoxParams(1.0, 0.0)
    g = Gaussian(np.full(24, 1.0), np.full(24, 0.5), boxcox=p)
    y = np.full(24, 2.0)
    assert rps_dispatch(g, y) == pytest.approx(np.full(24, gaussian_crps(2.0, 2.0, 0.5)))


def test_forecast_validation():
    with pytest.raises(ForecastInputError):
        Point(np.ones(23))
    with pytest.raises(ForecastInputError):
        Gaussian(np.ones(24), -np.ones(24))


def test_score_building():
    y = np.tile(np.arange(1.0, 25.0), (2, 1))
    s = score_building("b", "d", y, [Point(row) for row in y])
    assert (s.nrmse, s.rps, s.n_days) == (0.0, None, 2)
    g = score_building("b", "d", y, [Gaussian(row, np.ones(24)) for row in y])
    assert g.rps == pytest.approx(0.23370, abs=1e-5)


def test_median_ci_brackets_and_is_deterministic(rng):
    v = rng.lognormal(0, 1, 200)
    a = median_ci(v, n_boot=300, seed=1)
    assert a.lower <= a.median <= a.upper
    assert a == median_ci(v, n_boot=300, seed=1)
    assert median_ci([5.0], n_boot=50) == median_ci([5.0], n_boot=50)
    one = median_ci([5.0], n_boot=50)
    assert one.lower == one.median == one.upper == 5.0


def test_median_ci_coverage_calibrated():
    r = np.random.default_rng(2024)
    true_median = 1.0  # lognormal(0, 1)
    hits = sum(
        (lambda iv: iv.lower <= true_median <= iv.upper)(median_ci(r.lognormal(0, 1, 101), n_boot=300, seed=i))
        for i in range(200)
    )
    assert 0.88 <= hits / 200 <= 0.995


def test_probability_of_improvement():
    assert probability_of_improvement([1, 2, 3, 4], [2, 2, 1, 5]) == 50.0
    x = np.array([1.0, 5.0, 3.0])
    assert probability_of_improvement(x, x) == 0.0
    with pytest.raises(ValueError):
        probability_of_improvement([1.0], [1.0, 2.0])


@given(st.lists(st.floats(0, 100), min_size=1, max_size=40), st.data())
def test_probability_complement(xs, data):
    ys = data.draw(st.lists(st.floats(0, 100), min_size=len(xs), max_size=len(xs)))
    ties = 100.0 * np.mean(np.asarray(xs) == np.asarray(ys))
    total = probability_of_improvement(xs, ys) + probability_of_improvement(ys, xs) + ties
    assert total == pytest.approx(100.0)


def test_performance_profile():
    c = performance_profile([1.0, 2.0, 3.0, 4.0], [0.0, 2.0, 4.0], n_boot=100)
    assert c.fraction.tolist() == [1.0, 0.5, 0.0]
    assert np.all(c.lower <= c.fraction) and np.all(c.fraction <= c.upper)
    assert np.all(np.diff(c.fraction) <= 0)


def _scores(values, dataset="d"):
    return [BuildingScore(f"b{i}", dataset, v, v, 0.0, None, 1) for i, v in enumerate(values)]


def test_aggregate_report(rng):
    vals = rng.uniform(1, 10, 30)
    report = aggregate(_scores(vals), n_boot=100, seed=3, n_excluded=2)
    assert report.overall["nrmse"].median == pytest.approx(np.median(vals))
    assert "rps" not in report.overall
    assert report.n_scored == 30 and report.n_excluded == 2
    assert report.as_dict() == aggregate(_scores(vals), n_boot=100, seed=3, n_excluded=2).as_dict()
    assert aggregate([], n_boot=10).notes == ["no buildings scored"]
