import math

import numpy as np
import pytest
from hypothesis import assume, given
from hypothesis import strategies as st
from scipy import stats

from oracles import boxcox_grid_argmax
from loadbench.transform import (
    BoxCoxParams,
    FitError,
    TransformDomainError,
    backproject_gaussian,
    boxcox_fit,
    boxcox_forward,
    boxcox_inverse,
    fit_by_group,
    load_params,
    standard_fit,
    standard_forward,
    standard_inverse,
)


def test_linear_and_log_cases():
    assert boxcox_forward(3.5, BoxCoxParams(1.0)) == pytest.approx(2.5)
    assert boxcox_forward(math.e, BoxCoxParams(0.0)) == pytest.approx(1.0)
    assert boxcox_inverse(0.0, BoxCoxParams(0.0, 0.25)) == pytest.approx(0.75)
    assert boxcox_inverse(0.0, BoxCoxParams(1.0, 0.25)) == pytest.approx(0.75)


lambdas = st.floats(min_value=-2.0, max_value=2.0, allow_nan=False)
loads = st.floats(min_value=1e-3, max_value=1e3, allow_nan=False)


@given(loads, lambdas)
def test_round_trip(x, lam):
    p = BoxCoxParams(lam)
    y = boxcox_forward(x, p)
    if lam < 0:
        assume(y * lam + 1 > 1e-12)
    assert boxcox_inverse(y, p) == pytest.approx(x, rel=1e-9)


@given(loads, loads, lambdas)
def test_forward_strictly_increasing(a, b, lam):
    assume(abs(a - b) > 1e-9 * max(a, b))
    lo, hi = sorted((a, b))
    p = BoxCoxParams(lam)
    assert boxcox_forward(lo, p) < boxcox_forward(hi, p)


def test_domain_errors():
    with pytest.raises(TransformDomainError):
        boxcox_forward(-1.0, BoxCoxParams(0.5))
    with pytest.raises(TransformDomainError):
        boxcox_inverse(-3.0, BoxCoxParams(0.5))


def test_fit_lognormal_near_zero(rng):
    x = rng.lognormal(0.5, 0.6, 5000)
    p = boxcox_fit(x)
    assert abs(p.lmbda) < 0.05
    assert p.lmbda == pytest.approx(boxcox_grid_argmax(x), abs=2e-3)


def test_fit_normal_near_one(rng):
    # a coefficient of variation of 0.2 keeps lambda well identified
    x = rng.normal(10.0, 2.0, 100_000)
    p = boxcox_fit(x)
    assert abs(p.lmbda - 1.0) < 0.05
    assert p.lmbda == pytest.approx(boxcox_grid_argmax(x, 0.8, 1.2), abs=2e-3)


def test_fit_recovers_known_lambda(rng):
    x = boxcox_inverse(rng.normal(4.0, 1.0, 5000), BoxCoxParams(0.5))
    p = boxcox_fit(x)
    assert abs(p.lmbda - 0.5) < 0.05
    assert p.lmbda == pytest.approx(boxcox_grid_argmax(x), abs=2e-3)


def test_shift_rule():
    assert boxcox_fit([0.0, 1.0, 2.0, 5.0]).shift == pytest.approx(1e-3)
    assert boxcox_fit([1.0, 2.0]).shift == 0.0
    with pytest.raises(FitError):
        boxcox_fit([2.0, 2.0, 2.0])


def test_params_serialization(tmp_path):
    p = BoxCoxParams(0.123456789, 0.001)
    p.save(tmp_path / "bc.txt")
    assert BoxCoxParams.load(tmp_path / "bc.txt") == p


def test_backprojection_identity_at_lambda_one():
    bp = backproject_gaussian(3.0, 0.7, BoxCoxParams(1.0))
    assert bp.sigma == pytest.approx(0.7, rel=1e-14) and bp.mu == 4.0 and not bp.low_confidence


def test_backprojection_lambda_zero_is_sinh():
    bp = backproject_gaussian(0.0, 0.1, BoxCoxParams(0.0))
    expected = 0.5 * ((math.exp(0.1) - 1.0) + (1.0 - math.exp(-0.1)))
    assert bp.sigma == pytest.approx(expected, rel=1e-14)
    assert bp.sigma == pytest.approx(math.sinh(0.1), rel=1e-14)
    assert bp.sigma == pytest.approx(0.10017, abs=1e-5)


def test_backprojection_zero_sigma():
    assert backproject_gaussian(1.3, 0.0, BoxCoxParams(0.3)).sigma == 0.0


def test_backprojection_clamps_at_domain_boundary():
    p = BoxCoxParams(0.5)
    bp = backproject_gaussian(-1.5, 1.0, p)  # -2.5 * 0.5 + 1 < 0
    assert bp.low_confidence
    center = (1 + 0.5 * -1.5) ** 2
    upper = (1 + 0.5 * -0.5) ** 2 - center
    assert bp.sigma == pytest.approx(0.5 * (upper + center))
    neg = backproject_gaussian(1.0, 1.0, BoxCoxParams(-0.5))  # upper end at the pole
    assert neg.low_confidence and np.isfinite(neg.sigma)


def _ks(mu, sigma, lam, rng, n=100_000):
    p = BoxCoxParams(lam)
    bp = backproject_gaussian(mu, sigma, p)
    y = rng.normal(mu, sigma, n)
    y = y[y * lam + 1 > 0]
    return stats.kstest(boxcox_inverse(y, p), stats.norm(bp.mu, bp.sigma).cdf).statistic


def test_gaussian_approximation_good_for_small_sigma(rng):
    for sigma in (0.05, 0.1):
        assert _ks(1.0, sigma, 0.1, rng) < 0.05


def test_gaussian_approximation_breaks_for_large_sigma(rng):
    for sigma in (1.0, 2.0):
        assert _ks(1.0, sigma, 0.1, rng) >= 0.05


def test_standard_scaler():
    p = standard_fit([0.0, 2.0])
    assert (p.mean, p.std) == (1.0, 1.0)
    assert standard_forward(p.mean, p) == 0.0
    x = np.array([0.3, 7.0, 1e3])
    assert np.allclose(standard_inverse(standard_forward(x, p), p), x, rtol=1e-12)
    with pytest.raises(FitError):
        standard_fit([3.0, 3.0])


def test_fit_by_group(rng, tmp_path):
    groups = {"commercial": rng.lognormal(2.0, 0.3, 3000), "residential": rng.normal(10.0, 2.0, 3000)}
    pooled = fit_by_group(groups)
    assert list(pooled) == ["all"]
    assert pooled["all"] == boxcox_fit(np.concatenate([groups["commercial"], groups["residential"]]))
    per = fit_by_group(groups, per_group=True)
    assert set(per) == set(groups) and abs(per["commercial"].lmbda) < per["residential"].lmbda
    std = fit_by_group(groups, "standard", per_group=True)["residential"]
    assert std.mean == pytest.approx(groups["residential"].mean())
    std.save(tmp_path / "s.txt")
    assert load_params(tmp_path / "s.txt") == std
    with pytest.raises(ValueError):
        fit_by_group(groups, "yeo-johnson")
