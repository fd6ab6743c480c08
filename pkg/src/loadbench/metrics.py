"""Scoring rules and statistical aggregation.

Accuracy metrics take ``(M, 24)`` arrays of actuals and predictions in kWh
and return percentages normalized by the mean actual load. Probabilistic
scores are in kWh. Aggregation uses medians with stratified bootstrap
confidence intervals.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence, Union

import numpy as np
from scipy.special import ndtr

from .core import HORIZON_HOURS
from .tokenizer import TokenVocabulary, encode
from .transform import BoxCoxParams, backproject_gaussian

SIGMA_FLOOR = 1e-6
MASS_TOL = 1e-6
INV_SQRT_PI = 1.0 / math.sqrt(math.pi)
INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)


class UndefinedScoreError(ValueError):
    """Raised when the normalizing mean load is zero."""


class ForecastInputError(ValueError):
    pass


# -- forecast distributions ---------------------------------------------------

def _horizon_array(values, name: str, extra_dims: int = 0) -> np.ndarray:
    arr = np.array(values, dtype=float)
    if arr.ndim != 1 + extra_dims or arr.shape[0] != HORIZON_HOURS:
        raise ForecastInputError(f"{name} must have leading dimension {HORIZON_HOURS}, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ForecastInputError(f"{name} contains non-finite values")
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class Point:
    values: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "values", _horizon_array(self.values, "point forecast"))

    @property
    def mean(self) -> np.ndarray:
        return self.values


@dataclass(frozen=True, eq=False)
class Gaussian:
    """Per-hour Gaussian; when ``boxcox`` is set the parameters live in Box-Cox space."""

    mu: np.ndarray
    sigma: np.ndarray
    boxcox: Optional[BoxCoxParams] = None

    def __post_init__(self):
        object.__setattr__(self, "mu", _horizon_array(self.mu, "gaussian mu"))
        sigma = _horizon_array(self.sigma, "gaussian sigma")
        if np.any(sigma < 0):
            raise ForecastInputError("gaussian sigma must be >= 0")
        object.__setattr__(self, "sigma", sigma)

    def in_kwh(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """``(mu, sigma, low_confidence)`` in kWh."""
        if self.boxcox is None:
            return self.mu, self.sigma, np.zeros(HORIZON_HOURS, dtype=bool)
        out = [backproject_gaussian(m, s, self.boxcox) for m, s in zip(self.mu, self.sigma)]
        return (np.array([o.mu for o in out]), np.array([o.sigma for o in out]),
                np.array([o.low_confidence for o in out]))

    @property
    def mean(self) -> np.ndarray:
        return self.in_kwh()[0]


@dataclass(frozen=True, eq=False)
class Categorical:
    mass: np.ndarray  # (24, |V|)
    vocab: TokenVocabulary

    def __post_init__(self):
        mass = _horizon_array(self.mass, "categorical mass", extra_dims=1)
        if mass.shape[1] != len(self.vocab):
            raise ForecastInputError(f"mass has {mass.shape[1]} tokens, vocabulary has {len(self.vocab)}")
        if np.any(mass < 0) or np.any(np.abs(mass.sum(axis=1) - 1.0) > MASS_TOL):
            raise ForecastInputError("categorical mass rows must be nonnegative and sum to 1")
        object.__setattr__(self, "mass", mass)

    @property
    def mean(self) -> np.ndarray:
        return self.mass @ self.vocab.centroids


ForecastDistribution = Union[Point, Gaussian, Categorical]


# -- accuracy -----------------------------------------------------------------

def _pair(actuals, preds) -> tuple[np.ndarray, np.ndarray, float]:
    y = np.asarray(actuals, dtype=float)
    yhat = np.asarray(preds, dtype=float)
    if y.shape != yhat.shape or y.size == 0:
        raise ValueError(f"actuals {y.shape} and predictions {yhat.shape} must match and be non-empty")
    ybar = float(y.mean())
    if ybar == 0.0:
        raise UndefinedScoreError("mean actual load is zero")
    return y, yhat, ybar


def nrmse(actuals, preds) -> float:
    y, yhat, ybar = _pair(actuals, preds)
    return 100.0 / ybar * math.sqrt(float(np.mean((y - yhat) ** 2)))


def nmae(actuals, preds) -> float:
    y, yhat, ybar = _pair(actuals, preds)
    return 100.0 / ybar * float(np.mean(np.abs(y - yhat)))


def nmbe(actuals, preds) -> float:
    y, yhat, ybar = _pair(actuals, preds)
    return 100.0 / ybar * float(np.mean(y - yhat))


# -- probabilistic ------------------------------------------------------------

def gaussian_crps(y, mu, sigma, floor: float = SIGMA_FLOOR):
    """Closed-form CRPS of N(mu, sigma^2) against observation ``y``.

    ``sigma`` below ``floor`` is raised to ``floor``.
    """
    s = np.maximum(np.asarray(sigma, dtype=float), floor)
    z = (np.asarray(y, dtype=float) - np.asarray(mu, dtype=float)) / s
    pdf = INV_SQRT_2PI * np.exp(-0.5 * z * z)
    out = s * (z * (2.0 * ndtr(z) - 1.0) + 2.0 * pdf - INV_SQRT_PI)
    return out if np.ndim(out) else float(out)


def categorical_rps(y_token, mass, vocab_or_widths) -> float:
    """Ranked probability score of a categorical forecast, weighted by bin widths."""
    widths = vocab_or_widths.bin_width if isinstance(vocab_or_widths, TokenVocabulary) else vocab_or_widths
    widths = np.asarray(widths, dtype=float)
    p = np.asarray(mass, dtype=float)
    if p.ndim != 1 or p.size != widths.size:
        raise ForecastInputError("mass must be a vector over the vocabulary")
    if abs(p.sum() - 1.0) > MASS_TOL:
        raise ForecastInputError(f"mass sums to {p.sum()!r}, not 1")
    k = int(y_token)
    if not 0 <= k < p.size:
        raise ForecastInputError(f"token {k} outside vocabulary")
    cdf = np.cumsum(p)
    d = cdf - (np.arange(p.size) >= k)
    # correctly rounded sum, so the result does not depend on reduction order
    return math.fsum(d * d * widths)


def rps_dispatch(forecast: ForecastDistribution, actual) -> Optional[np.ndarray]:
    """Per-hour RPS in kWh, or None for point forecasts."""
    y = np.asarray(actual, dtype=float)
    if isinstance(forecast, Point):
        return None
    if isinstance(forecast, Gaussian):
        mu, sigma, _ = forecast.in_kwh()
        return np.asarray(gaussian_crps(y, mu, sigma))
    if isinstance(forecast, Categorical):
        tokens = np.atleast_1d(encode(y, forecast.vocab))
        return np.array([categorical_rps(t, m, forecast.vocab) for t, m in zip(tokens, forecast.mass)])
    raise TypeError(f"unsupported forecast type {type(forecast).__name__}")


# -- per-building scores ------------------------------------------------------

@dataclass(frozen=True)
class BuildingScore:
    building: str
    dataset: str
    nrmse: float
    nmae: float
    nmbe: float
    rps: Optional[float]
    n_days: int
    low_confidence_hours: int = 0

    def get(self, metric: str) -> Optional[float]:
        return getattr(self, metric)


def score_building(building: str, dataset: str, actuals, forecasts: Sequence[ForecastDistribution]) -> BuildingScore:
    """Score ``M`` day-ahead forecasts against an ``(M, 24)`` array of actuals."""
    y = np.asarray(actuals, dtype=float).reshape(-1, HORIZON_HOURS)
    if len(forecasts) != y.shape[0] or y.shape[0] < 1:
        raise ValueError("need one forecast per actual day and at least one day")
    preds = np.stack([f.mean for f in forecasts])
    rps_rows = [rps_dispatch(f, row) for f, row in zip(forecasts, y)]
    rps = None if any(r is None for r in rps_rows) else float(np.mean(np.stack(rps_rows)))
    low = sum(int(f.in_kwh()[2].sum()) for f in forecasts if isinstance(f, Gaussian) and f.boxcox is not None)
    return BuildingScore(building, dataset, nrmse(y, preds), nmae(y, preds), nmbe(y, preds), rps, y.shape[0], low)


# -- aggregation --------------------------------------------------------------

@dataclass(frozen=True)
class Interval:
    median: float
    lower: float
    upper: float

    def as_dict(self) -> dict:
        return {"median": self.median, "ci_lower": self.lower, "ci_upper": self.upper}


def stratified_bootstrap(values: np.ndarray, strata: np.ndarray, statistic, n_boot: int,
                         rng: np.random.Generator) -> np.ndarray:
    """``statistic`` of ``n_boot`` resamples drawn with replacement within each stratum."""
    groups = [np.flatnonzero(strata == s) for s in sorted(set(strata.tolist()))]
    out = np.empty(n_boot)
    for b in range(n_boot):
        idx = np.concatenate([g[rng.integers(0, g.size, size=g.size)] for g in groups])
        out[b] = statistic(values[idx])
    return out


def median_ci(values, strata=None, n_boot: int = 1000, seed: int = 0, level: float = 0.95) -> Interval:
    v = np.asarray(values, dtype=float)
    if v.size == 0:
        raise ValueError("no values to aggregate")
    s = np.zeros(v.size, dtype=int) if strata is None else np.asarray(strata)
    rng = np.random.default_rng(seed)
    boots = stratified_bootstrap(v, s, np.median, n_boot, rng)
    alpha = 100.0 * (1.0 - level) / 2.0
    lo, hi = np.percentile(boots, [alpha, 100.0 - alpha])
    med = float(np.median(v))
    return Interval(med, float(min(lo, med)), float(max(hi, med)))


def probability_of_improvement(x_scores, y_scores) -> float:
    """Percentage of paired entries with ``x < y`` (strict)."""
    x = np.asarray(x_scores, dtype=float)
    y = np.asarray(y_scores, dtype=float)
    if x.shape != y.shape:
        raise ValueError("paired score arrays must match in shape")
    if x.size == 0:
        raise ValueError("no pairs")
    return 100.0 * float(np.mean(x < y))


@dataclass(frozen=True)
class ProfileCurve:
    thresholds: np.ndarray
    fraction: np.ndarray
    lower: np.ndarray
    upper: np.ndarray


def performance_profile(scores, thresholds, strata=None, n_boot: int = 1000, seed: int = 0,
                        level: float = 0.95) -> ProfileCurve:
    """Fraction of buildings with score strictly above each threshold, with bootstrap CIs."""
    v = np.asarray(scores, dtype=float)
    t = np.asarray(thresholds, dtype=float)
    if v.size == 0:
        raise ValueError("no scores")

    def curve(sample):
        return np.mean(sample[None, :] > t[:, None], axis=1)

    s = np.zeros(v.size, dtype=int) if strata is None else np.asarray(strata)
    rng = np.random.default_rng(seed)
    groups = [np.flatnonzero(s == g) for g in sorted(set(s.tolist()))]
    boots = np.empty((n_boot, t.size))
    for b in range(n_boot):
        idx = np.concatenate([g[rng.integers(0, g.size, size=g.size)] for g in groups])
        boots[b] = curve(v[idx])
    alpha = 100.0 * (1.0 - level) / 2.0
    frac = curve(v)
    lo, hi = np.percentile(boots, [alpha, 100.0 - alpha], axis=0)
    return ProfileCurve(t, frac, np.minimum(lo, frac), np.maximum(hi, frac))


METRICS = ("nrmse", "nmae", "nmbe", "rps")


@dataclass
class AggregateReport:
    n_scored: int
    n_excluded: int
    overall: dict[str, Interval] = field(default_factory=dict)
    by_stratum: dict[str, dict[str, Interval]] = field(default_factory=dict)
    profiles: dict[str, ProfileCurve] = field(default_factory=dict)
    notes: list[str] = field(default_factory=list)

    def as_dict(self) -> dict:
        return {
            "n_scored": self.n_scored,
            "n_excluded": self.n_excluded,
            "overall": {m: iv.as_dict() for m, iv in self.overall.items()},
            "by_stratum": {s: {m: iv.as_dict() for m, iv in d.items()} for s, d in self.by_stratum.items()},
            "profiles": {
                m: {"thresholds": c.thresholds.tolist(), "fraction": c.fraction.tolist(),
                    "ci_lower": c.lower.tolist(), "ci_upper": c.upper.tolist()}
                for m, c in self.profiles.items()
            },
            "notes": list(self.notes),
        }


def profile_thresholds(values: np.ndarray, n: int = 50) -> np.ndarray:
    lo, hi = float(np.min(values)), float(np.max(values))
    if hi == lo:
        hi = lo + 1.0
    return np.linspace(lo, hi, n)


def aggregate(scores: Sequence[BuildingScore], n_boot: int = 1000, seed: int = 0,
              n_excluded: int = 0) -> AggregateReport:
    """Medians, stratified-bootstrap CIs and performance profiles per metric.

    Strata are the buildings' dataset labels; every metric, stratum and
    profile uses its own deterministic RNG stream derived from ``seed``.
    """
    scores = sorted(scores, key=lambda s: s.building)
    report = AggregateReport(n_scored=len(scores), n_excluded=n_excluded)
    if not scores:
        report.notes.append("no buildings scored")
        return report
    for mi, metric in enumerate(METRICS):
        have = [s for s in scores if s.get(metric) is not None]
        if not have:
            continue
        vals = np.array([s.get(metric) for s in have])
        st = np.array([s.dataset for s in have])
        report.overall[metric] = median_ci(vals, st, n_boot, seed=seed + 1000 * mi)
        report.profiles[metric] = performance_profile(
            vals, profile_thresholds(vals), st, n_boot=n_boot, seed=seed + 1000 * mi + 1)
        for si, stratum in enumerate(sorted(set(st.tolist()))):
            mask = st == stratum
            report.by_stratum.setdefault(stratum, {})[metric] = median_ci(
                vals[mask], None, n_boot, seed=seed + 1000 * mi + 10 + si)
    if n_excluded:
        report.notes.append(f"{n_excluded} buildings excluded (zero mean load or insufficient data)")
    return report
