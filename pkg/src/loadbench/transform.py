"""Value-space transforms: Box-Cox with a fitted exponent, its Gaussian
back-projection into kWh, and plain standard scaling."""
from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path
from typing import NamedTuple, Union

import numpy as np

from .kvfile import read_keyvalue

SHIFT_EPS = 1e-3
LAMBDA_BOUNDS = (-2.0, 2.0)
LAMBDA_TOL = 1e-4
# below this |lambda| the log limit is exact to double precision
LOG_LIMIT = 1e-12
_GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0


class TransformDomainError(ValueError):
    pass


class FitError(ValueError):
    pass


@dataclass(frozen=True)
class BoxCoxParams:
    lmbda: float
    shift: float = 0.0

    def save(self, path: Union[str, Path]) -> None:
        Path(path).write_text(f"transform = boxcox\nlambda = {self.lmbda!r}\nshift = {self.shift!r}\n")

    @classmethod
    def load(cls, path: Union[str, Path]) -> "BoxCoxParams":
        kv = read_keyvalue(path)
        if kv.get("transform") != "boxcox":
            raise ValueError(f"{path}: not a Box-Cox parameter file")
        return cls(float(kv["lambda"]), float(kv["shift"]))


@dataclass(frozen=True)
class StandardScalerParams:
    mean: float
    std: float

    def __post_init__(self):
        if not self.std > 0:
            raise FitError("standard scaler needs std > 0")

    def save(self, path: Union[str, Path]) -> None:
        Path(path).write_text(f"transform = standard\nmean = {self.mean!r}\nstd = {self.std!r}\n")

    @classmethod
    def load(cls, path: Union[str, Path]) -> "StandardScalerParams":
        kv = read_keyvalue(path)
        if kv.get("transform") != "standard":
            raise ValueError(f"{path}: not a standard-scaler parameter file")
        return cls(float(kv["mean"]), float(kv["std"]))


def boxcox_loglik(lmbda: float, shifted: np.ndarray, log_sum: float | None = None) -> float:
    """Profile log-likelihood of ``lmbda`` under a normal model (constants dropped)."""
    logs = np.log(shifted)
    if log_sum is None:
        log_sum = float(logs.sum())
    n = shifted.size
    if abs(lmbda) < LOG_LIMIT:
        y = logs
    else:
        y = np.expm1(lmbda * logs) / lmbda
    var = float(np.var(y))
    if var <= 0.0:
        return -math.inf
    return -0.5 * n * math.log(var) + (lmbda - 1.0) * log_sum


def golden_section_max(fn, lo: float, hi: float, tol: float) -> float:
    a, b = lo, hi
    c = b - _GOLDEN * (b - a)
    d = a + _GOLDEN * (b - a)
    fc, fd = fn(c), fn(d)
    while b - a > tol:
        if fc >= fd:
            b, d, fd = d, c, fc
            c = b - _GOLDEN * (b - a)
            fc = fn(c)
        else:
            a, c, fc = c, d, fd
            d = a + _GOLDEN * (b - a)
            fd = fn(d)
    return 0.5 * (a + b)


def boxcox_fit(samples) -> BoxCoxParams:
    x = np.asarray(samples, dtype=float).ravel()
    if x.size < 2 or np.unique(x).size < 2:
        raise FitError("Box-Cox fit needs at least two distinct samples")
    shift = max(0.0, SHIFT_EPS - float(x.min()))
    shifted = x + shift
    log_sum = float(np.log(shifted).sum())
    lmbda = golden_section_max(lambda l: boxcox_loglik(l, shifted, log_sum), *LAMBDA_BOUNDS, LAMBDA_TOL)
    return BoxCoxParams(lmbda, shift)


def boxcox_forward(x, p: BoxCoxParams):
    z = np.asarray(x, dtype=float) + p.shift
    if np.any(z <= 0):
        raise TransformDomainError("Box-Cox argument must be positive after shift")
    if abs(p.lmbda) < LOG_LIMIT:
        out = np.log(z)
    else:
        out = np.expm1(p.lmbda * np.log(z)) / p.lmbda
    return out if out.ndim else float(out)


def _inverse_raw(y, lmbda: float):
    y = np.asarray(y, dtype=float)
    if abs(lmbda) < LOG_LIMIT:
        return np.exp(y)
    base = y * lmbda + 1.0
    if np.any(base <= 0):
        raise TransformDomainError("value outside the inverse Box-Cox domain")
    return np.exp(np.log1p(y * lmbda) / lmbda)


def boxcox_inverse(y, p: BoxCoxParams):
    out = _inverse_raw(y, p.lmbda) - p.shift
    return out if np.ndim(out) else float(out)


class BackProjection(NamedTuple):
    mu: float
    sigma: float
    low_confidence: bool


def backproject_gaussian(mu_scaled: float, sigma_scaled: float, p: BoxCoxParams) -> BackProjection:
    """Gaussian in kWh approximating the inverse-transformed N(mu, sigma^2).

    The kWh standard deviation is the mean of the upper and lower one-sigma
    half-widths. When ``mu - sigma`` (positive lambda) leaves the inverse's
    domain the lower half-width is measured to the domain boundary; when
    ``mu + sigma`` (negative lambda) does, the lower half-width is mirrored.
    Both cases set ``low_confidence``.
    """
    lam = p.lmbda
    center = float(_inverse_raw(mu_scaled, lam))
    upper_y, lower_y = mu_scaled + sigma_scaled, mu_scaled - sigma_scaled
    low_confidence = False
    boundary = -1.0 / lam if lam != 0.0 else None

    if lam > 0 and lower_y * lam + 1.0 <= 0:
        lower, low_confidence = 0.0, True
    else:
        lower = float(_inverse_raw(lower_y, lam))
    sigma_minus = center - lower

    if lam < 0 and upper_y >= boundary:
        sigma_plus, low_confidence = sigma_minus, True
    else:
        sigma_plus = float(_inverse_raw(upper_y, lam)) - center
    return BackProjection(center - p.shift, 0.5 * (sigma_plus + sigma_minus), low_confidence)


def standard_fit(samples) -> StandardScalerParams:
    """Mean and population standard deviation."""
    x = np.asarray(samples, dtype=float).ravel()
    if x.size == 0:
        raise FitError("standard scaler needs samples")
    std = float(np.std(x))
    if std <= 0:
        raise FitError("standard scaler needs non-constant samples")
    return StandardScalerParams(float(np.mean(x)), std)


def standard_forward(x, p: StandardScalerParams):
    return (np.asarray(x, dtype=float) - p.mean) / p.std


def standard_inverse(y, p: StandardScalerParams):
    return np.asarray(y, dtype=float) * p.std + p.mean


FITTERS = {"boxcox": boxcox_fit, "standard": standard_fit}


def fit_by_group(samples: dict[str, np.ndarray], kind: str = "boxcox", per_group: bool = False) -> dict:
    """Fit one parameter set over all groups pooled (key ``"all"``) or one per group."""
    if kind not in FITTERS:
        raise ValueError(f"unknown transform {kind!r}")
    fitter = FITTERS[kind]
    if not per_group:
        return {"all": fitter(np.concatenate([np.ravel(v) for _, v in sorted(samples.items())]))}
    return {group: fitter(samples[group]) for group in sorted(samples)}


def load_params(path: Union[str, Path]):
    kind = read_keyvalue(path).get("transform")
    if kind == "boxcox":
        return BoxCoxParams.load(path)
    if kind == "standard":
        return StandardScalerParams.load(path)
    raise ValueError(f"{path}: unknown transform {kind!r}")
