"""Forecasters: persistence baselines, direct linear regression and DLinear,
plus the early-stopping training loop and the prediction-file scorer.

Every forecaster maps a 168-hour context (kWh) to a 24-hour
:data:`~loadbench.metrics.ForecastDistribution`.
"""
from __future__ import annotations

import copy
import csv
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional, Protocol, Sequence, Union

import numpy as np

from .core import CONTEXT_HOURS, HORIZON_HOURS, Window
from .metrics import (
    BuildingScore,
    Categorical,
    ForecastDistribution,
    ForecastInputError,
    Gaussian,
    Point,
    UndefinedScoreError,
    score_building,
)
from .tokenizer import TokenVocabulary
from .transform import BoxCoxParams

RIDGE = 1e-8
DLINEAR_KERNEL = 25
LEARNING_RATES = (1e-2, 1e-3, 1e-4, 1e-5, 1e-6)


class FitError(ValueError):
    pass


class Forecaster(Protocol):
    name: str

    def predict(self, context: np.ndarray) -> ForecastDistribution: ...


def _context(context) -> np.ndarray:
    if isinstance(context, Window):
        context = context.context.values
    x = np.asarray(context, dtype=float)
    if x.shape != (CONTEXT_HOURS,):
        raise ValueError(f"context must have {CONTEXT_HOURS} hours, got shape {x.shape}")
    return x


def _design(windows: Sequence[Window]) -> tuple[np.ndarray, np.ndarray]:
    if not windows:
        raise FitError("no training windows")
    X = np.stack([w.context.values for w in windows])
    Y = np.stack([w.target.values for w in windows])
    return X, Y


# -- persistence ---------------------------------------------------------------

def previous_day(context) -> Point:
    return Point(_context(context)[-HORIZON_HOURS:])


def previous_week(context) -> Point:
    return Point(_context(context)[:HORIZON_HOURS])


def persistence_ensemble(context) -> Gaussian:
    """Mean and population std of the same hour over the past seven days."""
    # rows ordered most recent day first, matching the j = 1..7 lag sum
    days = _context(context).reshape(7, HORIZON_HOURS)[::-1]
    mu = days.sum(axis=0) / 7.0
    dev = days - mu
    return Gaussian(mu, np.sqrt((dev * dev).sum(axis=0) / 7.0))


@dataclass(frozen=True)
class _Stateless:
    name: str
    fn: Callable[[np.ndarray], ForecastDistribution]

    def predict(self, context) -> ForecastDistribution:
        return self.fn(context)


PreviousDay = _Stateless("previous_day", previous_day)
PreviousWeek = _Stateless("previous_week", previous_week)
PersistenceEnsemble = _Stateless("persistence_ensemble", persistence_ensemble)

PERSISTENCE = {f.name: f for f in (PreviousDay, PreviousWeek, PersistenceEnsemble)}


# -- training schedule and early stopping ------------------------------------

@dataclass(frozen=True)
class TrainSchedule:
    max_epochs: int = 100
    patience: int = 2
    learning_rates: tuple[float, ...] = LEARNING_RATES
    seed: int = 0
    batch_size: int = 32  # 0 means full batch

    def __post_init__(self):
        if self.patience < 1 or self.max_epochs < 1:
            raise ValueError("patience and max_epochs must be >= 1")
        if self.batch_size < 0:
            raise ValueError("batch_size must be >= 0")


FINE_TUNE = TrainSchedule(max_epochs=25)


@dataclass
class TrainHistory:
    val_losses: list[float] = field(default_factory=list)
    best_epoch: int = -1
    best_loss: float = float("inf")
    learning_rate: Optional[float] = None

    @property
    def epochs_run(self) -> int:
        return len(self.val_losses)


def early_stopping(train_epoch: Callable[[int], None], validate: Callable[[], float],
                   snapshot: Callable[[], object], max_epochs: int, patience: int):
    """Run epochs until validation fails to improve ``patience`` times in a row.

    Returns ``(best_snapshot, history)``; the snapshot is taken at the epoch
    with the lowest validation loss, not the last one.
    """
    history = TrainHistory()
    best = None
    stale = 0
    for epoch in range(max_epochs):
        train_epoch(epoch)
        loss = float(validate())
        history.val_losses.append(loss)
        if loss < history.best_loss:
            history.best_loss, history.best_epoch = loss, epoch
            best = snapshot()
            stale = 0
        else:
            stale += 1
            if stale >= patience:
                break
    return best, history


# -- linear models -------------------------------------------------------------

@dataclass
class LinearDirectModel:
    weight: np.ndarray  # (24, 168)
    bias: np.ndarray    # (24,)
    name: str = "linear"

    @classmethod
    def zeros(cls) -> "LinearDirectModel":
        return cls(np.zeros((HORIZON_HOURS, CONTEXT_HOURS)), np.zeros(HORIZON_HOURS))

    def forward(self, X: np.ndarray) -> np.ndarray:
        return X @ self.weight.T + self.bias

    def predict(self, context) -> Point:
        return Point(self.forward(_context(context)[None, :])[0])

    def loss_and_grad(self, X: np.ndarray, Y: np.ndarray) -> tuple[float, dict[str, np.ndarray]]:
        R = self.forward(X) - Y
        scale = 2.0 / R.size
        return float(np.mean(R**2)), {"weight": scale * R.T @ X, "bias": scale * R.sum(axis=0)}

    def params(self) -> dict[str, np.ndarray]:
        return {"weight": self.weight, "bias": self.bias}


def fit_linear_direct(windows: Sequence[Window], schedule: Optional[TrainSchedule] = None,
                      use_bias: bool = True) -> LinearDirectModel:
    """Least squares for all 24 outputs at once via damped normal equations."""
    X, Y = _design(windows)
    A = np.hstack([X, np.ones((X.shape[0], 1))]) if use_bias else X
    gram = A.T @ A + RIDGE * np.eye(A.shape[1])
    beta = np.linalg.solve(gram, A.T @ Y)
    if use_bias:
        return LinearDirectModel(beta[:-1].T.copy(), beta[-1].copy())
    return LinearDirectModel(beta.T.copy(), np.zeros(HORIZON_HOURS))


def moving_average(X: np.ndarray, kernel: int = DLINEAR_KERNEL) -> np.ndarray:
    """Centered moving average along the last axis with edge replication."""
    if kernel % 2 == 0 or kernel < 1:
        raise ValueError("kernel size must be odd and positive")
    half = kernel // 2
    X = np.asarray(X, dtype=float)
    padded = np.concatenate([np.repeat(X[..., :1], half, axis=-1), X,
                             np.repeat(X[..., -1:], half, axis=-1)], axis=-1)
    csum = np.cumsum(np.concatenate([np.zeros(X.shape[:-1] + (1,)), padded], axis=-1), axis=-1)
    return (csum[..., kernel:] - csum[..., :-kernel]) / kernel


def decompose(X: np.ndarray, kernel: int = DLINEAR_KERNEL) -> tuple[np.ndarray, np.ndarray]:
    trend = moving_average(X, kernel)
    return trend, X - trend


@dataclass
class DLinearModel:
    trend_weight: np.ndarray
    trend_bias: np.ndarray
    resid_weight: np.ndarray
    resid_bias: np.ndarray
    kernel: int = DLINEAR_KERNEL
    name: str = "dlinear"

    def __post_init__(self):
        if self.kernel % 2 == 0 or self.kernel > CONTEXT_HOURS:
            raise ValueError("DLinear kernel must be odd and <= 168")

    @classmethod
    def initial(cls, kernel: int = DLINEAR_KERNEL) -> "DLinearModel":
        w = np.full((HORIZON_HOURS, CONTEXT_HOURS), 1.0 / CONTEXT_HOURS)
        return cls(w.copy(), np.zeros(HORIZON_HOURS), w.copy(), np.zeros(HORIZON_HOURS), kernel)

    def forward(self, X: np.ndarray) -> np.ndarray:
        trend, resid = decompose(X, self.kernel)
        return trend @ self.trend_weight.T + self.trend_bias + resid @ self.resid_weight.T + self.resid_bias

    def predict(self, context) -> Point:
        return Point(self.forward(_context(context)[None, :])[0])

    def loss_and_grad(self, X: np.ndarray, Y: np.ndarray) -> tuple[float, dict[str, np.ndarray]]:
        trend, resid = decompose(X, self.kernel)
        R = trend @ self.trend_weight.T + self.trend_bias + resid @ self.resid_weight.T + self.resid_bias - Y
        scale = 2.0 / R.size
        return float(np.mean(R**2)), {
            "trend_weight": scale * R.T @ trend,
            "trend_bias": scale * R.sum(axis=0),
            "resid_weight": scale * R.T @ resid,
            "resid_bias": scale * R.sum(axis=0),
        }

    def params(self) -> dict[str, np.ndarray]:
        return {"trend_weight": self.trend_weight, "trend_bias": self.trend_bias,
                "resid_weight": self.resid_weight, "resid_bias": self.resid_bias}


def mse(model, X: np.ndarray, Y: np.ndarray) -> float:
    with np.errstate(over="ignore", invalid="ignore"):
        loss = float(np.mean((model.forward(X) - Y) ** 2))
    return loss if np.isfinite(loss) else float("inf")


def train_with_early_stopping(model, train: Sequence[Window], val: Sequence[Window],
                              schedule: TrainSchedule, learning_rate: float):
    """Minibatch gradient descent on MSE with early stopping on ``val``.

    Returns ``(best model, history)``; ``model`` itself is not modified.
    """
    X, Y = _design(train)
    Xv, Yv = _design(val)
    work = copy.deepcopy(model)
    rng = np.random.default_rng(schedule.seed)

    def train_epoch(_epoch):
        order = rng.permutation(X.shape[0])
        size = schedule.batch_size or order.size
        for begin in range(0, order.size, size):
            idx = order[begin:begin + size]
            with np.errstate(over="ignore", invalid="ignore"):
                _, grads = work.loss_and_grad(X[idx], Y[idx])
                for key, p in work.params().items():
                    p -= learning_rate * grads[key]

    best, history = early_stopping(train_epoch, lambda: mse(work, Xv, Yv),
                                   lambda: copy.deepcopy(work), schedule.max_epochs, schedule.patience)
    history.learning_rate = learning_rate
    return (best if best is not None else copy.deepcopy(model)), history


def fit_dlinear(windows: Sequence[Window], schedule: TrainSchedule = TrainSchedule(),
                val_windows: Optional[Sequence[Window]] = None, kernel: int = DLINEAR_KERNEL):
    """Train DLinear for each learning rate in the grid; keep the best on validation.

    Without explicit validation windows the last fifth of ``windows`` is held out.
    """
    windows = list(windows)
    if not windows:
        raise FitError("no training windows")
    if val_windows is None:
        n_val = max(1, len(windows) // 5)
        if len(windows) <= n_val:
            raise FitError("need at least two windows to carve out a validation split")
        windows, val_windows = windows[:-n_val], windows[-n_val:]
    best_model, best_hist = None, None
    for lr in schedule.learning_rates:
        model, hist = train_with_early_stopping(DLinearModel.initial(kernel), windows, val_windows, schedule, lr)
        if best_hist is None or hist.best_loss < best_hist.best_loss:
            best_model, best_hist = model, hist
    return best_model, best_hist


# -- prediction interchange file ----------------------------------------------

@dataclass
class ScoreFileResult:
    scores: list[BuildingScore]
    rejected: list[tuple[int, str]]
    dropped: list[str]
    undefined: list[str]

    def summary(self) -> str:
        return (f"{len(self.scores)} buildings scored, {len(self.rejected)} rows rejected, "
                f"{len(self.dropped)} building-days dropped, {len(self.undefined)} buildings with zero mean load")


def read_actuals(path: Union[str, Path]) -> dict[tuple[str, int], tuple[str, np.ndarray]]:
    """Read ``building,dataset,day_index,hour,actual`` into ``{(building, day): (dataset, values[24])}``."""
    out: dict[tuple[str, int], tuple[str, np.ndarray]] = {}
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            key = (row["building"], int(row["day_index"]))
            if key not in out:
                out[key] = (row.get("dataset", ""), np.full(HORIZON_HOURS, np.nan))
            out[key][1][int(row["hour"])] = float(row["actual"])
    return out


def write_actuals(path: Union[str, Path], rows: Sequence[tuple[str, str, int, np.ndarray]]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["building", "dataset", "day_index", "hour", "actual"])
        for building, dataset, day, values in rows:
            for h, v in enumerate(values):
                writer.writerow([building, dataset, day, h, repr(float(v))])


def _parse_row(row: list[str], vocab: Optional[TokenVocabulary]):
    kind = row[3].strip().lower()
    params = [p.strip() for p in row[4:] if p.strip()]
    if kind == "point":
        if len(params) != 1:
            raise ForecastInputError("point rows need exactly one parameter")
        return kind, float(params[0])
    if kind == "gaussian":
        if len(params) != 2:
            raise ForecastInputError("gaussian rows need p1=mu and p2=sigma")
        mu, sigma = float(params[0]), float(params[1])
        if not sigma >= 0:
            raise ForecastInputError("gaussian sigma must be >= 0")
        return kind, (mu, sigma)
    if kind == "categorical":
        if vocab is None:
            raise ForecastInputError("categorical rows need a vocabulary")
        mass = np.zeros(len(vocab))
        for item in params:
            idx, _, val = item.partition(":")
            k = int(idx)
            if not 0 <= k < len(vocab):
                raise ForecastInputError(f"token index {k} outside vocabulary")
            mass[k] += float(val)
        if np.any(mass < 0) or abs(mass.sum() - 1.0) > 1e-6:
            raise ForecastInputError(f"categorical mass sums to {mass.sum():.6g}")
        return kind, mass
    raise ForecastInputError(f"unknown kind {kind!r}")


def score_prediction_file(path: Union[str, Path], actuals_path: Union[str, Path],
                          vocab: Optional[TokenVocabulary] = None,
                          boxcox: Optional[BoxCoxParams] = None) -> ScoreFileResult:
    """Score an interchange file against an actuals file.

    Malformed rows are rejected individually; a building-day that then lacks
    any of its 24 hours, or mixes kinds, is dropped. Gaussian rows are read as
    Box-Cox-space parameters when ``boxcox`` is given.
    """
    actuals = read_actuals(actuals_path)
    rejected: list[tuple[int, str]] = []
    days: dict[tuple[str, int], dict[int, tuple[str, object]]] = defaultdict(dict)
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header[:4]] != ["building", "day_index", "hour", "kind"]:
            raise ForecastInputError(f"{path}: header must start with building,day_index,hour,kind")
        for lineno, row in enumerate(reader, start=2):
            if not row or row[0].startswith("#"):
                continue
            try:
                if len(row) < 5:
                    raise ForecastInputError("too few fields")
                key = (row[0], int(row[1]))
                hour = int(row[2])
                if not 0 <= hour < HORIZON_HOURS:
                    raise ForecastInputError(f"hour {hour} outside 0..23")
                if key not in actuals:
                    raise ForecastInputError(f"no actuals for building {key[0]!r} day {key[1]}")
                if hour in days[key]:
                    raise ForecastInputError("duplicate hour")
                days[key][hour] = _parse_row(row, vocab)
            except (ForecastInputError, ValueError) as exc:
                rejected.append((lineno, str(exc)))

    per_building: dict[str, list] = defaultdict(list)
    dropped: list[str] = []
    for key in sorted(days):
        hours = days[key]
        kinds = {k for k, _ in hours.values()}
        if len(hours) != HORIZON_HOURS or len(kinds) != 1:
            dropped.append(f"{key[0]}:{key[1]}")
            continue
        kind = kinds.pop()
        vals = [hours[h][1] for h in range(HORIZON_HOURS)]
        if kind == "point":
            fc = Point(vals)
        elif kind == "gaussian":
            fc = Gaussian([v[0] for v in vals], [v[1] for v in vals], boxcox)
        else:
            fc = Categorical(np.stack(vals), vocab)
        dataset, y = actuals[key]
        if np.any(np.isnan(y)):
            dropped.append(f"{key[0]}:{key[1]}")
            continue
        per_building[key[0]].append((dataset, y, fc))

    scores, undefined = [], []
    for building in sorted(per_building):
        items = per_building[building]
        try:
            scores.append(score_building(building, items[0][0], np.stack([i[1] for i in items]),
                                         [i[2] for i in items]))
        except UndefinedScoreError:
            undefined.append(building)
    return ScoreFileResult(scores, rejected, dropped, undefined)
