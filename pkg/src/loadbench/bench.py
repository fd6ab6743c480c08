"""Evaluation protocols: zero-shot and transfer learning, run comparison and
report assembly.

A run directory holds::

    scores.csv      building,dataset,nrmse,nmae,nmbe,rps,n_days
    aggregate.json  medians, bootstrap CIs, profile curves, counts
    profiles.csv    metric,threshold,fraction,ci_lower,ci_upper
    manifest.txt    tool version, config hash, seeds, building counts

Buildings are evaluated independently (optionally in a process pool) and
results are sorted by building id before anything is written, so output
bytes do not depend on scheduling.
"""
from __future__ import annotations

import csv
import hashlib
import json
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Optional, Sequence, Union

import numpy as np

from . import __version__
from .core import CONTEXT_HOURS, HORIZON_HOURS, WINDOW_HOURS, BuildingRecord, LoadSeries, Window, sliding_windows
from .forecast import (
    PERSISTENCE,
    FitError,
    TrainSchedule,
    fit_dlinear,
    fit_linear_direct,
    write_actuals,
)
from .ingest import IngestPolicy
from .kvfile import read_keyvalue
from .metrics import (
    METRICS,
    SIGMA_FLOOR,
    BuildingScore,
    Gaussian,
    UndefinedScoreError,
    aggregate,
    probability_of_improvement,
    score_building,
)
from .store import Corpus

log = logging.getLogger(__name__)

MONTH_HOURS = 30 * 24
TRAIN_MONTHS = 5
VAL_MONTHS = 1
TEST_MONTHS = 6
TRANSFER_HOURS = (TRAIN_MONTHS + VAL_MONTHS + TEST_MONTHS) * MONTH_HOURS

FORECASTERS = tuple(PERSISTENCE) + ("linear", "dlinear")
SCORE_COLUMNS = ("building", "dataset", "nrmse", "nmae", "nmbe", "rps", "n_days")


class ConfigError(ValueError):
    pass


class DataError(ValueError):
    pass


@dataclass(frozen=True)
class RunConfig:
    task: str = "zero_shot"
    corpus: str = ""
    forecaster: str = "persistence_ensemble"
    output: str = "run"
    n_boot: int = 1000
    seed: int = 0
    sample: int = 0
    cap: bool = False
    max_hourly_kw: float = IngestPolicy.max_hourly_kw
    sigma_floor: float = SIGMA_FLOOR
    baseline_run: str = ""
    workers: int = 1
    max_epochs: int = 25
    patience: int = 2
    batch_size: int = 32
    use_bias: bool = True
    kernel: int = 25
    emit_actuals: bool = False

    def __post_init__(self):
        if self.task not in ("zero_shot", "transfer"):
            raise ConfigError(f"unknown task {self.task!r}")
        if self.forecaster not in FORECASTERS:
            raise ConfigError(f"unknown forecaster {self.forecaster!r}; choose from {', '.join(FORECASTERS)}")
        if self.task == "zero_shot" and self.forecaster not in PERSISTENCE:
            raise ConfigError(f"forecaster {self.forecaster!r} needs training data; use the transfer task")
        if self.n_boot < 1 or self.workers < 1 or self.sample < 0:
            raise ConfigError("n_boot and workers must be >= 1, sample >= 0")

    @classmethod
    def from_mapping(cls, values: dict) -> "RunConfig":
        known = {f.name: f for f in fields(cls)}
        kwargs = {}
        for key, raw in values.items():
            key = key.replace("-", "_")
            if key not in known:
                raise ConfigError(f"unknown config key {key!r}")
            if raw is None:
                continue
            kwargs[key] = _coerce(raw, type(getattr(cls(), key)))
        return cls(**kwargs)

    @classmethod
    def load(cls, path: Union[str, Path], overrides: Optional[dict] = None) -> "RunConfig":
        values = dict(read_keyvalue(path))
        values.update({k: v for k, v in (overrides or {}).items() if v is not None})
        return cls.from_mapping(values)

    def to_text(self) -> str:
        return "".join(f"{k} = {v}\n" for k, v in asdict(self).items())

    def digest(self) -> str:
        return hashlib.sha256(self.to_text().encode()).hexdigest()

    def schedule(self) -> TrainSchedule:
        return TrainSchedule(max_epochs=self.max_epochs, patience=self.patience, seed=self.seed,
                             batch_size=self.batch_size)


def _coerce(raw, kind):
    if isinstance(raw, kind):
        return raw
    text = str(raw).strip()
    if kind is bool:
        if text.lower() in ("1", "true", "yes", "on"):
            return True
        if text.lower() in ("0", "false", "no", "off"):
            return False
        raise ConfigError(f"not a boolean: {text!r}")
    try:
        return kind(text)
    except ValueError:
        raise ConfigError(f"cannot parse {text!r} as {kind.__name__}") from None


# -- per-building evaluation -------------------------------------------------

@dataclass(frozen=True)
class Outcome:
    building: str
    status: str  # scored | skipped | excluded
    score: Optional[BuildingScore] = None
    reason: str = ""
    actuals: Optional[np.ndarray] = None


def windows_at(series: LoadSeries, target_starts: Sequence[int], building=None) -> list[Window]:
    out = []
    for t in target_starts:
        out.append(Window(series.slice(t - CONTEXT_HOURS, t), series.slice(t, t + HORIZON_HOURS), building))
    return out


def zero_shot_targets(n_hours: int) -> list[int]:
    """Target start hours for stride-24 windows after the first week."""
    if n_hours < WINDOW_HOURS:
        return []
    return list(range(CONTEXT_HOURS, n_hours - HORIZON_HOURS + 1, HORIZON_HOURS))


@dataclass(frozen=True)
class TransferSplit:
    train: tuple[int, int]
    val: tuple[int, int]
    test: tuple[int, int]

    @property
    def days(self) -> dict[str, int]:
        return {k: (b - a) // 24 for k, (a, b) in (("train", self.train), ("val", self.val), ("test", self.test))}

    def val_targets(self) -> list[int]:
        return list(range(self.val[0], self.val[1] - HORIZON_HOURS + 1, HORIZON_HOURS))

    def test_targets(self) -> list[int]:
        return list(range(self.test[0], self.test[1] - HORIZON_HOURS + 1, HORIZON_HOURS))


def transfer_split(n_hours: int) -> TransferSplit:
    """Months 1-5 train, month 6 validation, months 7-12 test (30-day months)."""
    if n_hours < TRANSFER_HOURS:
        raise DataError(f"transfer task needs {TRANSFER_HOURS} hours, building has {n_hours}")
    a = TRAIN_MONTHS * MONTH_HOURS
    b = a + VAL_MONTHS * MONTH_HOURS
    return TransferSplit((0, a), (a, b), (b, b + TEST_MONTHS * MONTH_HOURS))


def forecast_days(forecaster, windows: Sequence[Window], sigma_floor: float = SIGMA_FLOOR):
    forecasts = []
    for w in windows:
        fc = forecaster.predict(w.context.values)
        if isinstance(fc, Gaussian) and fc.boxcox is None and sigma_floor > 0:
            fc = Gaussian(fc.mu, np.maximum(fc.sigma, sigma_floor))
        forecasts.append(fc)
    return forecasts


def _score(record: BuildingRecord, windows: Sequence[Window], forecaster, config: RunConfig) -> Outcome:
    actuals = np.stack([w.target.values for w in windows])
    try:
        score = score_building(record.id, record.dataset_name, actuals,
                               forecast_days(forecaster, windows, config.sigma_floor))
    except UndefinedScoreError:
        return Outcome(record.id, "excluded", reason="zero mean load over test span")
    return Outcome(record.id, "scored", score, actuals=actuals if config.emit_actuals else None)


def evaluate_zero_shot(record: BuildingRecord, series: LoadSeries, config: RunConfig) -> Outcome:
    if len(series) < WINDOW_HOURS:
        return Outcome(record.id, "skipped", reason=f"only {len(series)} hours")
    if config.cap and series.values.max() > config.max_hourly_kw:
        return Outcome(record.id, "excluded", reason="exceeds consumption cap")
    windows = sliding_windows(series, HORIZON_HOURS, record)
    return _score(record, windows, PERSISTENCE[config.forecaster], config)


def fit_transfer_model(config: RunConfig, series: LoadSeries, split: TransferSplit):
    if config.forecaster in PERSISTENCE:
        return PERSISTENCE[config.forecaster]
    train = sliding_windows(series.slice(*split.train), HORIZON_HOURS)
    val = windows_at(series, split.val_targets())
    if config.forecaster == "linear":
        return fit_linear_direct(train, config.schedule(), use_bias=config.use_bias)
    model, _ = fit_dlinear(train, config.schedule(), val_windows=val, kernel=config.kernel)
    return model


def evaluate_transfer(record: BuildingRecord, series: LoadSeries, config: RunConfig) -> Outcome:
    try:
        split = transfer_split(len(series))
    except DataError as exc:
        return Outcome(record.id, "skipped", reason=str(exc))
    if config.cap and series.values.max() > config.max_hourly_kw:
        return Outcome(record.id, "excluded", reason="exceeds consumption cap")
    try:
        model = fit_transfer_model(config, series, split)
    except FitError as exc:
        return Outcome(record.id, "skipped", reason=f"fit failed: {exc}")
    return _score(record, windows_at(series, split.test_targets(), record), model, config)


def _evaluate(args) -> Outcome:
    record, series, config = args
    fn = evaluate_zero_shot if config.task == "zero_shot" else evaluate_transfer
    return fn(record, series, config)


# -- run orchestration -------------------------------------------------------

def select_buildings(items: list[tuple[BuildingRecord, LoadSeries]], sample: int, seed: int):
    """Seeded sample of ``sample`` buildings per building type (all when 0)."""
    if not sample:
        return items
    rng = np.random.default_rng(seed)
    chosen = []
    for kind in sorted({r.building_type.value for r, _ in items}):
        group = [it for it in items if it[0].building_type.value == kind]
        if len(group) > sample:
            idx = np.sort(rng.choice(len(group), size=sample, replace=False))
            group = [group[i] for i in idx]
        chosen.extend(group)
    return sorted(chosen, key=lambda it: it[0].id)


@dataclass
class RunResult:
    outcomes: list[Outcome]
    n_input: int
    out_dir: Path
    comparison: Optional[dict] = None

    @property
    def scores(self) -> list[BuildingScore]:
        return [o.score for o in self.outcomes if o.status == "scored"]

    def count(self, status: str) -> int:
        return sum(o.status == status for o in self.outcomes)


def _run(config: RunConfig) -> RunResult:
    if not config.corpus:
        raise ConfigError("no corpus given")
    corpus_path = Path(config.corpus)
    if not corpus_path.exists():
        raise ConfigError(f"corpus path does not exist: {corpus_path}")
    baseline = None
    if config.baseline_run:
        baseline_file = Path(config.baseline_run) / "scores.csv"
        if not baseline_file.exists():
            raise ConfigError(f"baseline run not found: {baseline_file}")
        baseline = read_scores(baseline_file)
    corpus = Corpus.open(corpus_path)
    items = list(corpus.iter_series())
    selected = select_buildings(items, config.sample, config.seed)
    jobs = [(r, s, config) for r, s in selected]
    if config.workers > 1:
        with ProcessPoolExecutor(max_workers=config.workers) as pool:
            outcomes = list(pool.map(_evaluate, jobs, chunksize=1))
    else:
        outcomes = [_evaluate(j) for j in jobs]
    outcomes.sort(key=lambda o: o.building)
    for o in outcomes:
        if o.status != "scored":
            log.info("%s %s: %s", o.status, o.building, o.reason)

    out = Path(config.output)
    out.mkdir(parents=True, exist_ok=True)
    result = RunResult(outcomes, len(items), out)
    scores = result.scores
    write_scores(out / "scores.csv", scores)
    report = aggregate(scores, n_boot=config.n_boot, seed=config.seed, n_excluded=result.count("excluded"))
    doc = report.as_dict()
    doc["n_skipped"] = result.count("skipped")
    doc["n_input"] = len(items)
    doc["n_not_sampled"] = len(items) - len(selected)
    doc["excluded"] = {o.building: o.reason for o in outcomes if o.status != "scored"}
    if baseline is not None:
        result.comparison = compare_scores(scores, baseline)
        doc["vs_baseline"] = result.comparison
    write_json(out / "aggregate.json", doc)
    write_profiles(out / "profiles.csv", doc["profiles"])
    if config.emit_actuals:
        rows = []
        for o in outcomes:
            if o.status == "scored" and o.actuals is not None:
                rows.extend((o.building, o.score.dataset, d, o.actuals[d]) for d in range(o.actuals.shape[0]))
        write_actuals(out / "actuals.csv", rows)
    write_run_manifest(out / "manifest.txt", config, result, len(selected))
    return result


def run_zero_shot(config: RunConfig) -> RunResult:
    return _run(replace(config, task="zero_shot"))


def run_transfer(config: RunConfig) -> RunResult:
    return _run(replace(config, task="transfer"))


# -- files -------------------------------------------------------------------

def _fmt(v) -> str:
    return "" if v is None else repr(float(v))


def write_scores(path: Path, scores: Sequence[BuildingScore]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(SCORE_COLUMNS)
        for s in sorted(scores, key=lambda s: s.building):
            writer.writerow([s.building, s.dataset, _fmt(s.nrmse), _fmt(s.nmae), _fmt(s.nmbe),
                             _fmt(s.rps), s.n_days])


def read_scores(path: Union[str, Path]) -> list[BuildingScore]:
    out = []
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            out.append(BuildingScore(
                row["building"], row["dataset"], float(row["nrmse"]), float(row["nmae"]),
                float(row["nmbe"]), float(row["rps"]) if row["rps"] else None, int(row["n_days"])))
    return out


def write_json(path: Path, doc: dict) -> None:
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def write_profiles(path: Path, profiles: dict) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["metric", "threshold", "fraction", "ci_lower", "ci_upper"])
        for metric in sorted(profiles):
            p = profiles[metric]
            for row in zip(p["thresholds"], p["fraction"], p["ci_lower"], p["ci_upper"]):
                writer.writerow([metric, *(repr(float(v)) for v in row)])


def write_run_manifest(path: Path, config: RunConfig, result: RunResult, n_selected: int) -> None:
    scored, skipped, excluded = result.count("scored"), result.count("skipped"), result.count("excluded")
    not_sampled = result.n_input - n_selected
    if scored + skipped + excluded + not_sampled != result.n_input:
        raise RuntimeError("building count conservation violated")
    lines = [
        f"tool = loadbench {__version__}",
        f"config_sha256 = {config.digest()}",
        f"task = {config.task}",
        f"forecaster = {config.forecaster}",
        f"seed = {config.seed}",
        f"n_boot = {config.n_boot}",
        f"buildings_input = {result.n_input}",
        f"buildings_not_sampled = {not_sampled}",
        f"buildings_scored = {scored}",
        f"buildings_skipped = {skipped}",
        f"buildings_excluded = {excluded}",
    ]
    path.write_text("\n".join(lines) + "\n" + "".join(f"config.{line}\n" for line in config.to_text().splitlines()))


# -- comparison --------------------------------------------------------------

COMPARE_METRICS = ("nrmse", "nmae", "rps")


def compare_scores(x_scores: Sequence[BuildingScore], y_scores: Sequence[BuildingScore]) -> dict:
    """P(X < Y) per metric, overall and per stratum, pairing buildings by id."""
    x = {s.building: s for s in x_scores}
    y = {s.building: s for s in y_scores}
    common = sorted(set(x) & set(y))
    doc: dict = {"n_paired": len(common), "overall": {}, "by_stratum": {}, "warnings": []}
    if not common:
        doc["warnings"].append("no buildings in common")
        return doc
    strata = sorted({x[b].dataset for b in common})
    for metric in COMPARE_METRICS:
        pairs = [(x[b].get(metric), y[b].get(metric), x[b].dataset) for b in common
                 if x[b].get(metric) is not None and y[b].get(metric) is not None]
        if not pairs:
            continue
        xs = np.array([p[0] for p in pairs])
        ys = np.array([p[1] for p in pairs])
        ds = np.array([p[2] for p in pairs])
        doc["overall"][metric] = probability_of_improvement(xs, ys)
        for stratum in strata:
            mask = ds == stratum
            if mask.any():
                doc["by_stratum"].setdefault(stratum, {})[metric] = probability_of_improvement(xs[mask], ys[mask])
    return doc


def compare_runs(run_a: Union[str, Path], run_b: Union[str, Path], out_dir: Union[str, Path, None] = None) -> dict:
    """Compare two run directories; ``run_a`` plays X in P(X < Y)."""
    a = read_scores(Path(run_a) / "scores.csv")
    b = read_scores(Path(run_b) / "scores.csv")
    doc = compare_scores(a, b)
    if not doc["n_paired"]:
        log.warning("runs %s and %s share no buildings", run_a, run_b)
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        write_json(out / "comparison.json", doc)
        bmap = {s.building: s for s in b}
        with open(out / "deltas.csv", "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            header = ["building", "dataset"]
            for m in COMPARE_METRICS:
                header += [f"{m}_a", f"{m}_b", f"{m}_delta"]
            writer.writerow(header)
            for s in sorted(a, key=lambda s: s.building):
                if s.building not in bmap:
                    continue
                row = [s.building, s.dataset]
                for m in COMPARE_METRICS:
                    va, vb = s.get(m), bmap[s.building].get(m)
                    row += [_fmt(va), _fmt(vb), _fmt(None if va is None or vb is None else va - vb)]
                writer.writerow(row)
    return doc


def build_report(run_dir: Union[str, Path], out_dir: Union[str, Path, None] = None, n_boot: int = 1000,
                 seed: int = 0, figures: bool = False) -> dict:
    """Re-aggregate a run's per-building scores; optionally render profile figures."""
    run_dir = Path(run_dir)
    out = Path(out_dir) if out_dir is not None else run_dir
    out.mkdir(parents=True, exist_ok=True)
    scores = read_scores(run_dir / "scores.csv")
    doc = aggregate(scores, n_boot=n_boot, seed=seed).as_dict()
    write_json(out / "report.json", doc)
    write_profiles(out / "report_profiles.csv", doc["profiles"])
    if figures:
        from .plots import render_report_figures

        doc["figures"] = [p.name for p in render_report_figures(doc, scores, out)]
    return doc
