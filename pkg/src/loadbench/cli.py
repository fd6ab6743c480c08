"""Command line entry point.

Exit codes: 0 success, 1 usage error, 2 data error, 3 internal error.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from datetime import datetime
from pathlib import Path

import numpy as np

from . import __version__
from .bench import ConfigError, DataError, RunConfig, build_report, compare_runs, run_transfer, run_zero_shot
from .bench import write_json, write_scores
from .core import as_utc
from .forecast import score_prediction_file
from .ingest import Aggregation, Excluded, IngestError, IngestPolicy, clean, read_building_csv, read_metadata_csv
from .metrics import ForecastInputError, aggregate
from .store import Corpus, StoreError, build_index, write_corpus
from .synth import SynthConfig, generate_corpus
from .tokenizer import TokenizerError, compression_stats, fit
from .transform import BoxCoxParams, fit_by_group

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_INTERNAL = 0, 1, 2, 3

log = logging.getLogger("loadbench")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _cmd_synth(args) -> None:
    config = SynthConfig(
        n_residential=args.n_residential,
        n_commercial=args.n_commercial,
        n_days=args.n_days,
        seed=args.seed,
        noise_scale=args.noise_scale,
        weekend_attenuation=args.weekend_attenuation,
        n_regions=args.n_regions,
        start=as_utc(datetime.fromisoformat(args.start)),
    )
    shards = write_corpus(args.out, generate_corpus(config))
    print(f"wrote {config.n_buildings} buildings in {len(shards)} shards to {args.out}")


def _cmd_ingest(args) -> None:
    policy = IngestPolicy(
        max_missing_fraction=args.max_missing_fraction,
        long_gap_threshold=args.long_gap_hours,
        max_hourly_kw=float("inf") if args.no_cap else args.max_hourly_kw,
        aggregation=Aggregation(args.aggregation),
    )
    raw_dir = Path(args.raw_dir)
    kept, excluded = [], []
    for record in sorted(read_metadata_csv(args.metadata), key=lambda r: r.id):
        path = raw_dir / f"{record.id}.csv"
        if not path.exists():
            excluded.append((record.id, "no data file"))
            continue
        stamps, values = read_building_csv(path)
        result = clean(stamps, values, policy)
        if isinstance(result, Excluded):
            excluded.append((record.id, result.reason))
        else:
            kept.append((record, result))
    out = Path(args.out)
    write_corpus(out, kept)
    with open(out / "exclusions.csv", "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["id", "reason"])
        writer.writerows(excluded)
    print(f"kept {len(kept)} buildings, excluded {len(excluded)}")


def _cmd_index(args) -> None:
    corpus = Corpus.open(args.corpus)
    regions = [r for r in (args.heldout_regions or "").split(",") if r]
    n = build_index(corpus.shards, args.seed, args.out, holdout_hours=24 * args.holdout_days,
                    heldout_regions=regions)
    print(f"indexed {n} windows into {args.out}")


def _cmd_tokenize(args) -> None:
    corpus = Corpus.open(args.corpus)
    loads, kinds = [], []
    for record, series in corpus.iter_series():
        loads.append(series.values)
        kinds.append(np.full(len(series), record.building_type.value))
    if not loads:
        raise DataError("corpus has no buildings")
    x = np.concatenate(loads)
    vocab = fit(x, args.k, args.tau, args.seed, max_subsample=args.max_samples)
    vocab.save(args.out)
    stats = compression_stats(x, vocab, np.concatenate(kinds))
    doc = {
        "k_initial": args.k,
        "tau": args.tau,
        "vocabulary_size": len(vocab),
        "mae_kwh": stats.mae_by_type,
        "utilization": stats.utilization,
        "token_counts": stats.token_counts.tolist(),
    }
    stats_path = Path(args.stats) if args.stats else Path(str(args.out) + ".stats.json")
    write_json(stats_path, doc)
    print(f"vocabulary of {len(vocab)} tokens (k={args.k}) written to {args.out}")


def _cmd_fit_transform(args) -> None:
    groups: dict[str, list] = {}
    for record, series in Corpus.open(args.corpus).iter_series():
        groups.setdefault(record.building_type.value, []).append(series.values)
    if not groups:
        raise DataError("corpus has no buildings")
    fitted = fit_by_group({k: np.concatenate(v) for k, v in groups.items()}, args.kind, args.per_type)
    for group, params in fitted.items():
        path = Path(args.out) if group == "all" else Path(f"{args.out}.{group}")
        params.save(path)
        print(f"{args.kind} parameters ({group}) written to {path}")


RUN_FLAGS = ("corpus", "forecaster", "output", "n_boot", "seed", "sample", "workers", "sigma_floor",
             "max_hourly_kw", "baseline_run", "max_epochs", "patience", "batch_size", "kernel")


def _run_config(args, task: str) -> RunConfig:
    overrides = {k: getattr(args, k, None) for k in RUN_FLAGS}
    for flag in ("cap", "emit_actuals"):
        if getattr(args, flag):
            overrides[flag] = True
    if getattr(args, "no_bias", False):
        overrides["use_bias"] = False
    overrides["task"] = task
    if args.config:
        return RunConfig.load(args.config, overrides)
    return RunConfig.from_mapping(overrides)


def _print_run(result) -> None:
    print(f"scored {result.count('scored')}, skipped {result.count('skipped')}, "
          f"excluded {result.count('excluded')} of {result.n_input} buildings -> {result.out_dir}")


def _cmd_eval_zero_shot(args) -> None:
    _print_run(run_zero_shot(_run_config(args, "zero_shot")))


def _cmd_eval_transfer(args) -> None:
    _print_run(run_transfer(_run_config(args, "transfer")))


def _cmd_score_file(args) -> None:
    from .tokenizer import TokenVocabulary

    vocab = TokenVocabulary.load(args.vocab) if args.vocab else None
    boxcox = BoxCoxParams.load(args.boxcox) if args.boxcox else None
    result = score_prediction_file(args.predictions, args.actuals, vocab, boxcox)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_scores(out / "scores.csv", result.scores)
    doc = aggregate(result.scores, n_boot=args.n_boot, seed=args.seed, n_excluded=len(result.undefined)).as_dict()
    doc["rejected_rows"] = [{"line": line, "reason": reason} for line, reason in result.rejected]
    doc["dropped_days"] = result.dropped
    write_json(out / "aggregate.json", doc)
    print(result.summary())


def _cmd_compare(args) -> None:
    doc = compare_runs(args.run_a, args.run_b, args.out)
    if not doc["n_paired"]:
        print("warning: runs share no buildings", file=sys.stderr)
    print(json.dumps(doc["overall"], sort_keys=True))


def _cmd_report(args) -> None:
    doc = build_report(args.run, args.out, n_boot=args.n_boot, seed=args.seed, figures=args.figures)
    print(f"report for {doc['n_scored']} buildings written to {args.out or args.run}")


def _add_run_flags(p, transfer: bool) -> None:
    p.add_argument("--config", help="key = value config file; flags override it")
    p.add_argument("--corpus")
    p.add_argument("--forecaster")
    p.add_argument("--output")
    p.add_argument("--n-boot", dest="n_boot", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--sample", type=int, help="evaluate N seeded buildings per type")
    p.add_argument("--workers", type=int)
    p.add_argument("--sigma-floor", dest="sigma_floor", type=float)
    p.add_argument("--cap", action="store_true", help="exclude buildings above the consumption cap")
    p.add_argument("--max-hourly-kw", dest="max_hourly_kw", type=float)
    p.add_argument("--emit-actuals", dest="emit_actuals", action="store_true")
    if transfer:
        p.add_argument("--baseline-run", dest="baseline_run")
        p.add_argument("--max-epochs", dest="max_epochs", type=int)
        p.add_argument("--patience", type=int)
        p.add_argument("--batch-size", dest="batch_size", type=int, help="minibatch size; 0 for full batch")
        p.add_argument("--kernel", type=int)
        p.add_argument("--no-bias", dest="no_bias", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="loadbench", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"loadbench {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("synth", help="generate a synthetic corpus")
    p.add_argument("--out", required=True)
    p.add_argument("--n-residential", type=int, default=10)
    p.add_argument("--n-commercial", type=int, default=10)
    p.add_argument("--n-days", type=int, default=365)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--noise-scale", type=float, default=0.1)
    p.add_argument("--weekend-attenuation", type=float, default=0.7)
    p.add_argument("--n-regions", type=int, default=4)
    p.add_argument("--start", default="2018-01-01T00:00:00")
    p.set_defaults(func=_cmd_synth)

    p = sub.add_parser("ingest", help="clean per-building CSVs into a corpus")
    p.add_argument("--metadata", required=True)
    p.add_argument("--raw-dir", required=True, help="directory of <id>.csv files (timestamp,kwh)")
    p.add_argument("--out", required=True)
    p.add_argument("--max-missing-fraction", type=float, default=0.10)
    p.add_argument("--long-gap-hours", type=int, default=168)
    p.add_argument("--max-hourly-kw", type=float, default=5100.0)
    p.add_argument("--no-cap", action="store_true")
    p.add_argument("--aggregation", choices=[a.value for a in Aggregation], default="mean")
    p.set_defaults(func=_cmd_ingest)

    p = sub.add_parser("index", help="build a shuffled window index over a corpus")
    p.add_argument("--corpus", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--holdout-days", type=int, default=14)
    p.add_argument("--heldout-regions", default="")
    p.set_defaults(func=_cmd_index)

    p = sub.add_parser("tokenize", help="fit a load token vocabulary")
    p.add_argument("--corpus", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--k", type=int, default=512)
    p.add_argument("--tau", type=float, default=0.01)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--max-samples", type=int, default=1_000_000)
    p.add_argument("--stats")
    p.set_defaults(func=_cmd_tokenize)

    p = sub.add_parser("fit-transform", help="fit Box-Cox or standard-scaling parameters on a corpus")
    p.add_argument("--corpus", required=True)
    p.add_argument("--out", required=True, help="parameter file; with --per-type, <out>.<type> per building type")
    p.add_argument("--kind", choices=["boxcox", "standard"], default="boxcox")
    p.add_argument("--per-type", action="store_true", help="fit residential and commercial separately")
    p.set_defaults(func=_cmd_fit_transform)

    p = sub.add_parser("eval-zero-shot", help="zero-shot evaluation of a persistence forecaster")
    _add_run_flags(p, transfer=False)
    p.set_defaults(func=_cmd_eval_zero_shot)

    p = sub.add_parser("eval-transfer", help="transfer-learning evaluation")
    _add_run_flags(p, transfer=True)
    p.set_defaults(func=_cmd_eval_transfer)

    p = sub.add_parser("score-file", help="score a prediction interchange file")
    p.add_argument("--predictions", required=True)
    p.add_argument("--actuals", required=True)
    p.add_argument("--vocab")
    p.add_argument("--boxcox", help="Box-Cox parameter file; gaussian rows are then in transformed space")
    p.add_argument("--out", required=True)
    p.add_argument("--n-boot", type=int, default=1000)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=_cmd_score_file)

    p = sub.add_parser("compare", help="P(X<Y) and per-building deltas between two runs")
    p.add_argument("run_a")
    p.add_argument("run_b")
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_compare)

    p = sub.add_parser("report", help="re-aggregate a run and optionally render figures")
    p.add_argument("run")
    p.add_argument("--out")
    p.add_argument("--n-boot", type=int, default=1000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--figures", action="store_true", help="render PNG figures next to the report")
    p.set_defaults(func=_cmd_report)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except (ConfigError, UsageError) as exc:
        print(f"loadbench: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, IngestError, StoreError, TokenizerError, ForecastInputError, FileNotFoundError,
            ValueError) as exc:
        print(f"loadbench: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except Exception as exc:  # noqa: BLE001
        log.exception("internal error")
        print(f"loadbench: internal error: {exc}", file=sys.stderr)
        return EXIT_INTERNAL
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
