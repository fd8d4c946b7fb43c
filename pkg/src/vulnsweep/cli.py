"""Operator command line: ingest, featurize, simulate, report, serve.

All randomness flows from --seed (default 0); the same invocation always
produces the same artifacts. Exit code 0 means every requested artifact was
written; failures print a diagnostic to stderr and exit nonzero.
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import fields
from pathlib import Path

from .corpus import IngestionError, load_corpus, load_manifest, save_corpus
from .engine import ConfigError, SessionConfig
from .features import (
    DEFAULT_VOCABULARY_SIZE,
    build_matrix,
    load_features,
    save_features,
    select_vocabulary,
)
from .oracle import OracleConfig
from .simharness import (
    RECALL_TARGETS,
    load_metrics,
    run_baselines,
    run_simulation,
    summarize,
    write_runs,
    write_summary_csv,
)


def parse_config_file(path: str | Path) -> dict:
    """Read a flat key=value file whose keys mirror SessionConfig fields.

    Blank lines and #-comments are ignored. Values are coerced to the field's
    type; unknown keys and malformed lines raise ConfigError with the line
    number.
    """
    defaults = SessionConfig()
    types = {f.name: type(getattr(defaults, f.name)) for f in fields(SessionConfig)}
    values: dict = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            key, sep, value = line.partition("=")
            if not sep:
                raise ConfigError(f"{path}:{lineno}: expected key=value")
            key = key.strip()
            value = value.strip()
            if key not in types:
                raise ConfigError(f"{path}:{lineno}: unknown config key {key!r}")
            try:
                values[key] = _coerce(value, types[key])
            except ValueError as exc:
                raise ConfigError(f"{path}:{lineno}: {exc}") from None
    return values


def _coerce(value: str, kind: type):
    if kind is bool:
        lowered = value.lower()
        if lowered in ("true", "1", "yes", "on"):
            return True
        if lowered in ("false", "0", "no", "off"):
            return False
        raise ValueError(f"expected a boolean, got {value!r}")
    if kind is int:
        return int(value)
    if kind is float:
        return float(value)
    return value


def _positive_int(text: str) -> int:
    value = int(text)
    if value <= 0:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {text}")
    return value


def _targets(text: str) -> tuple[int, ...]:
    try:
        parsed = tuple(int(part) for part in text.split(",") if part.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad target list {text!r}") from None
    if not parsed:
        raise argparse.ArgumentTypeError("empty target list")
    return parsed


# -- subcommands ---------------------------------------------------------


def cmd_ingest(args: argparse.Namespace) -> int:
    corpus = load_manifest(args.manifest)
    save_corpus(corpus, args.out)
    print(f"ingested {len(corpus)} documents into {args.out}")
    return 0


def cmd_featurize(args: argparse.Namespace) -> int:
    corpus = load_corpus(args.store)
    vocabulary = None
    if args.mode in ("text", "hybrid"):
        vocabulary = select_vocabulary(corpus, args.m)
    matrix = build_matrix(corpus, args.mode, vocabulary)
    save_features(matrix, args.out)
    print(
        f"featurized {matrix.rows.shape[0]} documents "
        f"({args.mode}, dim {matrix.dim}) into {args.out}"
    )
    return 0


def cmd_simulate(args: argparse.Namespace) -> int:
    corpus = load_corpus(args.store)
    overrides = parse_config_file(args.config) if args.config else {}
    overrides["seed"] = args.seed
    config = SessionConfig(**overrides)
    oracle_config = OracleConfig(error_rate=args.error_rate, seed=args.seed)
    if args.baseline_mode:
        runs = run_baselines(
            corpus,
            args.baseline_mode,
            oracle_config,
            repeats=args.repeats,
            category=args.category,
            n1=config.n1,
            seed=args.seed,
        )
    else:
        matrix = load_features(args.features)
        if matrix.rows.shape[0] != len(corpus):
            raise ConfigError(
                f"feature store has {matrix.rows.shape[0]} rows "
                f"for a corpus of {len(corpus)} documents"
            )
        runs = run_simulation(
            corpus,
            matrix,
            config,
            oracle_config,
            repeats=args.repeats,
            category=args.category,
        )
    out_dir = Path(args.out)
    write_runs(runs, out_dir)
    summary = summarize(runs)
    write_summary_csv(summary, out_dir / "summary.csv")
    print(f"wrote {len(runs)} runs and summary.csv to {out_dir}")
    _print_summary(summary, RECALL_TARGETS)
    return 0


def cmd_report(args: argparse.Namespace) -> int:
    runs = load_metrics(args.runs)
    baseline = load_metrics(args.baseline) if args.baseline else None
    summary = summarize(runs, args.targets, baseline)
    _print_summary(summary, args.targets)
    if args.out:
        write_summary_csv(summary, args.out, args.targets)
        print(f"wrote {args.out}")
    return 0


def _print_summary(summary, targets: tuple[int, ...]) -> None:
    print(f"runs: {summary.runs}")
    print("recall target   cost  [median (IQR), percent of pool]")
    for t in targets:
        print(f"{t:>11}%   {summary.cost_at[t].format()}")
    print(f"recall at stop  {summary.stop_recall.format()}")
    print(f"cost at stop    {summary.stop_cost.format()}")
    if summary.relative_recall is not None:
        print(f"relative recall {summary.relative_recall.format()}")
    if summary.relative_cost is not None:
        print(f"relative cost   {summary.relative_cost.format()}")


def cmd_serve(args: argparse.Namespace) -> int:
    import uvicorn

    from .service import FeatureSet, create_app

    corpus = load_corpus(args.store)
    matrix = load_features(args.features)
    if matrix.rows.shape[0] != len(corpus):
        raise ConfigError(
            f"feature store has {matrix.rows.shape[0]} rows "
            f"for a corpus of {len(corpus)} documents"
        )
    app = create_app(
        corpora={"default": corpus},
        feature_sets={"default": FeatureSet("default", matrix)},
        data_dir=args.data_dir,
    )
    uvicorn.run(app, host=args.host, port=args.port)
    return 0


# -- parser ----------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="vulnsweep",
        description="Active-learning review sweeps over a file corpus.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="load a manifest CSV into a corpus store")
    p.add_argument("--manifest", required=True, help="manifest CSV path")
    p.add_argument("--out", required=True, help="corpus store directory")
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("featurize", help="build a feature matrix from a corpus store")
    p.add_argument("--store", required=True, help="corpus store directory")
    p.add_argument("--mode", choices=("text", "hybrid", "metrics"), default="text")
    p.add_argument(
        "--m",
        type=_positive_int,
        default=DEFAULT_VOCABULARY_SIZE,
        help="vocabulary size for text/hybrid modes",
    )
    p.add_argument("--out", required=True, help="feature store directory")
    p.set_defaults(func=cmd_featurize)

    p = sub.add_parser("simulate", help="run repeated sessions against ground truth")
    p.add_argument("--store", required=True, help="corpus store directory")
    p.add_argument("--features", help="feature store directory")
    p.add_argument("--category", default="All", help="truth category to target")
    p.add_argument("--config", help="key=value session config file")
    p.add_argument("--error-rate", type=float, default=0.0, dest="error_rate")
    p.add_argument("--repeats", type=_positive_int, default=30)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument(
        "--baseline-mode",
        choices=("random", "crash"),
        dest="baseline_mode",
        help="run a no-learning review order instead of the engine",
    )
    p.add_argument("--out", required=True, help="run output directory")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("report", help="summarize runs as median (IQR) tables")
    p.add_argument("--runs", required=True, help="run directory from simulate")
    p.add_argument("--targets", type=_targets, default=RECALL_TARGETS)
    p.add_argument("--baseline", help="baseline run directory for relative rows")
    p.add_argument("--out", help="also write the summary CSV here")
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("serve", help="serve the live review HTTP API")
    p.add_argument("--store", required=True, help="corpus store directory")
    p.add_argument("--features", required=True, help="feature store directory")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8000)
    p.add_argument(
        "--data-dir",
        default="vulnsweep-data",
        dest="data_dir",
        help="directory for session event logs",
    )
    p.set_defaults(func=cmd_serve)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command == "simulate" and not args.baseline_mode and not args.features:
        parser.error("simulate requires --features unless --baseline-mode is set")
    try:
        return args.func(args)
    except (IngestionError, ConfigError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
