"""Command-line front end: generate, index, query, bench, estimate, inspect."""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

from . import bench as benchmod
from .csvio import MalformedRow, OffsetBeyondEOF, describe_dataset, format_row
from .datagen import (
    GenSpec,
    GenSpecError,
    absent_email,
    generate_dataset,
    manifest_path,
    quartile_plants,
    read_manifest,
    write_manifest,
)
from .estimate import SampleProfile, ZeroSample, estimate, profile_sample, render_estimate
from .index import (
    IndexFormatError,
    OutOfRange,
    StaleIndex,
    build_key_index,
    build_row_offset_index,
    load_index,
    read_header,
)
from .model import CsvDialect, KeyKind, normalize
from .planner import ByKey, ByRow, IndexSet, Query, Strategy, StrategyUnavailable, execute
from .scan import ScanKind, line_scan

log = logging.getLogger("brix")

EXIT_OK, EXIT_ERROR, EXIT_USAGE = 0, 1, 2
ROW_INDEX_NAME = "rows.idx"
DEFAULT_EMAIL_COLUMN = 5
DEFAULT_PHONE_COLUMN = 7
UNITS = {"B": 1, "KB": 1024, "MB": 1024**2, "GB": 1024**3}


class UsageError(Exception):
    pass


class CliParser(argparse.ArgumentParser):
    def error(self, message: str):
        self.print_usage(sys.stderr)
        sys.stderr.write(f"ERROR usage: {message}\n")
        sys.exit(EXIT_USAGE)


def key_index_name(kind: KeyKind, column: int) -> str:
    return f"key-{kind.value}-c{column}.idx"


def index_dir_for(corpus: Path, override: str | None) -> Path:
    if override:
        return Path(override)
    env = os.environ.get("BRIX_INDEX_DIR")
    if env:
        return Path(env)
    return corpus.with_name(corpus.name + ".brix.d")


def parse_key_spec(text: str) -> tuple[KeyKind, int]:
    kind, sep, column = text.partition(":")
    try:
        if not sep:
            raise ValueError
        return KeyKind(kind), int(column)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected KIND:COLUMN such as email:5, got {text!r}") from None


def _strategy(text: str) -> Strategy:
    try:
        return Strategy(text.replace("-", "_"))
    except ValueError:
        raise argparse.ArgumentTypeError(f"unknown strategy {text!r}") from None


def _dialect(args) -> CsvDialect:
    return CsvDialect(header=not args.no_header)


def _columns(corpus: Path) -> tuple[int, int, int | None]:
    if manifest_path(corpus).exists():
        spec = read_manifest(corpus)
        return spec.email_column, spec.phone_column, spec.id_column
    return DEFAULT_EMAIL_COLUMN, DEFAULT_PHONE_COLUMN, None


def build_parser() -> CliParser:
    parser = CliParser(prog="brix", description="Retrieval strategies over large CSV corpora.")
    parser.add_argument("-v", "--verbose", action="count", default=0, help="more logging on stderr")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=CliParser)

    p = sub.add_parser("generate", help="write a synthetic corpus and its plant manifest")
    p.add_argument("--rows", type=int, required=True)
    p.add_argument("--columns", type=int, default=59)
    p.add_argument("--seed", type=int, default=42)
    p.add_argument("--email-column", type=int, default=DEFAULT_EMAIL_COLUMN)
    p.add_argument("--phone-column", type=int, default=DEFAULT_PHONE_COLUMN)
    p.add_argument("--no-plants", action="store_true", help="skip the quartile plants")
    p.add_argument("--out", required=True)

    def corpus_args(p):
        p.add_argument("corpus")
        p.add_argument("--index-dir", help="default: <corpus>.brix.d or $BRIX_INDEX_DIR")
        p.add_argument("--no-header", action="store_true", help="the corpus has no header line")

    p = sub.add_parser("index", help="build the row-offset index and key indexes")
    corpus_args(p)
    p.add_argument("--key", action="append", default=[], type=parse_key_spec, metavar="KIND:COLUMN")
    p.add_argument("--memory-budget", type=int, default=512 * 1024 * 1024, metavar="BYTES")

    p = sub.add_parser("query", help="find records by row number, key or substring")
    corpus_args(p)
    target = p.add_mutually_exclusive_group(required=True)
    target.add_argument("--row", type=int)
    target.add_argument("--email")
    target.add_argument("--phone")
    target.add_argument("--integer")
    target.add_argument("--pattern", help="raw substring, grep style")
    p.add_argument("--column", type=int, help="column holding the key (default from manifest)")
    p.add_argument("--strategy", type=_strategy, default=Strategy.AUTO,
                   help="auto, line-scan, field-scan, chunked-scan or index")
    p.add_argument("--first", action="store_true", help="stop at the first match")

    p = sub.add_parser("bench", help="time every strategy at the quartile probes")
    corpus_args(p)
    p.add_argument("--strategies", nargs="+", default=[s.value for s in benchmod.ALL_STRATEGIES],
                   choices=[s.value for s in ScanKind])
    p.add_argument("--probe-kind", choices=benchmod.PROBE_KINDS, default="email")
    p.add_argument("--repetitions", type=int, default=3)
    p.add_argument("--warmup", type=int, default=1)
    p.add_argument("--chunk-rows", type=int, default=1000)
    p.add_argument("--cold-cache", action="store_true", help="drop the corpus from the page cache per run")
    fmt = p.add_mutually_exclusive_group()
    fmt.add_argument("--json", action="store_true")
    fmt.add_argument("--markdown", action="store_true")
    p.add_argument("--out", help="write the report here instead of stdout")

    p = sub.add_parser("estimate", help="extrapolate memory and time from a sample")
    p.add_argument("corpus", nargs="?", help="profile a prefix of this corpus")
    p.add_argument("--no-header", action="store_true")
    p.add_argument("--sample-bytes", type=int)
    p.add_argument("--email", help="key searched while profiling (default: an absent address)")
    p.add_argument("--column", type=int)
    p.add_argument("--chunk-rows", type=int, default=1000)
    p.add_argument("--sample-size", type=float, help="measured sample size (skip profiling)")
    p.add_argument("--sample-mem", type=float, help="measured peak memory of the sample")
    p.add_argument("--sample-time", type=float, help="measured seconds for the sample")
    p.add_argument("--target", type=float, required=True, help="size of the full corpus")
    p.add_argument("--units", choices=sorted(UNITS), default="B",
                   help="unit of --target, --sample-size and --sample-mem (1 GB = 1024 MB)")

    p = sub.add_parser("inspect", help="print index headers as JSON")
    p.add_argument("paths", nargs="+", help="index files or an index directory")
    return parser


def cmd_generate(args) -> int:
    plants = () if args.no_plants or args.rows < 4 else quartile_plants(args.rows)
    spec = GenSpec(args.rows, args.columns, args.seed, args.email_column, args.phone_column, plants)
    descriptor = generate_dataset(spec, args.out)
    manifest = write_manifest(spec, args.out)
    print(f"wrote {descriptor.path} ({descriptor.row_count} rows, {descriptor.size_bytes} bytes)")
    print(f"wrote {manifest}")
    return EXIT_OK


def cmd_index(args) -> int:
    corpus = Path(args.corpus)
    dataset = describe_dataset(corpus, _dialect(args))
    for _, column in args.key:
        if not 0 <= column < dataset.column_count:
            raise UsageError(f"column {column} outside 0..{dataset.column_count - 1}")
    out_dir = index_dir_for(corpus, args.index_dir)
    report = build_row_offset_index(dataset, out_dir / ROW_INDEX_NAME)
    print(f"{report.path}: {report.entry_count} rows")
    for kind, column in args.key:
        report = build_key_index(dataset, column, kind, out_dir / key_index_name(kind, column), args.memory_budget)
        print(f"{report.path}: {report.entry_count} keys, {report.malformed} malformed rows skipped")
    return EXIT_OK


def _load_available(dataset, out_dir: Path, wanted: list[tuple[KeyKind, int]]) -> IndexSet:
    indexes = IndexSet()
    rows = out_dir / ROW_INDEX_NAME
    if rows.exists():
        indexes.add(load_index(rows, dataset))
    for kind, column in wanted:
        path = out_dir / key_index_name(kind, column)
        if path.exists():
            indexes.add(load_index(path, dataset))
    return indexes


def cmd_query(args) -> int:
    corpus = Path(args.corpus)
    dialect = _dialect(args)
    if args.pattern is not None:
        if args.strategy not in (Strategy.AUTO, Strategy.LINE_SCAN):
            raise StrategyUnavailable("--pattern is only answered by line-scan")
        result = line_scan(corpus, args.pattern, "first" if args.first else "all", dialect)
        for match in result:
            print(format_row(match.record.fields, dialect))
        log.info("line_scan: %d matches in %.4f s", len(result), result.elapsed)
        return EXIT_OK
    dataset = describe_dataset(corpus, dialect)
    email_col, phone_col, id_col = _columns(corpus)
    if args.row is not None:
        if args.row < 1:
            raise UsageError("--row must be >= 1")
        target, wanted = ByRow(args.row), []
    else:
        if args.email is not None:
            kind, raw, column = KeyKind.EMAIL, args.email, email_col
        elif args.phone is not None:
            kind, raw, column = KeyKind.PHONE, args.phone, phone_col
        else:
            kind, raw, column = KeyKind.INTEGER, args.integer, id_col
        column = args.column if args.column is not None else column
        if column is None:
            raise UsageError("--column is required for this key")
        try:
            key = normalize(kind, raw)
        except ValueError as exc:
            raise UsageError(str(exc)) from None
        target, wanted = ByKey(column, key), [(kind, column)]
    indexes = IndexSet()
    if args.strategy in (Strategy.AUTO, Strategy.INDEX):
        indexes = _load_available(dataset, index_dir_for(corpus, args.index_dir), wanted)
    try:
        result = execute(Query(target, args.strategy, args.first), dataset, indexes)
    finally:
        indexes.close()
    for match in result.matches:
        print(format_row(match.record.fields, dialect))
    log.info("%s: %d matches in %.4f s, %d bytes scanned", result.strategy.value,
             len(result.matches), result.elapsed, result.bytes_scanned)
    return EXIT_OK


def cmd_bench(args) -> int:
    corpus = Path(args.corpus)
    dataset = describe_dataset(corpus, _dialect(args))
    if not manifest_path(corpus).exists():
        raise benchmod.MissingPlants(f"no plant manifest next to {corpus}; generate the corpus with brix")
    spec = read_manifest(corpus)
    plan = benchmod.make_plan(dataset, spec, args.strategies, args.probe_kind,
                              args.repetitions, args.warmup, args.chunk_rows)
    indexes = IndexSet()
    if ScanKind.INDEX_LOOKUP in plan.strategies:
        wanted = []
        if args.probe_kind == "email":
            wanted = [(KeyKind.EMAIL, spec.email_column)]
        elif args.probe_kind == "integer":
            wanted = [(KeyKind.INTEGER, spec.id_column)]
        indexes = _load_available(dataset, index_dir_for(corpus, args.index_dir), wanted)
    try:
        report = benchmod.run(plan, indexes, cold_cache=args.cold_cache)
    finally:
        indexes.close()
    text = benchmod.render_report(report, "json" if args.json else "markdown")
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


def cmd_estimate(args) -> int:
    unit = UNITS[args.units]
    target = args.target * unit
    if args.corpus:
        corpus = Path(args.corpus)
        dialect = _dialect(args)
        email_col, _, _ = _columns(corpus)
        column = args.column if args.column is not None else email_col
        key = normalize(KeyKind.EMAIL, args.email or absent_email())
        size = corpus.stat().st_size
        sample = args.sample_bytes if args.sample_bytes is not None else max(1, size // 10)
        profile = profile_sample(corpus, min(sample, size), column, key, args.chunk_rows, dialect)
    else:
        values = (args.sample_size, args.sample_mem, args.sample_time)
        if any(v is None for v in values):
            raise UsageError("give a corpus or all of --sample-size, --sample-mem and --sample-time")
        profile = SampleProfile(args.sample_size * unit, args.sample_mem * unit, args.sample_time)
    sys.stdout.write(render_estimate(profile, estimate(profile, target)))
    return EXIT_OK


def cmd_inspect(args) -> int:
    paths = []
    for raw in args.paths:
        path = Path(raw)
        paths.extend(sorted(path.glob("*.idx")) if path.is_dir() else [path])
    out = [{"path": str(p), **read_header(p).to_dict()} for p in paths]
    print(json.dumps(out, indent=2))
    return EXIT_OK


COMMANDS = {
    "generate": cmd_generate,
    "index": cmd_index,
    "query": cmd_query,
    "bench": cmd_bench,
    "estimate": cmd_estimate,
    "inspect": cmd_inspect,
}

# Exception type -> stable error code on stderr, most specific first.
ERROR_CODES = (
    (UsageError, "usage"),
    (StaleIndex, "stale_index"),
    (IndexFormatError, "bad_index"),
    (StrategyUnavailable, "strategy_unavailable"),
    (benchmod.CorrectnessFailure, "correctness"),
    (benchmod.MissingPlants, "missing_plants"),
    (GenSpecError, "bad_spec"),
    (MalformedRow, "malformed_row"),
    (OutOfRange, "out_of_range"),
    (OffsetBeyondEOF, "out_of_range"),
    (ZeroSample, "zero_sample"),
    (OSError, "io"),
    (ValueError, "invalid_input"),
)


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        return COMMANDS[args.command](args)
    except Exception as exc:
        for kind, code in ERROR_CODES:
            if isinstance(exc, kind):
                sys.stderr.write(f"ERROR {code}: {exc}\n")
                return EXIT_USAGE if code == "usage" else EXIT_ERROR
        raise


if __name__ == "__main__":
    sys.exit(main())
