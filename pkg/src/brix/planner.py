"""Query front door: pick a strategy, run it, time it."""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

from .bm import Matcher
from .csvio import ReadStats, parse_row, row_at_offset, strip_terminator
from .index import KeyIndex, OutOfRange, RowOffsetIndex, load_index, lookup_key_records, lookup_row
from .model import DatasetDescriptor, KeyKind, NormalizedKey, RawRecord, normalize_value
from .scan import MatchResult, ScanKind, chunked_scan, field_scan, line_scan


class Strategy(str, Enum):
    AUTO = "auto"
    LINE_SCAN = "line_scan"
    FIELD_SCAN = "field_scan"
    CHUNKED_SCAN = "chunked_scan"
    INDEX = "index"


class StrategyUnavailable(Exception):
    pass


@dataclass(frozen=True)
class ByRow:
    row_number: int

    def __post_init__(self) -> None:
        if self.row_number < 1:
            raise ValueError("row_number must be >= 1")


@dataclass(frozen=True)
class ByKey:
    column: int
    key: NormalizedKey


@dataclass(frozen=True)
class Query:
    target: ByRow | ByKey
    strategy_override: Strategy = Strategy.AUTO
    early_exit: bool = False
    chunk_rows: int = 1000


@dataclass
class QueryResult:
    matches: list[MatchResult]
    strategy: Strategy
    elapsed: float
    bytes_scanned: int
    stats: ReadStats = field(default_factory=ReadStats)

    @property
    def rows(self) -> list[int]:
        return [m.record.row_number for m in self.matches]


@dataclass
class IndexSet:
    """Loaded indexes for one dataset; key indexes are keyed by (column, kind)."""

    rows: RowOffsetIndex | None = None
    keys: dict[tuple[int, KeyKind], KeyIndex] = field(default_factory=dict)
    load_seconds: float = 0.0

    def key_index(self, column: int, kind: KeyKind) -> KeyIndex | None:
        return self.keys.get((column, kind))

    def add(self, index: RowOffsetIndex | KeyIndex) -> None:
        if isinstance(index, RowOffsetIndex):
            self.rows = index
        else:
            self.keys[(index.column, index.key_kind)] = index

    def close(self) -> None:
        if self.rows is not None:
            self.rows.close()
        for index in self.keys.values():
            index.close()
        self.rows = None
        self.keys = {}


def plan(query: Query, indexes: IndexSet | None = None) -> Strategy:
    """Resolve ``auto`` and check that an explicit choice can run."""
    indexes = indexes or IndexSet()
    target = query.target
    choice = Strategy(query.strategy_override)
    if isinstance(target, ByRow):
        have_index = indexes.rows is not None
        if choice is Strategy.AUTO:
            return Strategy.INDEX if have_index else Strategy.LINE_SCAN
        if choice is Strategy.INDEX and not have_index:
            raise StrategyUnavailable("no row-offset index loaded")
        if choice in (Strategy.FIELD_SCAN, Strategy.CHUNKED_SCAN):
            raise StrategyUnavailable(f"{choice.value} cannot answer a row-number query")
        return choice
    # By key: the index path also needs row offsets to report row numbers.
    have_index = indexes.key_index(target.column, target.key.kind) is not None and indexes.rows is not None
    if choice is Strategy.AUTO:
        return Strategy.INDEX if have_index else Strategy.FIELD_SCAN
    if choice is Strategy.INDEX and not have_index:
        raise StrategyUnavailable(
            f"no {target.key.kind.value} index on column {target.column} (with row offsets) loaded"
        )
    if choice is Strategy.LINE_SCAN and target.key.kind is KeyKind.PHONE:
        raise StrategyUnavailable("phone keys are normalized to digits and cannot be found by substring")
    return choice


def execute(query: Query, dataset: DatasetDescriptor, indexes: IndexSet | None = None) -> QueryResult:
    """Run ``query`` with the planned strategy; matches come back in row order."""
    indexes = indexes or IndexSet()
    strategy = plan(query, indexes)
    stats = ReadStats()
    start = time.perf_counter()
    if isinstance(query.target, ByRow):
        matches, scanned = _by_row(query.target.row_number, strategy, dataset, indexes, stats)
    else:
        matches, scanned = _by_key(query, strategy, dataset, indexes, stats)
    elapsed = time.perf_counter() - start
    matches.sort(key=lambda m: m.record.row_number)
    return QueryResult(matches, strategy, elapsed, scanned, stats)


def _by_row(row_number, strategy, dataset, indexes, stats):
    if strategy is Strategy.INDEX:
        start = time.perf_counter()
        try:
            offset = lookup_row(indexes.rows, row_number, stats)
        except OutOfRange:
            return [], 0
        record = row_at_offset(indexes.rows.source, offset, dataset.dialect, row_number, stats)
        return [MatchResult(record, None, ScanKind.INDEX_LOOKUP, time.perf_counter() - start, 0)], 0
    return _walk_to_row(row_number, dataset)


def _walk_to_row(row_number: int, dataset: DatasetDescriptor):
    # Counting lines is the only way to find row k without an index.
    start = time.perf_counter()
    with open(dataset.path, "rb") as fh:
        offset = len(fh.readline()) if dataset.dialect.header else 0
        for row, line in enumerate(fh, 1):
            if row == row_number:
                record = RawRecord(row, offset, tuple(parse_row(strip_terminator(line), dataset.dialect)))
                end = offset + len(line)
                return [MatchResult(record, None, ScanKind.LINE_SCAN_FIRST, time.perf_counter() - start, end)], end
            offset += len(line)
    return [], dataset.size_bytes


def _by_key(query, strategy, dataset, indexes, stats):
    column, key = query.target.column, query.target.key
    if not key.value:
        return [], 0
    path, dialect = dataset.path, dataset.dialect
    if strategy is Strategy.INDEX:
        start = time.perf_counter()
        key_index = indexes.key_index(column, key.kind)
        out = []
        for found in lookup_key_records(key_index, key, None, stats):
            record = RawRecord(indexes.rows.row_for_offset(found.byte_offset), found.byte_offset, found.fields)
            out.append(MatchResult(record, column, ScanKind.INDEX_LOOKUP, time.perf_counter() - start, 0))
        return out, 0
    if strategy is Strategy.FIELD_SCAN:
        result = field_scan(path, column, key, query.early_exit, dialect)
        return list(result.matches), result.bytes_scanned
    if strategy is Strategy.CHUNKED_SCAN:
        result = chunked_scan(path, column, key, query.chunk_rows, dialect)
        return list(result.matches), result.bytes_scanned
    return _line_scan_key(column, key, dataset, query.early_exit)


def _line_scan_key(column: int, key: NormalizedKey, dataset: DatasetDescriptor, early_exit: bool):
    """grep for the key, keeping only lines whose field really equals it.

    Email keys are searched case-insensitively since the stored field may
    differ from the normalized key in case or surrounding whitespace.
    """
    matcher = Matcher.build(key.encoded(), ignore_case=key.kind is KeyKind.EMAIL)

    def exact(record: RawRecord) -> bool:
        fields = record.fields
        return len(fields) > column and normalize_value(key.kind, fields[column]) == key.value

    mode = "first" if early_exit else "all"
    result = line_scan(dataset.path, matcher, mode, dataset.dialect, verify=exact)
    kind = ScanKind.LINE_SCAN_FIRST if early_exit else ScanKind.LINE_SCAN_ALL
    kept = [MatchResult(m.record, column, kind, m.elapsed, m.bytes_scanned) for m in result.matches]
    return kept, result.bytes_scanned


def load_indexes(dataset: DatasetDescriptor, paths) -> IndexSet:
    """Load index files into an ``IndexSet``; the time taken is kept apart from query timings."""
    start = time.perf_counter()
    found = IndexSet()
    for path in paths:
        found.add(load_index(Path(path), dataset))
    found.load_seconds = time.perf_counter() - start
    return found
