"""Unindexed retrieval: grep-style line scan, row-by-row field scan, chunked column scan."""

from __future__ import annotations

import os
import time
from collections.abc import Callable, Iterator
from dataclasses import dataclass, field
from enum import Enum

from .bm import Matcher, line_searcher
from .csvio import (
    DEFAULT_DIALECT,
    BufferGauge,
    MalformedRow,
    parse_row,
    read_column_chunks,
    split_raw,
    strip_terminator,
)
from .model import (
    CsvDialect,
    KeyKind,
    NormalizedKey,
    PathLike,
    RawRecord,
    normalize_bytes,
    normalize_value,
)


class ScanKind(str, Enum):
    LINE_SCAN_ALL = "line_scan_all"
    LINE_SCAN_FIRST = "line_scan_first"
    FIELD_SCAN = "field_scan"
    CHUNKED_SCAN = "chunked_scan"
    INDEX_LOOKUP = "index_lookup"


@dataclass(frozen=True)
class MatchResult:
    record: RawRecord
    matched_column: int | None
    strategy: ScanKind
    elapsed: float
    bytes_scanned: int


@dataclass
class ScanResult:
    """Matches plus what the scan cost; iterates over its matches."""

    matches: list[MatchResult]
    strategy: ScanKind
    bytes_scanned: int = 0
    rows_scanned: int = 0
    elapsed: float = 0.0
    malformed: int = 0
    parse_failures: int = 0
    chunks: int = 0
    gauge: BufferGauge | None = field(default=None, repr=False)

    def __iter__(self) -> Iterator[MatchResult]:
        return iter(self.matches)

    def __len__(self) -> int:
        return len(self.matches)

    @property
    def rows(self) -> list[int]:
        return [m.record.row_number for m in self.matches]


def _raw_lines(fh, dialect: CsvDialect) -> Iterator[tuple[int, int, bytes]]:
    # Like csvio.scan_lines but hands back the terminator too, so callers know
    # exactly where each record ends.
    offset = len(fh.readline()) if dialect.header else 0
    row = 0
    for line in fh:
        row += 1
        yield row, offset, line
        offset += len(line)


def line_scan(
    path: PathLike,
    pattern: bytes | str | Matcher,
    mode: str = "all",
    dialect: CsvDialect = DEFAULT_DIALECT,
    verify: Callable[[RawRecord], bool] | None = None,
) -> ScanResult:
    """grep analogue: every line containing ``pattern`` as a byte substring.

    ``mode="all"`` always reads the whole file; ``mode="first"`` stops at the
    first hit. Header lines are never reported. ``verify`` filters hits
    before they count, so "first" means the first hit that passes it.
    """
    if mode not in ("all", "first"):
        raise ValueError(f"mode must be 'all' or 'first', not {mode!r}")
    matcher = pattern if isinstance(pattern, Matcher) else Matcher.build(pattern)
    contains = line_searcher(matcher)
    kind = ScanKind.LINE_SCAN_ALL if mode == "all" else ScanKind.LINE_SCAN_FIRST
    matches: list[MatchResult] = []
    start = time.perf_counter()
    size = os.path.getsize(path)
    scanned = size
    row = malformed = 0
    # Without CR/LF in the pattern, a hit in the raw line is a hit in its body.
    raw_ok = b"\n" not in matcher.pattern and b"\r" not in matcher.pattern
    with open(path, "rb") as fh:
        for row, offset, line in _raw_lines(fh, dialect):
            if not contains(line if raw_ok else strip_terminator(line)):
                continue
            body = strip_terminator(line)
            try:
                fields = tuple(parse_row(body, dialect))
            except MalformedRow:
                # grep reports the line regardless; keep it as one raw field
                fields = (body.decode("utf-8", "replace"),)
                malformed += 1
            end = offset + len(line)
            record = RawRecord(row, offset, fields)
            if verify is not None and not verify(record):
                continue
            matches.append(MatchResult(record, None, kind, time.perf_counter() - start, end))
            if mode == "first":
                scanned = end
                break
    return ScanResult(matches, kind, scanned, row, time.perf_counter() - start, malformed)


def _text_matcher(key: NormalizedKey):
    kind, want = key.kind, key.value

    def test(field_text: str) -> bool:
        return normalize_value(kind, field_text) == want

    return test


def field_scan(
    path: PathLike,
    column: int,
    key: NormalizedKey,
    early_exit: bool = True,
    dialect: CsvDialect = DEFAULT_DIALECT,
) -> ScanResult:
    """Row-at-a-time equality scan, the unindexed table-scan analogue.

    Text kinds parse every row into decoded fields before comparing the
    target one. Integer keys are compared against the raw bytes in place:
    ASCII digits need no decoding and canonical values compare as bytes.
    Rows whose field is not an integer are counted in ``parse_failures``.
    """
    if column < 0:
        raise ValueError("column must be >= 0")
    if key.kind is KeyKind.INTEGER:
        return _integer_field_scan(path, column, key, early_exit, dialect)
    test = _text_matcher(key)
    matches: list[MatchResult] = []
    start = time.perf_counter()
    scanned = os.path.getsize(path)
    rows = malformed = 0
    with open(path, "rb") as fh:
        for row, offset, line in _raw_lines(fh, dialect):
            rows = row
            try:
                fields = parse_row(strip_terminator(line), dialect)
            except MalformedRow:
                malformed += 1
                continue
            if len(fields) > column and test(fields[column]):
                end = offset + len(line)
                matches.append(
                    MatchResult(
                        RawRecord(row, offset, tuple(fields)),
                        column,
                        ScanKind.FIELD_SCAN,
                        time.perf_counter() - start,
                        end,
                    )
                )
                if early_exit:
                    scanned = end
                    break
    return ScanResult(matches, ScanKind.FIELD_SCAN, scanned, rows, time.perf_counter() - start, malformed)


def _integer_field_scan(path, column, key, early_exit, dialect) -> ScanResult:
    want = key.encoded()
    delim, quote = dialect.delimiter, dialect.quote
    matches: list[MatchResult] = []
    start = time.perf_counter()
    scanned = os.path.getsize(path)
    rows = malformed = failures = 0
    with open(path, "rb") as fh:
        for row, offset, line in _raw_lines(fh, dialect):
            rows = row
            if quote in line:
                try:
                    parts = split_raw(strip_terminator(line), dialect)
                except MalformedRow:
                    malformed += 1
                    continue
                value = parts[column] if len(parts) > column else None
            else:
                lo = 0
                for _ in range(column):
                    lo = line.find(delim, lo) + 1
                    if lo == 0:
                        break
                if lo == 0 and column:
                    value = None
                else:
                    hi = line.find(delim, lo)
                    if hi < 0:
                        hi = len(line)
                        if line[-1:] == b"\n":
                            hi -= 2 if line[-2:-1] == b"\r" else 1
                    value = line[lo:hi]
            if value is None:
                failures += 1
                continue
            if value != want:
                if value.isdigit() and value[0] != 48:
                    continue
                normalized = normalize_bytes(KeyKind.INTEGER, value)
                if normalized is None:
                    failures += 1
                    continue
                if normalized != want:
                    continue
            end = offset + len(line)
            record = RawRecord(row, offset, tuple(parse_row(strip_terminator(line), dialect)))
            matches.append(
                MatchResult(record, column, ScanKind.FIELD_SCAN, time.perf_counter() - start, end)
            )
            if early_exit:
                scanned = end
                break
    result = ScanResult(matches, ScanKind.FIELD_SCAN, scanned, rows, time.perf_counter() - start, malformed)
    result.parse_failures = failures
    return result


def chunked_scan(
    path: PathLike,
    column: int,
    key: NormalizedKey,
    chunk_rows: int = 1000,
    dialect: CsvDialect = DEFAULT_DIALECT,
    gauge: BufferGauge | None = None,
    limit_bytes: int | None = None,
) -> ScanResult:
    """Dataframe analogue: stream column-projected chunks and filter each one.

    At most ``chunk_rows`` records are buffered at any time (see ``gauge``).
    """
    gauge = gauge if gauge is not None else BufferGauge()
    want = key.encoded()
    kind = key.kind
    matches: list[MatchResult] = []
    start = time.perf_counter()
    rows = malformed = scanned = chunks = 0
    for chunk in read_column_chunks(path, column, dialect, chunk_rows, gauge, limit_bytes):
        chunks += 1
        values = chunk.values
        malformed += len(chunk.malformed)
        rows += len(values)
        scanned += chunk.bytes_spanned
        if kind is KeyKind.VERBATIM:
            hits = [i for i, v in enumerate(values) if v is not None and _verbatim_equal(v, want)]
        elif kind is KeyKind.EMAIL and all(v is None or v.isascii() for v in values):
            hits = [i for i, v in enumerate(values) if v is not None and v.strip().lower() == want]
        else:
            hits = [i for i, v in enumerate(values) if v is not None and normalize_bytes(kind, v) == want]
        if not hits:
            continue
        with open(path, "rb") as fh:
            for i in hits:
                offset = chunk.offsets[i]
                fh.seek(offset)
                record = RawRecord(chunk.first_row_number + i, offset,
                                   tuple(parse_row(strip_terminator(fh.readline()), dialect)))
                matches.append(
                    MatchResult(record, column, ScanKind.CHUNKED_SCAN, time.perf_counter() - start, scanned)
                )
    header = 0
    if dialect.header:
        with open(path, "rb") as fh:
            header = len(fh.readline())
    result = ScanResult(matches, ScanKind.CHUNKED_SCAN, scanned + header, rows,
                        time.perf_counter() - start, malformed)
    result.chunks = chunks
    result.gauge = gauge
    return result


def _verbatim_equal(raw: bytes, want: bytes) -> bool:
    if raw.isascii():
        return raw == want
    return normalize_bytes(KeyKind.VERBATIM, raw) == want
