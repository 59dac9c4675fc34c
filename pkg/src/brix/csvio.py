"""Streaming, bounded-memory CSV access with exact byte offsets."""

from __future__ import annotations

import itertools
import os
from collections.abc import Iterator
from dataclasses import dataclass, field
from pathlib import Path

from .model import CsvDialect, DatasetDescriptor, PathLike, RawRecord, fingerprint_dataset

DEFAULT_DIALECT = CsvDialect()
_RECORD_PROBE = 4096


class MalformedRow(ValueError):
    """A record that cannot be split under the dialect (unbalanced quote)."""

    def __init__(self, message: str, row_number: int | None = None, byte_offset: int | None = None):
        super().__init__(message)
        self.row_number = row_number
        self.byte_offset = byte_offset


class OffsetBeyondEOF(ValueError):
    pass


@dataclass
class ReadStats:
    """Instrumentation counters; pass one in to observe I/O behaviour."""

    record_reads: int = 0
    offset_reads: int = 0
    index_probes: int = 0


@dataclass
class BufferGauge:
    """Tracks records and bytes currently held by a chunked reader."""

    records: int = 0
    bytes: int = 0
    peak_records: int = 0
    peak_bytes: int = 0
    chunks: int = 0

    def hold(self, records: int, nbytes: int) -> None:
        self.records += records
        self.bytes += nbytes
        self.chunks += 1
        self.peak_records = max(self.peak_records, self.records)
        self.peak_bytes = max(self.peak_bytes, self.bytes)

    def release(self, records: int, nbytes: int) -> None:
        self.records -= records
        self.bytes -= nbytes


@dataclass(frozen=True)
class RecordChunk:
    first_row_number: int
    records: list[RawRecord]
    bytes_spanned: int
    malformed: int = 0


@dataclass(frozen=True)
class ColumnChunk:
    """One chunk projected onto a single column, still as raw bytes.

    ``values[i]`` is None when row ``first_row_number + i`` has no such column.
    """

    first_row_number: int
    offsets: list[int]
    values: list[bytes | None]
    bytes_spanned: int
    malformed: list[int] = field(default_factory=list)


def strip_terminator(line: bytes) -> bytes:
    if line.endswith(b"\n"):
        return line[:-2] if line.endswith(b"\r\n") else line[:-1]
    return line


def header_length(fh) -> int:
    """Consume the header line from ``fh`` and return its length in bytes."""
    return len(fh.readline())


def scan_lines(
    path: PathLike, dialect: CsvDialect = DEFAULT_DIALECT, include_header: bool = False
) -> Iterator[tuple[int, int, bytes]]:
    """Yield ``(row_number, byte_offset, line)`` for every physical record.

    ``line`` excludes its LF or CRLF terminator. Data rows are numbered from 1;
    a header, when requested, comes out as row 0.
    """
    with open(path, "rb") as fh:
        offset = 0
        if dialect.header:
            head = fh.readline()
            if include_header and head:
                yield 0, 0, strip_terminator(head)
            offset = len(head)
        row = 0
        for line in fh:
            row += 1
            if line[-1:] == b"\n":
                yield row, offset, line[:-2] if line[-2:-1] == b"\r" else line[:-1]
            else:
                yield row, offset, line
            offset += len(line)


def parse_row(line: bytes | str, dialect: CsvDialect = DEFAULT_DIALECT) -> list[str]:
    """Split one record into text fields, honouring doubled-quote escaping."""
    text = line.decode("utf-8", "replace") if isinstance(line, bytes) else line
    if dialect.text_quote not in text:
        return text.split(dialect.text_delimiter)
    return _parse_quoted(text, dialect.text_delimiter, dialect.text_quote)


def _parse_quoted(text: str, delim: str, quote: str) -> list[str]:
    fields: list[str] = []
    pos = 0
    n = len(text)
    while True:
        if pos < n and text[pos] == quote:
            parts = []
            pos += 1
            while True:
                end = text.find(quote, pos)
                if end < 0:
                    raise MalformedRow("unterminated quoted field")
                parts.append(text[pos:end])
                if text.startswith(quote, end + 1):
                    parts.append(quote)
                    pos = end + 2
                    continue
                pos = end + 1
                break
            fields.append("".join(parts))
            if pos == n:
                return fields
            if text[pos] != delim:
                raise MalformedRow("unexpected data after closing quote")
            pos += 1
        else:
            end = text.find(delim, pos)
            if end < 0:
                fields.append(text[pos:])
                return fields
            fields.append(text[pos:end])
            pos = end + 1
        if pos == n:
            fields.append("")
            return fields


def split_raw(line: bytes, dialect: CsvDialect = DEFAULT_DIALECT, maxsplit: int = -1) -> list[bytes]:
    """Split a record into raw byte fields (no decoding).

    With ``maxsplit`` the tail after the last split is left unsplit, exactly
    like ``bytes.split``; only valid for lines without quote bytes.
    """
    if dialect.quote not in line:
        return line.split(dialect.delimiter, maxsplit)
    fields = _parse_quoted(line.decode("latin-1"), dialect.text_delimiter, dialect.text_quote)
    return [f.encode("latin-1") for f in fields]


def raw_field(line: bytes, column: int, dialect: CsvDialect = DEFAULT_DIALECT) -> bytes | None:
    """Raw bytes of one field, or None if the row is too short.

    Raises MalformedRow for quoted lines that do not parse.
    """
    if dialect.quote not in line:
        parts = line.split(dialect.delimiter, column + 1)
    else:
        parts = split_raw(line, dialect)
    if len(parts) <= column:
        return None
    return parts[column]


def _chunk_lines(fh, chunk_rows: int, limit: int | None, consumed: int) -> list[bytes]:
    lines = list(itertools.islice(fh, chunk_rows))
    if limit is None or consumed + sum(map(len, lines)) <= limit:
        return lines
    # Only the chunk straddling the limit pays for a per-line walk, so a
    # limited read costs the same per byte as an unlimited one.
    for i, line in enumerate(lines):
        consumed += len(line)
        if consumed > limit:
            return lines[:i]
    return lines


def read_chunks(
    path: PathLike,
    dialect: CsvDialect = DEFAULT_DIALECT,
    chunk_rows: int = 10_000,
    gauge: BufferGauge | None = None,
) -> Iterator[RecordChunk]:
    """Yield fully parsed records ``chunk_rows`` at a time.

    Malformed rows are skipped and counted on the chunk that contained them.
    """
    if chunk_rows < 1:
        raise ValueError("chunk_rows must be >= 1")
    gauge = gauge if gauge is not None else BufferGauge()
    with open(path, "rb") as fh:
        offset = header_length(fh) if dialect.header else 0
        row = 1
        while True:
            lines = _chunk_lines(fh, chunk_rows, None, 0)
            if not lines:
                return
            spanned = sum(map(len, lines))
            gauge.hold(len(lines), spanned)
            records = []
            bad = 0
            start_row = row
            for line in lines:
                try:
                    records.append(RawRecord(row, offset, tuple(parse_row(strip_terminator(line), dialect))))
                except MalformedRow:
                    bad += 1
                row += 1
                offset += len(line)
            del lines
            try:
                yield RecordChunk(start_row, records, spanned, bad)
            finally:
                gauge.release(row - start_row, spanned)


def read_column_chunks(
    path: PathLike,
    column: int,
    dialect: CsvDialect = DEFAULT_DIALECT,
    chunk_rows: int = 10_000,
    gauge: BufferGauge | None = None,
    limit_bytes: int | None = None,
) -> Iterator[ColumnChunk]:
    """Yield chunks projected onto one column.

    Only the leading ``column + 1`` fields of each line are split, so the
    cost per row is independent of the row's width past the target column.
    ``limit_bytes`` stops at the last whole line inside that prefix of the file.
    """
    if chunk_rows < 1:
        raise ValueError("chunk_rows must be >= 1")
    gauge = gauge if gauge is not None else BufferGauge()
    delim, quote = dialect.delimiter, dialect.quote
    keep = column + 1
    with open(path, "rb") as fh:
        offset = header_length(fh) if dialect.header else 0
        if limit_bytes is not None and offset > limit_bytes:
            return
        row = 1
        while True:
            lines = _chunk_lines(fh, chunk_rows, limit_bytes, offset)
            if not lines:
                return
            spanned = sum(map(len, lines))
            gauge.hold(len(lines), spanned)
            offsets = list(itertools.accumulate(map(len, lines), initial=offset))
            malformed: list[int] = []
            if quote in b"".join(lines):
                values = []
                for i, line in enumerate(lines):
                    try:
                        values.append(raw_field(strip_terminator(line), column, dialect))
                    except MalformedRow:
                        values.append(None)
                        malformed.append(i)
            else:
                try:
                    values = [line.split(delim, keep)[column] for line in lines]
                except IndexError:
                    values = [_short_row_field(line, delim, keep, column) for line in lines]
                if any(v[-1:] == b"\n" for v in values if v is not None):
                    values = [v if v is None else strip_terminator(v) for v in values]
            chunk = ColumnChunk(row, offsets[:-1], values, spanned, malformed)
            count = len(lines)
            del lines
            try:
                yield chunk
            finally:
                gauge.release(count, spanned)
            row += count
            offset = offsets[-1]
            if limit_bytes is not None and count < chunk_rows:
                return


def _short_row_field(line: bytes, delim: bytes, keep: int, column: int) -> bytes | None:
    parts = line.split(delim, keep)
    return parts[column] if len(parts) > column else None


def count_rows(path: PathLike, dialect: CsvDialect = DEFAULT_DIALECT) -> int:
    """Number of data records (a final line without terminator still counts)."""
    block = 1 << 20
    newlines = 0
    last = b""
    with open(path, "rb") as fh:
        while True:
            buf = fh.read(block)
            if not buf:
                break
            newlines += buf.count(b"\n")
            last = buf[-1:]
    if last == b"":
        return 0
    total = newlines + (0 if last == b"\n" else 1)
    if dialect.header:
        total -= 1
    return max(total, 0)


def read_line_at(source, byte_offset: int, stats: ReadStats | None = None) -> bytes:
    """Return the record starting at ``byte_offset`` without its terminator.

    ``source`` is a path or an open binary file; reads use ``os.pread`` so a
    shared file object is safe across threads.
    """
    if not hasattr(source, "fileno"):
        with open(source, "rb") as fh:
            return read_line_at(fh, byte_offset, stats)
    if byte_offset < 0:
        raise OffsetBeyondEOF(f"negative offset {byte_offset}")
    fd = source.fileno()
    if stats is not None:
        stats.record_reads += 1
    parts = []
    pos = byte_offset
    size = _RECORD_PROBE
    while True:
        buf = os.pread(fd, size, pos)
        if not buf:
            if not parts:
                raise OffsetBeyondEOF(f"offset {byte_offset} is at or beyond end of file")
            break
        nl = buf.find(b"\n")
        if nl >= 0:
            parts.append(buf[: nl + 1])
            break
        parts.append(buf)
        pos += len(buf)
        size *= 2
    return strip_terminator(b"".join(parts))


def row_at_offset(
    source,
    byte_offset: int,
    dialect: CsvDialect = DEFAULT_DIALECT,
    row_number: int = 0,
    stats: ReadStats | None = None,
) -> RawRecord:
    line = read_line_at(source, byte_offset, stats)
    try:
        fields = parse_row(line, dialect)
    except MalformedRow as exc:
        raise MalformedRow(str(exc), row_number or None, byte_offset) from None
    return RawRecord(row_number, byte_offset, tuple(fields))


def format_row(fields, dialect: CsvDialect = DEFAULT_DIALECT) -> str:
    """Render fields back into one CSV line (no terminator), quoting only when needed."""
    delim = dialect.text_delimiter
    quote = dialect.text_quote
    out = []
    for value in fields:
        if delim in value or quote in value or "\n" in value or "\r" in value:
            value = quote + value.replace(quote, quote + quote) + quote
        out.append(value)
    return delim.join(out)


def describe_dataset(path: PathLike, dialect: CsvDialect = DEFAULT_DIALECT) -> DatasetDescriptor:
    """Fingerprint, count and measure a CSV file.

    The column count comes from the header when there is one, else from the
    first data row.
    """
    path = Path(path)
    fingerprint = fingerprint_dataset(path)
    columns = 1
    with open(path, "rb") as fh:
        first = fh.readline()
    if first:
        try:
            columns = len(parse_row(strip_terminator(first), dialect))
        except MalformedRow:
            columns = 1
    return DatasetDescriptor(
        path=path,
        size_bytes=fingerprint.size_bytes,
        row_count=count_rows(path, dialect),
        column_count=columns,
        has_header=dialect.header,
        dialect=dialect,
        fingerprint=fingerprint,
    )
