"""Persistent on-disk indexes over a CSV corpus.

File layout (all integers little-endian)::

    magic      4s   b"BRIX"
    version    u16
    kind       u8   1 = row offsets, 2 = key
    key_kind   u8   0 for row offsets, else the KeyKind code
    column     u16
    reserved   2s   zero
    entries    u64
    size       u64  source fingerprint: file size
    mtime      u64  source fingerprint: mtime, whole seconds
    digest     32s  source fingerprint: sha256 of the first 64 KiB
    -- then entries: u64 offset (row index) or (u64 hash, u64 offset) (key index)

Key entries are sorted by (hash, offset). Hash is 64-bit FNV-1a over the
UTF-8 bytes of the normalized key; lookups verify every candidate against
the source record, so collisions cost time but never correctness.
"""

from __future__ import annotations

import mmap
import os
import struct
import tempfile
from collections.abc import Callable
from dataclasses import dataclass
from pathlib import Path

import numba
import numpy as np

from .csvio import (
    BufferGauge,
    MalformedRow,
    ReadStats,
    read_column_chunks,
    read_line_at,
    row_at_offset,
)
from .model import (
    DatasetDescriptor,
    Fingerprint,
    KeyKind,
    NormalizedKey,
    PathLike,
    RawRecord,
    fingerprint_dataset,
    normalize_bytes,
    normalize_value,
)

MAGIC = b"BRIX"
VERSION = 1
KIND_ROW_OFFSET = 1
KIND_KEY = 2

HEADER = struct.Struct("<4sHBBH2sQQQ32s")
HEADER_SIZE = HEADER.size
ENTRY_DTYPE = np.dtype([("hash", "<u8"), ("offset", "<u8")])
OFFSET_DTYPE = np.dtype("<u8")

DEFAULT_MEMORY_BUDGET = 512 * 1024 * 1024
_SCAN_BLOCK = 8 * 1024 * 1024
_MERGE_BLOCK = 1 << 16

FNV_OFFSET = 0xCBF29CE484222325
FNV_PRIME = 0x100000001B3

Hasher = Callable[[bytes], int]


class IndexFormatError(Exception):
    pass


class BadMagic(IndexFormatError):
    pass


class VersionMismatch(IndexFormatError):
    pass


class TruncatedIndex(IndexFormatError):
    pass


class IndexKindMismatch(IndexFormatError):
    pass


class StaleIndex(Exception):
    """The source file changed after the index was built."""


class OutOfRange(LookupError):
    pass


def fnv1a64(data: bytes) -> int:
    h = FNV_OFFSET
    for byte in data:
        h = ((h ^ byte) * FNV_PRIME) & 0xFFFFFFFFFFFFFFFF
    return h


@numba.njit(cache=True, nogil=True)
def _fnv1a64_many(buf, bounds, out):
    prime = np.uint64(FNV_PRIME)
    for k in range(len(bounds) - 1):
        h = np.uint64(FNV_OFFSET)
        for i in range(bounds[k], bounds[k + 1]):
            h = (h ^ np.uint64(buf[i])) * prime
        out[k] = h


@numba.njit(cache=True, nogil=True)
def _equal_run(hashes, h):
    # [lo, hi) of entries equal to h. Entries start at byte 68, so the mapped
    # arrays are unaligned (and strided for hashes); numpy's searchsorted
    # would copy the whole array on every call.
    lo, hi = 0, len(hashes)
    while lo < hi:
        mid = (lo + hi) >> 1
        if hashes[mid] < h:
            lo = mid + 1
        else:
            hi = mid
    end, top = lo, len(hashes)
    while end < top:
        mid = (end + top) >> 1
        if hashes[mid] <= h:
            end = mid + 1
        else:
            top = mid
    return lo, end


def fnv1a64_many(keys: list[bytes]) -> np.ndarray:
    """FNV-1a 64 of every key, vectorised over a concatenated buffer."""
    out = np.empty(len(keys), dtype=np.uint64)
    if not keys:
        return out
    bounds = np.zeros(len(keys) + 1, dtype=np.int64)
    np.cumsum([len(k) for k in keys], out=bounds[1:])
    buf = np.frombuffer(b"".join(keys), dtype=np.uint8)
    if buf.size == 0:
        buf = np.zeros(1, dtype=np.uint8)
    _fnv1a64_many(buf, bounds, out)
    return out


@dataclass(frozen=True)
class IndexHeader:
    kind: int
    key_kind: int
    column: int
    entry_count: int
    fingerprint: Fingerprint
    version: int = VERSION
    magic: bytes = MAGIC

    def pack(self) -> bytes:
        return HEADER.pack(
            self.magic,
            self.version,
            self.kind,
            self.key_kind,
            self.column,
            b"\0\0",
            self.entry_count,
            self.fingerprint.size_bytes,
            self.fingerprint.modified_time,
            self.fingerprint.head_digest,
        )

    @classmethod
    def unpack(cls, raw: bytes) -> "IndexHeader":
        if len(raw) < HEADER_SIZE:
            if not MAGIC.startswith(raw[:4]) or len(raw) < 4:
                raise BadMagic("index file too short to hold a header")
            raise TruncatedIndex("index header truncated")
        magic, version, kind, key_kind, column, _, count, size, mtime, digest = HEADER.unpack_from(raw)
        if magic != MAGIC:
            raise BadMagic(f"bad magic {magic!r}")
        if version != VERSION:
            raise VersionMismatch(f"index version {version}, expected {VERSION}")
        return cls(kind, key_kind, column, count, Fingerprint(size, digest, mtime), version, magic)

    def to_dict(self) -> dict:
        return {
            "magic": self.magic.decode("ascii", "replace"),
            "version": self.version,
            "kind": {KIND_ROW_OFFSET: "row_offset", KIND_KEY: "key"}.get(self.kind, self.kind),
            "key_kind": KeyKind.from_code(self.key_kind).value if self.key_kind else None,
            "column": self.column,
            "entry_count": self.entry_count,
            "source_size": self.fingerprint.size_bytes,
            "source_mtime": self.fingerprint.modified_time,
            "source_digest": self.fingerprint.head_digest.hex(),
        }


@dataclass(frozen=True)
class BuildReport:
    path: Path
    entry_count: int
    malformed: int = 0
    skipped_empty: int = 0
    spilled_runs: int = 0


def _atomic_writer(out_path: Path):
    out_path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=out_path.name + ".", suffix=".tmp", dir=out_path.parent)
    return os.fdopen(fd, "wb"), Path(tmp)


def _publish(fh, tmp: Path, out_path: Path) -> None:
    os.chmod(tmp, 0o644)  # mkstemp creates 0600
    fh.flush()
    os.fsync(fh.fileno())
    fh.close()
    os.replace(tmp, out_path)


def _data_start(dataset: DatasetDescriptor) -> int:
    if not dataset.dialect.header:
        return 0
    with open(dataset.path, "rb") as fh:
        return len(fh.readline())


def build_row_offset_index(dataset: DatasetDescriptor, out_path: PathLike) -> BuildReport:
    """One sequential pass recording where every data row starts.

    Rows are positional, so malformed rows still get an entry; parsing is left
    to whoever reads the row.
    """
    out_path = Path(out_path)
    fingerprint = fingerprint_dataset(dataset.path)
    start = _data_start(dataset)
    count = 0
    fh, tmp = _atomic_writer(out_path)
    try:
        fh.write(b"\0" * HEADER_SIZE)
        with open(dataset.path, "rb") as src:
            src.seek(start)
            pos = start
            pending = start if fingerprint.size_bytes > start else None
            while True:
                buf = src.read(_SCAN_BLOCK)
                if not buf:
                    break
                starts = np.flatnonzero(np.frombuffer(buf, dtype=np.uint8) == 10).astype(np.uint64)
                starts += np.uint64(pos + 1)
                pos += len(buf)
                if pending is not None:
                    starts = np.concatenate((np.array([pending], dtype=np.uint64), starts))
                # The last newline's successor is a row start only if data follows it.
                pending = int(starts[-1]) if starts.size else None
                starts = starts[:-1]
                fh.write(starts.astype(OFFSET_DTYPE).tobytes())
                count += starts.size
            if pending is not None and pending < pos:
                fh.write(np.array([pending], dtype=OFFSET_DTYPE).tobytes())
                count += 1
        fh.seek(0)
        fh.write(IndexHeader(KIND_ROW_OFFSET, 0, 0, count, fingerprint).pack())
        _publish(fh, tmp, out_path)
    except BaseException:
        fh.close()
        tmp.unlink(missing_ok=True)
        raise
    return BuildReport(out_path, count)


def collect_key_entries(
    dataset: DatasetDescriptor,
    column: int,
    key_kind: KeyKind | str,
    hasher: Hasher | None = None,
    chunk_rows: int = 8192,
):
    """Yield unsorted entry batches ``(entries, malformed, empty)`` for one column."""
    kind = KeyKind(key_kind)
    for chunk in read_column_chunks(dataset.path, column, dataset.dialect, chunk_rows, BufferGauge()):
        bad = set(chunk.malformed)
        keys: list[bytes] = []
        offsets: list[int] = []
        empty = 0
        for i, value in enumerate(chunk.values):
            if i in bad:
                continue
            normalized = None if value is None else normalize_bytes(kind, value)
            if not normalized:
                empty += 1
                continue
            keys.append(normalized)
            offsets.append(chunk.offsets[i])
        entries = np.empty(len(keys), dtype=ENTRY_DTYPE)
        if hasher is None:
            entries["hash"] = fnv1a64_many(keys)
        else:
            entries["hash"] = np.array([hasher(k) for k in keys], dtype=np.uint64)
        entries["offset"] = np.array(offsets, dtype=np.uint64)
        yield entries, len(bad), empty


def sort_entries(entries: np.ndarray) -> np.ndarray:
    order = np.lexsort((entries["offset"], entries["hash"]))
    return entries[order]


def build_key_index(
    dataset: DatasetDescriptor,
    column: int,
    key_kind: KeyKind | str,
    out_path: PathLike,
    memory_budget: int = DEFAULT_MEMORY_BUDGET,
    hasher: Hasher | None = None,
) -> BuildReport:
    """Scan one column, hash the normalized keys, sort, and write atomically.

    When buffered entries exceed ``memory_budget`` bytes they are sorted and
    spilled to temporary runs, which are then combined by two-way merges.
    Rows with an empty normalized key get no entry.
    """
    kind = KeyKind(key_kind)
    if column < 0 or column >= dataset.column_count:
        raise ValueError(f"column {column} outside 0..{dataset.column_count - 1}")
    out_path = Path(out_path)
    fingerprint = fingerprint_dataset(dataset.path)
    budget_entries = max(1, memory_budget // ENTRY_DTYPE.itemsize)
    pending: list[np.ndarray] = []
    held = 0
    runs: list[Path] = []
    malformed = empty = 0
    workdir = tempfile.mkdtemp(prefix=".brix-sort-", dir=out_path.parent if out_path.parent.exists() else None)
    try:
        for entries, bad, blank in collect_key_entries(dataset, column, kind, hasher):
            malformed += bad
            empty += blank
            pending.append(entries)
            held += entries.size
            while held > budget_entries:
                merged = np.concatenate(pending)
                spill, rest = merged[:budget_entries], merged[budget_entries:]
                runs.append(_write_run(sort_entries(spill), workdir, len(runs)))
                pending = [rest]
                held = rest.size
        tail = sort_entries(np.concatenate(pending)) if pending else np.empty(0, ENTRY_DTYPE)
        spilled = len(runs)
        if runs and tail.size:
            runs.append(_write_run(tail, workdir, len(runs)))
        while len(runs) > 1:
            runs = [
                _merge_pair(runs[i], runs[i + 1], workdir) if i + 1 < len(runs) else runs[i]
                for i in range(0, len(runs), 2)
            ]
        count = tail.size if not runs else os.path.getsize(runs[0]) // ENTRY_DTYPE.itemsize
        header = IndexHeader(KIND_KEY, kind.code, column, count, fingerprint)
        fh, tmp = _atomic_writer(out_path)
        try:
            fh.write(header.pack())
            if runs:
                with open(runs[0], "rb") as run:
                    while block := run.read(_SCAN_BLOCK):
                        fh.write(block)
            else:
                fh.write(tail.tobytes())
            _publish(fh, tmp, out_path)
        except BaseException:
            fh.close()
            tmp.unlink(missing_ok=True)
            raise
    finally:
        for leftover in Path(workdir).iterdir():
            leftover.unlink()
        os.rmdir(workdir)
    return BuildReport(out_path, int(count), malformed, empty, spilled)


def _write_run(entries: np.ndarray, workdir: str, n: int) -> Path:
    path = Path(workdir) / f"run-{n:06d}-{os.urandom(4).hex()}.bin"
    path.write_bytes(entries.tobytes())
    return path


class _RunReader:
    def __init__(self, path: Path):
        self.fh = open(path, "rb")
        self.buf = np.empty(0, ENTRY_DTYPE)
        self.done = False
        self.refill()

    def refill(self) -> None:
        if self.done:
            return
        raw = self.fh.read(_MERGE_BLOCK * ENTRY_DTYPE.itemsize)
        if not raw:
            self.done = True
            self.fh.close()
            return
        self.buf = np.concatenate((self.buf, np.frombuffer(raw, dtype=ENTRY_DTYPE)))

    def take_through(self, h: int, off: int) -> np.ndarray:
        """Pop the prefix of entries <= (h, off)."""
        hashes, offsets = self.buf["hash"], self.buf["offset"]
        n = int(np.count_nonzero((hashes < h) | ((hashes == h) & (offsets <= off))))
        out, self.buf = self.buf[:n], self.buf[n:]
        return out


def _merge_pair(a: Path, b: Path, workdir: str) -> Path:
    """Two-way merge of sorted run files, streaming in fixed-size blocks."""
    out_path = Path(workdir) / f"merge-{os.urandom(6).hex()}.bin"
    left, right = _RunReader(a), _RunReader(b)
    with open(out_path, "wb") as out:
        while True:
            if not left.buf.size:
                left.refill()
            if not right.buf.size:
                right.refill()
            if not left.buf.size or not right.buf.size:
                break
            # Everything up to the smaller of the two block maxima is final.
            la, lb = left.buf[-1], right.buf[-1]
            bound = la if (la["hash"], la["offset"]) <= (lb["hash"], lb["offset"]) else lb
            h, off = int(bound["hash"]), int(bound["offset"])
            out.write(sort_entries(np.concatenate((left.take_through(h, off), right.take_through(h, off)))).tobytes())
        for rest in (left, right):
            while rest.buf.size:
                out.write(rest.buf.tobytes())
                rest.buf = np.empty(0, ENTRY_DTYPE)
                rest.refill()
    a.unlink()
    b.unlink()
    return out_path


class _LoadedIndex:
    def __init__(self, path: Path, header: IndexHeader, fh, mm, dataset: DatasetDescriptor):
        self.path = path
        self.header = header
        self._fh = fh
        self._mm = mm
        self.dataset = dataset
        self._source = open(dataset.path, "rb")

    def close(self) -> None:
        self._release_views()
        self._mm.close()
        self._fh.close()
        self._source.close()

    def _release_views(self) -> None:
        pass

    def __enter__(self):
        return self

    def __exit__(self, *exc) -> None:
        self.close()

    @property
    def entry_count(self) -> int:
        return self.header.entry_count

    @property
    def source(self):
        return self._source


class RowOffsetIndex(_LoadedIndex):
    def __init__(self, *args):
        super().__init__(*args)
        self.offsets = np.frombuffer(self._mm, dtype=OFFSET_DTYPE, count=self.entry_count, offset=HEADER_SIZE)

    def _release_views(self) -> None:
        del self.offsets

    def row_for_offset(self, byte_offset: int) -> int | None:
        """1-based row number of the record starting at ``byte_offset``."""
        lo, hi = _equal_run(self.offsets, np.uint64(byte_offset))
        return lo + 1 if hi > lo else None

    def dump(self) -> np.ndarray:
        return np.array(self.offsets)


class KeyIndex(_LoadedIndex):
    def __init__(self, *args):
        super().__init__(*args)
        self.entries = np.frombuffer(self._mm, dtype=ENTRY_DTYPE, count=self.entry_count, offset=HEADER_SIZE)
        self.hashes = self.entries["hash"]

    def _release_views(self) -> None:
        del self.entries, self.hashes

    @property
    def key_kind(self) -> KeyKind:
        return KeyKind.from_code(self.header.key_kind)

    @property
    def column(self) -> int:
        return self.header.column

    def dump(self) -> np.ndarray:
        return np.array(self.entries)


def read_header(path: PathLike) -> IndexHeader:
    with open(path, "rb") as fh:
        return IndexHeader.unpack(fh.read(HEADER_SIZE))


def load_index(path: PathLike, dataset: DatasetDescriptor) -> RowOffsetIndex | KeyIndex:
    """Open an index read-only after checking format and freshness."""
    path = Path(path)
    fh = open(path, "rb")
    try:
        header = IndexHeader.unpack(fh.read(HEADER_SIZE))
        if header.kind == KIND_ROW_OFFSET:
            cls, width = RowOffsetIndex, OFFSET_DTYPE.itemsize
        elif header.kind == KIND_KEY:
            cls, width = KeyIndex, ENTRY_DTYPE.itemsize
            KeyKind.from_code(header.key_kind)
        else:
            raise IndexKindMismatch(f"unknown index kind {header.kind}")
        expected = HEADER_SIZE + header.entry_count * width
        actual = os.fstat(fh.fileno()).st_size
        if actual != expected:
            raise TruncatedIndex(f"index holds {actual} bytes, header implies {expected}")
        if header.fingerprint != fingerprint_dataset(dataset.path):
            raise StaleIndex(f"{path} was built for a different version of {dataset.path}")
        mm = mmap.mmap(fh.fileno(), 0, access=mmap.ACCESS_READ)
    except BaseException:
        fh.close()
        raise
    return cls(path, header, fh, mm, dataset)


def lookup_row(index: RowOffsetIndex, row_number: int, stats: ReadStats | None = None) -> int:
    """Byte offset of a 1-based row: a single 8-byte read from the index."""
    if not 1 <= row_number <= index.entry_count:
        raise OutOfRange(f"row {row_number} outside 1..{index.entry_count}")
    if stats is not None:
        stats.offset_reads += 1
    (offset,) = struct.unpack_from("<Q", index._mm, HEADER_SIZE + 8 * (row_number - 1))
    return offset


def lookup_key_records(
    index: KeyIndex,
    key: NormalizedKey,
    dataset: DatasetDescriptor | None = None,
    stats: ReadStats | None = None,
    hasher: Hasher | None = None,
) -> list[RawRecord]:
    """Verified records (row_number left 0) whose normalized field equals ``key``.

    Binary search finds the hash run; each candidate is read once from the
    source and compared, so collisions never leak into the result.
    """
    if key.kind is not index.key_kind:
        raise IndexKindMismatch(f"{index.key_kind.value} index cannot answer a {key.kind.value} key")
    if not key.value:
        return []
    raw = key.encoded()
    h = np.uint64(hasher(raw) if hasher is not None else fnv1a64(raw))
    lo, hi = _equal_run(index.hashes, h)
    if stats is not None:
        stats.index_probes += 1
    source = index.source if dataset is None or dataset.path == index.dataset.path else dataset.path
    dialect = index.dataset.dialect
    found = []
    for offset in sorted(index.entries["offset"][lo:hi].tolist()):
        try:
            record = row_at_offset(source, offset, dialect, stats=stats)
        except MalformedRow:
            continue
        fields = record.fields
        if len(fields) > index.column and normalize_value(key.kind, fields[index.column]) == key.value:
            found.append(record)
    return found


def lookup_key(
    index: KeyIndex,
    key: NormalizedKey,
    dataset: DatasetDescriptor | None = None,
    stats: ReadStats | None = None,
    hasher: Hasher | None = None,
) -> list[int]:
    """Verified offsets of every record whose normalized field equals ``key``, ascending."""
    return [r.byte_offset for r in lookup_key_records(index, key, dataset, stats, hasher)]


def read_record_line(index: _LoadedIndex, byte_offset: int, stats: ReadStats | None = None) -> bytes:
    return read_line_at(index.source, byte_offset, stats)
