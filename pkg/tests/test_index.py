import hashlib
import os
import shutil
import struct
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from brix.csvio import ReadStats, describe_dataset, scan_lines, parse_row
from brix.datagen import GenSpec, generate_dataset
from brix.index import (
    ENTRY_DTYPE,
    BadMagic,
    IndexKindMismatch,
    KeyIndex,
    OutOfRange,
    RowOffsetIndex,
    StaleIndex,
    TruncatedIndex,
    VersionMismatch,
    build_key_index,
    build_row_offset_index,
    collect_key_entries,
    fnv1a64,
    fnv1a64_many,
    load_index,
    lookup_key,
    lookup_row,
    read_header,
    sort_entries,
)
from brix.model import CsvDialect, KeyKind, NormalizedKey, normalize, normalize_email
from conftest import FIXED_MTIME, pin_mtime
from oracles import csv_rows, fnv1a64 as fnv_oracle, line_offsets, matching_rows, NORMALIZERS

GOLDEN = Path(__file__).parent / "golden"
HEADED = CsvDialect(header=True)
PLAIN = CsvDialect()
GOLDEN_KEYS = [("email", 1), ("phone", 2)]


def corpus(tmp_path, data: bytes, dialect=PLAIN, name="c.csv"):
    path = tmp_path / name
    path.write_bytes(data)
    pin_mtime(path)
    return describe_dataset(path, dialect)


def build_golden_set(out_dir: Path, source: Path) -> dict[str, Path]:
    """Copy the golden corpus, pin its mtime and build every golden index."""
    out_dir.mkdir(parents=True, exist_ok=True)
    csv_path = out_dir / "tiny.csv"
    shutil.copyfile(source, csv_path)
    pin_mtime(csv_path)
    d = describe_dataset(csv_path, HEADED)
    built = {"rows.idx": build_row_offset_index(d, out_dir / "rows.idx").path}
    for kind, column in GOLDEN_KEYS:
        name = f"key-{kind}-c{column}.idx"
        built[name] = build_key_index(d, column, kind, out_dir / name).path
    return built


def oracle_header(kind, key_kind, column, count, path) -> bytes:
    data = path.read_bytes()
    digest = hashlib.sha256(data[: 64 * 1024]).digest()
    return (
        b"BRIX"
        + (1).to_bytes(2, "little")
        + bytes([kind, key_kind])
        + column.to_bytes(2, "little")
        + b"\0\0"
        + count.to_bytes(8, "little")
        + len(data).to_bytes(8, "little")
        + FIXED_MTIME.to_bytes(8, "little")
        + digest
    )


def test_fnv_reference_vectors():
    # Published FNV-1a 64 test vectors.
    assert fnv1a64(b"") == 0xCBF29CE484222325
    assert fnv1a64(b"a") == 0xAF63DC4C8601EC8C
    assert fnv1a64(b"foobar") == 0x85944171F73967E8


@given(st.lists(st.binary(max_size=20), max_size=20))
def test_fnv_batch_matches_scalar(keys):
    assert fnv1a64_many(keys).tolist() == [fnv_oracle(k) for k in keys]


def test_golden_files_byte_identical(tmp_path):
    built = build_golden_set(tmp_path, GOLDEN / "tiny.csv")
    for name, path in built.items():
        assert path.read_bytes() == (GOLDEN / name).read_bytes(), name


def test_golden_files_match_oracle_layout(tmp_path):
    csv_path = tmp_path / "tiny.csv"
    shutil.copyfile(GOLDEN / "tiny.csv", csv_path)
    pin_mtime(csv_path)
    offsets = line_offsets(csv_path)
    rows = csv_rows(csv_path)

    expected = oracle_header(1, 0, 0, len(offsets), csv_path) + b"".join(struct.pack("<Q", o) for o in offsets)
    assert (GOLDEN / "rows.idx").read_bytes() == expected

    for kind, column in GOLDEN_KEYS:
        entries = []
        for offset, row in zip(offsets, rows):
            if row is None or len(row) <= column:
                continue
            value = NORMALIZERS[kind](row[column])
            if value:
                entries.append((fnv_oracle(value.encode()), offset))
        entries.sort()
        code = KeyKind(kind).code
        expected = oracle_header(2, code, column, len(entries), csv_path)
        expected += b"".join(struct.pack("<QQ", h, o) for h, o in entries)
        assert (GOLDEN / f"key-{kind}-c{column}.idx").read_bytes() == expected, kind


def test_header_struct_size_and_fields(tmp_path):
    d = corpus(tmp_path, b"a\nb\n")
    path = build_row_offset_index(d, tmp_path / "r.idx").path
    raw = path.read_bytes()
    assert len(raw) == 68 + 16
    header = read_header(path)
    assert header.to_dict()["kind"] == "row_offset" and header.entry_count == 2
    assert header.fingerprint.modified_time == FIXED_MTIME


def test_row_offsets_simple(tmp_path):
    d = corpus(tmp_path, b"a\nb\nc\n")
    build_row_offset_index(d, tmp_path / "r.idx")
    with load_index(tmp_path / "r.idx", d) as idx:
        assert isinstance(idx, RowOffsetIndex)
        assert idx.dump().tolist() == [0, 2, 4]


@pytest.mark.parametrize(
    "data, dialect, want",
    [
        (b"a\nb", PLAIN, [0, 2]),
        (b"h\r\nx\r\n\r\ny", HEADED, [3, 6, 8]),
        (b"h\n", HEADED, []),
        (b"", PLAIN, []),
        (b"\n\n", PLAIN, [0, 1]),
    ],
)
def test_row_offsets_edge_cases(tmp_path, data, dialect, want):
    d = corpus(tmp_path, data, dialect)
    report = build_row_offset_index(d, tmp_path / "r.idx")
    assert report.entry_count == len(want)
    with load_index(tmp_path / "r.idx", d) as idx:
        assert idx.dump().tolist() == want


def test_row_offsets_across_scan_blocks(tmp_path, monkeypatch):
    import brix.index as index_mod

    monkeypatch.setattr(index_mod, "_SCAN_BLOCK", 7)
    data = b"h\n" + b"".join(b"r%d,xx\n" % i for i in range(40)) + b"tail"
    d = corpus(tmp_path, data, HEADED)
    build_row_offset_index(d, tmp_path / "r.idx")
    with load_index(tmp_path / "r.idx", d) as idx:
        assert idx.dump().tolist() == line_offsets(d.path)


def test_row_offsets_round_trip_generated(tmp_path):
    d = generate_dataset(GenSpec(rows=1000, seed=4), tmp_path / "g.csv")
    build_row_offset_index(d, tmp_path / "r.idx")
    lines = {row: line for row, _, line in scan_lines(d.path, d.dialect)}
    stats = ReadStats()
    with load_index(tmp_path / "r.idx", d) as idx:
        assert idx.entry_count == d.row_count
        for k in range(1, 1001):
            offset = lookup_row(idx, k, stats)
            from brix.csvio import row_at_offset

            assert row_at_offset(d.path, offset, d.dialect, k).fields == tuple(parse_row(lines[k], d.dialect))
    assert stats.offset_reads == 1000


def test_lookup_row_bounds(tmp_path):
    d = corpus(tmp_path, b"a\nbb\nc\n")
    build_row_offset_index(d, tmp_path / "r.idx")
    with load_index(tmp_path / "r.idx", d) as idx:
        assert lookup_row(idx, 1) == 0
        assert lookup_row(idx, 3) == 5
        for bad in (0, 4):
            with pytest.raises(OutOfRange):
                lookup_row(idx, bad)
        assert idx.row_for_offset(2) == 2 and idx.row_for_offset(3) is None


def test_key_index_distinct_sorted(tmp_path):
    d = corpus(tmp_path, b"a@x.y\nb@x.y\nc@x.y\n")
    report = build_key_index(d, 0, "email", tmp_path / "k.idx")
    assert report.entry_count == 3
    with load_index(tmp_path / "k.idx", d) as idx:
        entries = idx.dump()
        assert entries["hash"].tolist() == sorted(fnv_oracle(e) for e in (b"a@x.y", b"b@x.y", b"c@x.y"))


def test_key_index_duplicates_kept(tmp_path):
    d = corpus(tmp_path, b"z@x.y\nDup@x.y\nq@x.y\ndup@x.y \n")
    build_key_index(d, 0, "email", tmp_path / "k.idx")
    with load_index(tmp_path / "k.idx", d) as idx:
        entries = idx.dump()
        h = fnv_oracle(b"dup@x.y")
        assert entries["offset"][entries["hash"] == h].tolist() == [6, 20]
        assert lookup_key(idx, normalize_email("DUP@x.y")) == [6, 20]


def test_key_index_skips_empty_and_malformed(tmp_path):
    d = corpus(tmp_path, b'1,a@x.y\n2,\n3,"b@x.y\n4\n5,  \n')
    report = build_key_index(d, 1, "email", tmp_path / "k.idx")
    assert report.entry_count == 1
    assert report.malformed == 1
    assert report.skipped_empty == 3


def test_key_index_column_range(tmp_path):
    d = corpus(tmp_path, b"a,b\n")
    with pytest.raises(ValueError):
        build_key_index(d, 2, "email", tmp_path / "k.idx")


def test_every_generated_email_resolves(small_corpus, tmp_path):
    spec, d = small_corpus
    build_key_index(d, 5, "email", tmp_path / "k.idx")
    build_row_offset_index(d, tmp_path / "r.idx")
    rows = csv_rows(d.path)
    stats = ReadStats()
    with load_index(tmp_path / "k.idx", d) as keys, load_index(tmp_path / "r.idx", d) as offsets:
        for i, row in enumerate(rows, start=1):
            found = lookup_key(keys, normalize_email(row[5]), d, stats)
            assert [offsets.row_for_offset(o) for o in found] == [i]
    # One record read per lookup: no collisions among 2,000 keys.
    assert stats.record_reads == len(rows)


def test_lookup_absent_and_empty(small_corpus, tmp_path):
    spec, d = small_corpus
    build_key_index(d, 5, "email", tmp_path / "k.idx")
    stats = ReadStats()
    with load_index(tmp_path / "k.idx", d) as idx:
        assert lookup_key(idx, normalize_email("gone0@absent.example"), d, stats) == []
        assert lookup_key(idx, normalize_email(""), d, stats) == []
        with pytest.raises(IndexKindMismatch):
            lookup_key(idx, normalize(KeyKind.PHONE, "1"))
    assert stats.record_reads <= 2


def test_forced_collisions_are_verified_away(tmp_path):
    d = corpus(tmp_path, b"1,a@x.y\n2,b@x.y\n3,a@x.y\n4,c@x.y\n")
    constant = lambda key: 42  # noqa: E731  every key collides
    build_key_index(d, 1, "email", tmp_path / "k.idx", hasher=constant)
    stats = ReadStats()
    with load_index(tmp_path / "k.idx", d) as idx:
        assert set(idx.dump()["hash"].tolist()) == {42}
        assert lookup_key(idx, normalize_email("a@x.y"), d, stats, hasher=constant) == [0, 16]
        assert lookup_key(idx, normalize_email("b@x.y"), d, None, hasher=constant) == [8]
        assert lookup_key(idx, normalize_email("z@x.y"), d, None, hasher=constant) == []
    assert stats.record_reads == 4


@pytest.mark.parametrize("kind, column", [("phone", 7), ("integer", 0), ("verbatim", 5)])
def test_other_key_kinds_match_oracle(small_corpus, tmp_path, kind, column):
    spec, d = small_corpus
    build_key_index(d, column, kind, tmp_path / "k.idx")
    rows = csv_rows(d.path)
    offsets = line_offsets(d.path)
    with load_index(tmp_path / "k.idx", d) as idx:
        assert isinstance(idx, KeyIndex) and idx.key_kind is KeyKind(kind)
        for i in (0, 1, 499, 1999):
            value = NORMALIZERS[kind](rows[i][column])
            expect = [offsets[r - 1] for r in matching_rows(d.path, column, kind, value)]
            assert lookup_key(idx, NormalizedKey(KeyKind(kind), value), d) == expect


@pytest.mark.parametrize("budget", [16, 16 * 7, 16 * 333, 16 * 5000])
def test_external_merge_equals_in_memory(small_corpus, tmp_path, budget):
    spec, d = small_corpus
    report = build_key_index(d, 5, "email", tmp_path / "k.idx", memory_budget=budget)
    in_memory = sort_entries(np.concatenate([e for e, _, _ in collect_key_entries(d, 5, "email")]))
    with load_index(tmp_path / "k.idx", d) as idx:
        assert np.array_equal(idx.dump(), in_memory)
    assert (report.spilled_runs > 0) == (budget < 16 * 2000)
    assert not [p for p in tmp_path.iterdir() if p.name.startswith(".brix-sort-")]


def test_external_merge_keeps_duplicate_order(tmp_path):
    data = b"".join(b"%d,%s\n" % (i, b"k%d@x.y" % (i % 3)) for i in range(50))
    d = corpus(tmp_path, data)
    build_key_index(d, 1, "email", tmp_path / "a.idx", memory_budget=16 * 4)
    build_key_index(d, 1, "email", tmp_path / "b.idx")
    assert (tmp_path / "a.idx").read_bytes() == (tmp_path / "b.idx").read_bytes()


def test_load_rejects_bad_magic(tmp_path):
    d = corpus(tmp_path, b"a\n")
    path = build_row_offset_index(d, tmp_path / "r.idx").path
    raw = bytearray(path.read_bytes())
    raw[0:4] = b"NOPE"
    path.write_bytes(bytes(raw))
    with pytest.raises(BadMagic):
        load_index(path, d)


def test_load_rejects_version(tmp_path):
    d = corpus(tmp_path, b"a\n")
    path = build_row_offset_index(d, tmp_path / "r.idx").path
    raw = bytearray(path.read_bytes())
    raw[4:6] = (2).to_bytes(2, "little")
    path.write_bytes(bytes(raw))
    with pytest.raises(VersionMismatch):
        load_index(path, d)


@pytest.mark.parametrize("keep", [0, 3, 40, 68 + 7])
def test_load_rejects_truncated(tmp_path, keep):
    d = corpus(tmp_path, b"a\nb\n")
    path = build_row_offset_index(d, tmp_path / "r.idx").path
    path.write_bytes(path.read_bytes()[:keep])
    with pytest.raises((BadMagic, TruncatedIndex)):
        load_index(path, d)


def test_load_rejects_stale(tmp_path):
    d = corpus(tmp_path, b"a\nb\n")
    path = build_row_offset_index(d, tmp_path / "r.idx").path
    with load_index(path, d):
        pass
    os.utime(d.path, (FIXED_MTIME + 5, FIXED_MTIME + 5))
    with pytest.raises(StaleIndex):
        load_index(path, d)
    pin_mtime(d.path)
    with open(d.path, "ab") as fh:
        fh.write(b"c\n")
    pin_mtime(d.path)
    with pytest.raises(StaleIndex):
        load_index(path, d)


def test_build_is_atomic_on_failure(tmp_path):
    d = corpus(tmp_path, b"a\n")

    def boom(key):
        raise RuntimeError("hash failure")

    with pytest.raises(RuntimeError):
        build_key_index(d, 0, "verbatim", tmp_path / "k.idx", hasher=boom)
    assert sorted(p.name for p in tmp_path.iterdir()) == ["c.csv"]


def test_entry_dtype_layout():
    assert ENTRY_DTYPE.itemsize == 16
    assert np.array([(1, 2)], dtype=ENTRY_DTYPE).tobytes() == struct.pack("<QQ", 1, 2)
