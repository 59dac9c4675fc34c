"""Deterministic synthetic breach-corpus generator.

Every random draw comes from a counter-based splitmix64 sequence indexed by
(row, column, draw), so any block of rows can be produced independently and
the output depends only on the ``GenSpec``.
"""

from __future__ import annotations

import json
import os
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .model import CsvDialect, DatasetDescriptor, PathLike, fingerprint_dataset

GOLDEN_GAMMA = np.uint64(0x9E3779B97F4A7C15)
ALPHABET = np.frombuffer(
    b"abcdefghijklmnopqrstuvwxyzABCDEFGHIJKLMNOPQRSTUVWXYZ0123456789", dtype=np.uint8
)
DOMAINS = ("example.com", "mail.test", "corp.example", "webmail.example", "isp.test")
# Absent probes live here; generated emails never use it.
RESERVED_DOMAIN = "absent.example"

MIN_TOKEN, MAX_TOKEN = 3, 9
DRAWS_PER_FIELD = 3
BLOCK_ROWS = 8192


class GenSpecError(ValueError):
    pass


@dataclass(frozen=True)
class Plant:
    row_number: int
    email: str
    phone: str


@dataclass(frozen=True)
class GenSpec:
    rows: int
    columns: int = 59
    seed: int = 42
    email_column: int = 5
    phone_column: int = 7
    planted: tuple[Plant, ...] = field(default_factory=tuple)
    id_column: int | None = 0

    def validate(self) -> None:
        if self.rows < 0:
            raise GenSpecError("rows must be >= 0")
        if self.columns < 2:
            raise GenSpecError("need at least 2 columns")
        if self.email_column == self.phone_column:
            raise GenSpecError("email_column and phone_column must differ")
        for name in ("email_column", "phone_column"):
            if not 0 <= getattr(self, name) < self.columns:
                raise GenSpecError(f"{name} out of range")
        if self.id_column is not None:
            if not 0 <= self.id_column < self.columns:
                raise GenSpecError("id_column out of range")
            if self.id_column in (self.email_column, self.phone_column):
                raise GenSpecError("id_column collides with a key column")
        last = 0
        for plant in self.planted:
            if not last < plant.row_number <= self.rows:
                raise GenSpecError(
                    "planted row numbers must be strictly increasing and within 1..rows"
                )
            last = plant.row_number
            if plant.email.lower().endswith("@" + RESERVED_DOMAIN):
                raise GenSpecError(f"{RESERVED_DOMAIN} is reserved for absent probes")
            for value in (plant.email, plant.phone):
                if any(ch in value for ch in ',"\r\n'):
                    raise GenSpecError(f"planted value needs quoting: {value!r}")


def splitmix64(counters: np.ndarray, seed: int) -> np.ndarray:
    """Outputs number ``counters`` (0-based) of the splitmix64 stream seeded by ``seed``."""
    x = np.uint64(seed & 0xFFFFFFFFFFFFFFFF) + (counters.astype(np.uint64) + np.uint64(1)) * GOLDEN_GAMMA
    x = (x ^ (x >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
    x = (x ^ (x >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
    return x ^ (x >> np.uint64(31))


def quartile_rows(row_count: int) -> list[int]:
    if row_count < 4:
        raise ValueError("quartile_rows needs at least 4 rows")
    return [
        -(-row_count // 4),
        -(-row_count // 2),
        -(-3 * row_count // 4),
        row_count,
    ]


def plant_email(k: int) -> str:
    return f"probe{k}@plant.example"


def plant_phone(k: int) -> str:
    return f"+1 (555) 900-{k:04d}"


def absent_email(k: int = 0) -> str:
    return f"gone{k}@{RESERVED_DOMAIN}"


def quartile_plants(row_count: int) -> tuple[Plant, ...]:
    return tuple(
        Plant(row, plant_email(k), plant_phone(k))
        for k, row in enumerate(quartile_rows(row_count), start=1)
    )


def header_line(spec: GenSpec) -> bytes:
    names = [f"f{i}" for i in range(spec.columns)]
    names[spec.email_column] = "email"
    names[spec.phone_column] = "phone"
    if spec.id_column is not None:
        names[spec.id_column] = "id"
    return (",".join(names) + "\n").encode()


def _block_lines(spec: GenSpec, first_row: int, count: int, plants: dict[int, Plant]) -> bytes:
    cols = spec.columns
    rows = np.arange(first_row - 1, first_row - 1 + count, dtype=np.uint64)
    base = rows[:, None] * np.uint64(cols) + np.arange(cols, dtype=np.uint64)[None, :]
    draws = splitmix64(
        base[..., None] * np.uint64(DRAWS_PER_FIELD) + np.arange(DRAWS_PER_FIELD, dtype=np.uint64),
        spec.seed,
    )
    lengths = MIN_TOKEN + (draws[..., 0] % np.uint64(MAX_TOKEN - MIN_TOKEN + 1)).astype(np.int64)
    chars = ALPHABET[np.ascontiguousarray(draws[..., 1:]).view(np.uint8).reshape(count, cols, 16)[..., :MAX_TOKEN] % len(ALPHABET)]

    specials = {spec.email_column, spec.phone_column}
    if spec.id_column is not None:
        specials.add(spec.id_column)
    lengths[:, sorted(specials)] = 0

    cell = np.empty((count, cols, MAX_TOKEN + 1), dtype=np.uint8)
    cell[..., :MAX_TOKEN] = chars
    cell[..., MAX_TOKEN] = ord(",")
    cell[:, -1, MAX_TOKEN] = ord("\n")
    keep = np.arange(MAX_TOKEN + 1)[None, None, :] < lengths[..., None]
    keep[..., MAX_TOKEN] = True
    stream = cell[keep].tobytes()
    row_len = lengths.sum(axis=1) + cols
    starts = np.concatenate(([0], np.cumsum(row_len)))

    # Byte position of each special column's slot inside its row (all specials are empty).
    order = sorted(specials)
    col_start = np.concatenate(
        (np.zeros((count, 1), dtype=np.int64), np.cumsum(lengths + 1, axis=1)[:, :-1]), axis=1
    )
    email_tok = chars[:, spec.email_column, :6].tobytes()
    domain_idx = (draws[:, spec.email_column, 0] >> np.uint64(32)) % np.uint64(len(DOMAINS))
    phone_num = draws[:, spec.phone_column, 1] % np.uint64(10**10)

    out: list[bytes] = []
    slot_pos = col_start[:, order].tolist()
    starts_l = starts.tolist()
    domain_l = domain_idx.tolist()
    phone_l = phone_num.tolist()
    for i in range(count):
        row_number = first_row + i
        plant = plants.get(row_number)
        values = {}
        if plant is not None:
            values[spec.email_column] = plant.email
            values[spec.phone_column] = plant.phone
        else:
            tok = email_tok[6 * i : 6 * i + 6].decode()
            values[spec.email_column] = f"u{row_number}.{tok}@{DOMAINS[domain_l[i]]}"
            values[spec.phone_column] = f"{phone_l[i]:010d}"
        if spec.id_column is not None:
            values[spec.id_column] = str(row_number)
        s = starts_l[i]
        prev = s
        for col, pos in zip(order, slot_pos[i]):
            out.append(stream[prev : s + pos])
            out.append(values[col].encode())
            prev = s + pos
        out.append(stream[prev : starts_l[i + 1]])
    return b"".join(out)


def generate_dataset(spec: GenSpec, out_path: PathLike) -> DatasetDescriptor:
    spec.validate()
    out_path = Path(out_path)
    plants = {p.row_number: p for p in spec.planted}
    tmp = out_path.with_name(out_path.name + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(header_line(spec))
        for first in range(1, spec.rows + 1, BLOCK_ROWS):
            count = min(BLOCK_ROWS, spec.rows - first + 1)
            fh.write(_block_lines(spec, first, count, plants))
    os.replace(tmp, out_path)
    dialect = CsvDialect(header=True)
    return DatasetDescriptor(
        path=out_path,
        size_bytes=out_path.stat().st_size,
        row_count=spec.rows,
        column_count=spec.columns,
        has_header=True,
        dialect=dialect,
        fingerprint=fingerprint_dataset(out_path),
    )


def manifest_path(corpus: PathLike) -> Path:
    corpus = Path(corpus)
    return corpus.with_name(corpus.name + ".plants.json")


def write_manifest(spec: GenSpec, corpus: PathLike) -> Path:
    path = manifest_path(corpus)
    doc = asdict(spec)
    doc["planted"] = [asdict(p) for p in spec.planted]
    doc["absent_email"] = absent_email()
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
    return path


def read_manifest(corpus: PathLike) -> GenSpec:
    doc = json.loads(manifest_path(corpus).read_text())
    doc.pop("absent_email", None)
    doc["planted"] = tuple(Plant(**p) for p in doc["planted"])
    return GenSpec(**doc)
