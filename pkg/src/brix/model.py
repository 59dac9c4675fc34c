"""Shared domain types, key normalization and dataset fingerprinting."""

from __future__ import annotations

import hashlib
import os
from dataclasses import dataclass, field
from functools import cached_property
from enum import Enum
from pathlib import Path
from typing import Union

PathLike = Union[str, "os.PathLike[str]"]

HEAD_DIGEST_BYTES = 64 * 1024
# Trimming is ASCII-only so text and raw-byte normalization agree exactly.
ASCII_WS = " \t\n\r\x0b\x0c"
_NON_DIGITS = bytes(b for b in range(256) if not 48 <= b <= 57)


class KeyKind(str, Enum):
    EMAIL = "email"
    PHONE = "phone"
    INTEGER = "integer"
    VERBATIM = "verbatim"

    @property
    def code(self) -> int:
        """Numeric code used in index file headers."""
        return _KIND_CODES[self]

    @classmethod
    def from_code(cls, code: int) -> "KeyKind":
        for kind, value in _KIND_CODES.items():
            if value == code:
                return kind
        raise ValueError(f"unknown key kind code {code}")


_KIND_CODES = {
    KeyKind.EMAIL: 1,
    KeyKind.PHONE: 2,
    KeyKind.INTEGER: 3,
    KeyKind.VERBATIM: 4,
}


@dataclass(frozen=True)
class CsvDialect:
    delimiter: bytes = b","
    quote: bytes = b'"'
    escape_mode: str = "doubled_quote"
    encoding: str = "utf8_lossy"
    header: bool = False

    def __post_init__(self) -> None:
        if len(self.delimiter) != 1 or len(self.quote) != 1:
            raise ValueError("delimiter and quote must be single bytes")
        if self.delimiter == self.quote:
            raise ValueError("delimiter must differ from quote")
        if self.delimiter in b"\r\n" or self.quote in b"\r\n":
            raise ValueError("delimiter and quote cannot be line terminators")
        if self.escape_mode != "doubled_quote":
            raise ValueError(f"unsupported escape mode {self.escape_mode!r}")
        if self.encoding != "utf8_lossy":
            raise ValueError(f"unsupported encoding {self.encoding!r}")

    @cached_property
    def text_delimiter(self) -> str:
        return self.delimiter.decode("latin-1")

    @cached_property
    def text_quote(self) -> str:
        return self.quote.decode("latin-1")


@dataclass(frozen=True)
class Fingerprint:
    size_bytes: int
    head_digest: bytes
    modified_time: int

    def to_bytes(self) -> bytes:
        return (
            self.size_bytes.to_bytes(8, "little")
            + self.modified_time.to_bytes(8, "little")
            + self.head_digest
        )


@dataclass(frozen=True)
class DatasetDescriptor:
    path: Path
    size_bytes: int
    row_count: int
    column_count: int
    has_header: bool
    dialect: CsvDialect
    fingerprint: Fingerprint

    def __post_init__(self) -> None:
        if self.row_count < 0:
            raise ValueError("row_count must be >= 0")
        if self.column_count < 1:
            raise ValueError("column_count must be >= 1")


@dataclass(frozen=True)
class RawRecord:
    row_number: int
    byte_offset: int
    fields: tuple[str, ...] = field(default_factory=tuple)


@dataclass(frozen=True)
class NormalizedKey:
    kind: KeyKind
    value: str

    def encoded(self) -> bytes:
        return self.value.encode("utf-8")


def normalize_email(raw: str) -> NormalizedKey:
    # str.lower() would also fold non-ASCII letters; breach data must round-trip verbatim.
    return NormalizedKey(KeyKind.EMAIL, _ascii_lower(raw.strip(ASCII_WS)))


def normalize_phone(raw: str) -> NormalizedKey:
    return NormalizedKey(KeyKind.PHONE, "".join(ch for ch in raw if "0" <= ch <= "9"))


def normalize_integer(raw: str) -> NormalizedKey:
    """Canonical base-10 form of an unsigned integer; raises ValueError otherwise."""
    text = raw.strip(ASCII_WS)
    if not text or not text.isascii() or not text.isdigit():
        raise ValueError(f"not an unsigned integer: {raw!r}")
    return NormalizedKey(KeyKind.INTEGER, str(int(text)))


def normalize_verbatim(raw: str) -> NormalizedKey:
    return NormalizedKey(KeyKind.VERBATIM, raw)


def normalize(kind: KeyKind | str, raw: str) -> NormalizedKey:
    kind = KeyKind(kind)
    if kind is KeyKind.EMAIL:
        return normalize_email(raw)
    if kind is KeyKind.PHONE:
        return normalize_phone(raw)
    if kind is KeyKind.INTEGER:
        return normalize_integer(raw)
    return normalize_verbatim(raw)


def normalize_value(kind: KeyKind, raw: str) -> str | None:
    """Normalize a field value for comparison; None when it cannot take this kind."""
    if kind is KeyKind.EMAIL:
        return _ascii_lower(raw.strip(ASCII_WS))
    if kind is KeyKind.PHONE:
        return "".join(ch for ch in raw if "0" <= ch <= "9")
    if kind is KeyKind.INTEGER:
        try:
            return normalize_integer(raw).value
        except ValueError:
            return None
    return raw


def normalize_bytes(kind: KeyKind, raw: bytes) -> bytes | None:
    """Byte-domain twin of ``normalize_value``: UTF-8 of the normalized text.

    ASCII input takes a decode-free path; anything else is decoded lossily
    first so both routes agree on every input.
    """
    if raw.isascii():
        if kind is KeyKind.EMAIL:
            return raw.strip().lower()
        if kind is KeyKind.PHONE:
            return raw.translate(None, _NON_DIGITS)
        if kind is KeyKind.INTEGER:
            digits = raw.strip()
            if not digits.isdigit():
                return None
            return digits.lstrip(b"0") or b"0"
        return raw
    value = normalize_value(kind, raw.decode("utf-8", "replace"))
    return None if value is None else value.encode("utf-8")


_UPPER = "ABCDEFGHIJKLMNOPQRSTUVWXYZ"
_ASCII_LOWER_TABLE = str.maketrans(_UPPER, _UPPER.lower())


def _ascii_lower(text: str) -> str:
    if text.isascii():
        return text.lower()
    return text.translate(_ASCII_LOWER_TABLE)


def fingerprint_dataset(path: PathLike) -> Fingerprint:
    with open(path, "rb") as fh:
        st = os.fstat(fh.fileno())
        head = fh.read(HEAD_DIGEST_BYTES)
    return Fingerprint(
        size_bytes=st.st_size,
        head_digest=hashlib.sha256(head).digest(),
        modified_time=int(st.st_mtime),
    )
