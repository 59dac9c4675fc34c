"""Boyer-Moore substring search with bad-character and good-suffix shifts.

Shift tables are built in Python from the pattern; the search loop is
compiled with numba because it runs once per line of multi-gigabyte files.
"""

from __future__ import annotations

from dataclasses import dataclass

import numba
import numpy as np

_FOLD = np.arange(256, dtype=np.uint8)
_FOLD[ord("A") : ord("Z") + 1] += 32


def bad_character_table(pattern: bytes) -> np.ndarray:
    m = len(pattern)
    table = np.full(256, m, dtype=np.int64)
    for i, byte in enumerate(pattern[:-1]):
        table[byte] = m - 1 - i
    return table


def _suffixes(pattern: bytes) -> list[int]:
    # suff[i] = length of the longest common suffix of pattern[:i+1] and pattern
    m = len(pattern)
    suff = [0] * m
    suff[m - 1] = m
    g = m - 1
    f = m - 1
    for i in range(m - 2, -1, -1):
        if i > g and suff[i + m - 1 - f] < i - g:
            suff[i] = suff[i + m - 1 - f]
        else:
            if i < g:
                g = i
            f = i
            while g >= 0 and pattern[g] == pattern[g + m - 1 - f]:
                g -= 1
            suff[i] = f - g
    return suff


def good_suffix_table(pattern: bytes) -> np.ndarray:
    """Shift after a mismatch at pattern position i (strong good-suffix rule)."""
    m = len(pattern)
    suff = _suffixes(pattern)
    table = [m] * m
    j = 0
    for i in range(m - 1, -1, -1):
        if suff[i] == i + 1:
            while j < m - 1 - i:
                if table[j] == m:
                    table[j] = m - 1 - i
                j += 1
    for i in range(m - 1):
        table[m - 1 - suff[i]] = m - 1 - i
    return np.array(table, dtype=np.int64)


@dataclass(frozen=True, eq=False)
class Matcher:
    pattern: bytes
    bad_char_table: np.ndarray
    good_suffix_table: np.ndarray
    ignore_case: bool = False

    @classmethod
    def build(cls, pattern: bytes | str, ignore_case: bool = False) -> "Matcher":
        if isinstance(pattern, str):
            pattern = pattern.encode("utf-8")
        if not pattern:
            raise ValueError("pattern must be non-empty")
        if ignore_case:
            pattern = pattern.lower()
        bad = bad_character_table(pattern)
        if ignore_case:
            bad = bad[_FOLD]
        return cls(pattern, bad, good_suffix_table(pattern), ignore_case)

    @property
    def pattern_array(self) -> np.ndarray:
        return np.frombuffer(self.pattern, dtype=np.uint8)


@numba.njit(cache=True, nogil=True)
def _search(text, pat, bad, good, fold, start):
    m = len(pat)
    n = len(text)
    j = start
    while j <= n - m:
        i = m - 1
        if fold:
            while i >= 0:
                c = text[i + j]
                if 65 <= c <= 90:
                    c += 32
                if c != pat[i]:
                    break
                i -= 1
        else:
            while i >= 0 and text[i + j] == pat[i]:
                i -= 1
        if i < 0:
            return j
        shift = bad[text[i + j]] - m + 1 + i
        if good[i] > shift:
            shift = good[i]
        j += shift
    return -1


def bm_find(matcher: Matcher, haystack: bytes, start: int = 0) -> int | None:
    """Smallest offset >= start where the pattern occurs, or None."""
    pos = _search(haystack, matcher.pattern_array, matcher.bad_char_table,
                  matcher.good_suffix_table, matcher.ignore_case, start)
    return None if pos < 0 else pos


def bm_find_all(matcher: Matcher, haystack: bytes) -> list[int]:
    """Every (possibly overlapping) occurrence offset, ascending."""
    found = []
    args = (matcher.pattern_array, matcher.bad_char_table, matcher.good_suffix_table, matcher.ignore_case)
    pos = _search(haystack, *args, 0)
    while pos >= 0:
        found.append(pos)
        pos = _search(haystack, *args, pos + 1)
    return found


def line_searcher(matcher: Matcher):
    """Return ``contains(line) -> bool`` bound to this matcher's tables."""
    pat = matcher.pattern_array
    bad, good, fold = matcher.bad_char_table, matcher.good_suffix_table, matcher.ignore_case

    def contains(line: bytes) -> bool:
        return _search(line, pat, bad, good, fold, 0) >= 0

    return contains
