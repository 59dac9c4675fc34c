"""Linear extrapolation of memory and time from a measured sample.

Both estimates are ``measured * target / sample``. The product and quotient
are evaluated exactly on the binary values of the inputs and rounded once,
so scaling the target by two doubles the estimate exactly and a target equal
to the sample reproduces the measurement exactly.
"""

from __future__ import annotations

import os
import time
from dataclasses import dataclass
from fractions import Fraction

from .csvio import DEFAULT_DIALECT, BufferGauge
from .model import CsvDialect, NormalizedKey, PathLike
from .scan import chunked_scan

MB = 1024 * 1024
GB = 1024 * MB
LOWER_BOUND_NOTE = (
    "linear estimate; memory and time may grow faster than linearly on larger inputs, "
    "treat these figures as a lower bound"
)


class ZeroSample(ValueError):
    pass


@dataclass(frozen=True)
class SampleProfile:
    sample_size_bytes: float
    sample_mem_bytes: float
    sample_time: float

    def __post_init__(self) -> None:
        if self.sample_size_bytes < 0 or self.sample_mem_bytes < 0:
            raise ValueError("sizes must be >= 0")
        if self.sample_time < 0:
            raise ValueError("sample_time must be >= 0")


@dataclass(frozen=True)
class Estimate:
    target_size_bytes: float
    est_mem_bytes: float
    est_time: float
    model: str = "linear"


def _scale(measured: float, sample: float, target: float) -> float:
    if sample == 0:
        raise ZeroSample("sample size is zero")
    if target < 0:
        raise ValueError("target size must be >= 0")
    return float(Fraction(measured) * Fraction(target) / Fraction(sample))


def estimate_memory(profile: SampleProfile, target_size_bytes: float) -> float:
    return _scale(profile.sample_mem_bytes, profile.sample_size_bytes, target_size_bytes)


def estimate_time(profile: SampleProfile, target_size_bytes: float) -> float:
    return _scale(profile.sample_time, profile.sample_size_bytes, target_size_bytes)


def estimate(profile: SampleProfile, target_size_bytes: float) -> Estimate:
    return Estimate(
        target_size_bytes,
        estimate_memory(profile, target_size_bytes),
        estimate_time(profile, target_size_bytes),
    )


def profile_sample(
    path: PathLike,
    sample_bytes: int,
    column: int,
    key: NormalizedKey,
    chunk_rows: int = 1000,
    dialect: CsvDialect = DEFAULT_DIALECT,
) -> SampleProfile:
    """Chunk-scan the first ``sample_bytes`` of ``path`` (whole lines only).

    Memory is the peak number of line bytes held by the chunk buffer, which
    is deterministic for a given file and chunk size.
    """
    size = os.path.getsize(path)
    if sample_bytes > size:
        raise ValueError(f"sample of {sample_bytes} bytes exceeds file size {size}")
    gauge = BufferGauge()
    start = time.perf_counter()
    result = chunked_scan(path, column, key, chunk_rows, dialect, gauge, limit_bytes=sample_bytes)
    elapsed = time.perf_counter() - start
    return SampleProfile(result.bytes_scanned, gauge.peak_bytes, elapsed)


def format_size(nbytes: float) -> str:
    return f"{nbytes / MB:,.2f} MB ({nbytes / GB:,.2f} GB)"


def render_estimate(profile: SampleProfile, result: Estimate) -> str:
    lines = [
        f"sample:  {format_size(profile.sample_size_bytes)}, "
        f"memory {format_size(profile.sample_mem_bytes)}, {profile.sample_time:.4f} s",
        f"target:  {format_size(result.target_size_bytes)}",
        f"memory:  {format_size(result.est_mem_bytes)}",
        f"time:    {result.est_time:.4f} s",
        f"note:    {LOWER_BOUND_NOTE}",
    ]
    return "\n".join(lines) + "\n"
