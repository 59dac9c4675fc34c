"""Quartile-position benchmark harness and report rendering."""

from __future__ import annotations

import json
import os
import platform
import statistics
import threading
import time
from collections.abc import Callable, Sequence
from dataclasses import dataclass, field

from .datagen import GenSpec, absent_email, quartile_rows
from .model import DatasetDescriptor, KeyKind, normalize, normalize_email
from .planner import ByKey, ByRow, IndexSet, Query, Strategy, execute
from .scan import ScanKind

ALL_STRATEGIES = (
    ScanKind.INDEX_LOOKUP,
    ScanKind.CHUNKED_SCAN,
    ScanKind.LINE_SCAN_ALL,
    ScanKind.LINE_SCAN_FIRST,
    ScanKind.FIELD_SCAN,
)
PROBE_KINDS = ("email", "integer", "row")

# Which planner route and scan mode each benchmarked strategy stands for.
_ROUTES = {
    ScanKind.INDEX_LOOKUP: (Strategy.INDEX, False),
    ScanKind.CHUNKED_SCAN: (Strategy.CHUNKED_SCAN, False),
    ScanKind.LINE_SCAN_ALL: (Strategy.LINE_SCAN, False),
    ScanKind.LINE_SCAN_FIRST: (Strategy.LINE_SCAN, True),
    ScanKind.FIELD_SCAN: (Strategy.FIELD_SCAN, True),
}

REPORT_SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "type": "object",
    "required": ["environment", "cells", "averages"],
    "additionalProperties": False,
    "properties": {
        "environment": {"type": "object"},
        "cells": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["strategy", "probe_label", "elapsed_s", "matches", "bytes_scanned"],
                "additionalProperties": False,
                "properties": {
                    "strategy": {"type": "string"},
                    "probe_label": {"type": "string"},
                    "expected_row": {"type": ["integer", "null"]},
                    "elapsed_s": {"type": "number", "minimum": 0},
                    "matches": {"type": "integer", "minimum": 0},
                    "bytes_scanned": {"type": "integer", "minimum": 0},
                    "samples_s": {"type": "array", "items": {"type": "number", "minimum": 0}},
                },
            },
        },
        "averages": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["strategy", "avg_s"],
                "additionalProperties": False,
                "properties": {"strategy": {"type": "string"}, "avg_s": {"type": "number", "minimum": 0}},
            },
        },
    },
}


class MissingPlants(ValueError):
    pass


class CorrectnessFailure(AssertionError):
    pass


class ConcurrentRun(RuntimeError):
    pass


@dataclass(frozen=True)
class Probe:
    label: str
    query: Query
    expected_row: int | None


@dataclass(frozen=True)
class BenchPlan:
    dataset: DatasetDescriptor
    strategies: tuple[ScanKind, ...]
    probes: tuple[Probe, ...]
    repetitions: int = 3
    warmup: int = 1
    chunk_rows: int = 1000

    def __post_init__(self) -> None:
        if self.repetitions < 1:
            raise ValueError("repetitions must be >= 1")
        if self.warmup < 0:
            raise ValueError("warmup must be >= 0")
        present = [p for p in self.probes if p.expected_row is not None]
        if len(present) < 4 or len(present) == len(self.probes):
            raise ValueError("a plan needs 4 quartile probes and at least one absent probe")


@dataclass(frozen=True)
class Cell:
    strategy: ScanKind
    probe_label: str
    expected_row: int | None
    elapsed_s: float
    matches: int
    bytes_scanned: int
    samples_s: tuple[float, ...] = ()


@dataclass
class BenchReport:
    cells: list[Cell]
    environment: dict = field(default_factory=dict)

    @property
    def strategies(self) -> list[ScanKind]:
        return list(dict.fromkeys(c.strategy for c in self.cells))

    @property
    def per_strategy_avg(self) -> dict[ScanKind, float]:
        return {s: statistics.fmean(c.elapsed_s for c in self.cells if c.strategy is s) for s in self.strategies}

    def cell(self, strategy: ScanKind, label: str) -> Cell:
        for c in self.cells:
            if c.strategy is strategy and c.probe_label == label:
                return c
        raise KeyError((strategy, label))

    def cells_for(self, strategy: ScanKind) -> list[Cell]:
        return [c for c in self.cells if c.strategy is strategy]


def make_plan(
    dataset: DatasetDescriptor,
    planted: GenSpec,
    strategies: Sequence[ScanKind | str] = ALL_STRATEGIES,
    probe_kind: str = "email",
    repetitions: int = 3,
    warmup: int = 1,
    chunk_rows: int = 1000,
) -> BenchPlan:
    """Four quartile probes (ascending) then one absent probe.

    ``probe_kind`` picks what is searched for: the planted email, the
    integer id column, or the row number itself.
    """
    if probe_kind not in PROBE_KINDS:
        raise ValueError(f"probe_kind must be one of {PROBE_KINDS}")
    n = dataset.row_count
    try:
        quartiles = quartile_rows(n)
    except ValueError as exc:
        raise MissingPlants(str(exc)) from None
    by_row = {p.row_number: p for p in planted.planted}
    probes = []
    for k, row in enumerate(quartiles, start=1):
        label = f"Q{k} row {row}"
        if probe_kind == "email":
            if row not in by_row:
                raise MissingPlants(f"no planted record at quartile row {row}")
            target = ByKey(planted.email_column, normalize_email(by_row[row].email))
        elif probe_kind == "integer":
            if planted.id_column is None:
                raise MissingPlants("corpus has no id column")
            target = ByKey(planted.id_column, normalize(KeyKind.INTEGER, str(row)))
        else:
            target = ByRow(row)
        probes.append(Probe(label, Query(target, chunk_rows=chunk_rows), row))
    if probe_kind == "email":
        absent = ByKey(planted.email_column, normalize_email(absent_email()))
    elif probe_kind == "integer":
        absent = ByKey(planted.id_column, normalize(KeyKind.INTEGER, str(n + 1)))
    else:
        absent = ByRow(n + 1)
    probes.append(Probe("invalid", Query(absent, chunk_rows=chunk_rows), None))
    return BenchPlan(
        dataset,
        tuple(ScanKind(s) for s in strategies),
        tuple(probes),
        repetitions,
        warmup,
        chunk_rows,
    )


_RUN_LOCK = threading.Lock()


def _drop_cache(path) -> None:
    with open(path, "rb") as fh:
        os.posix_fadvise(fh.fileno(), 0, 0, os.POSIX_FADV_DONTNEED)


def environment_info(dataset: DatasetDescriptor, plan: BenchPlan | None = None, cold_cache: bool = False) -> dict:
    info = {
        "machine": platform.machine(),
        "processor": platform.processor() or platform.machine(),
        "cpu_count": os.cpu_count(),
        "os": f"{platform.system()} {platform.release()}",
        "python": platform.python_version(),
        "corpus": os.path.basename(dataset.path),
        "corpus_bytes": dataset.size_bytes,
        "corpus_rows": dataset.row_count,
        "corpus_columns": dataset.column_count,
        "cache": "cold" if cold_cache else "warm",
    }
    if plan is not None:
        info["repetitions"] = plan.repetitions
        info["warmup"] = plan.warmup
        info["chunk_rows"] = plan.chunk_rows
    return info


def run(
    plan: BenchPlan,
    indexes: IndexSet | None = None,
    clock: Callable[[], float] = time.perf_counter,
    cold_cache: bool = False,
    environment: dict | None = None,
) -> BenchReport:
    """Time every (strategy, probe) cell, one query at a time.

    Per strategy, ``warmup`` uncounted rounds run first, then ``repetitions``
    timed rounds. Each round visits every probe once, so slow drift of the
    machine is shared by all probes instead of landing on one cell. A cell's
    time is the median of its rounds. Any run whose rows differ from the
    planted expectation raises ``CorrectnessFailure``.
    """
    if not _RUN_LOCK.acquire(blocking=False):
        raise ConcurrentRun("another benchmark is already running in this process")
    try:
        indexes = indexes or IndexSet()
        cells = []
        for strategy in plan.strategies:
            cells.extend(_run_strategy(plan, strategy, indexes, clock, cold_cache))
        env = environment if environment is not None else environment_info(plan.dataset, plan, cold_cache)
        return BenchReport(cells, env)
    finally:
        _RUN_LOCK.release()


def _run_strategy(plan, strategy, indexes, clock, cold_cache) -> list[Cell]:
    route, early_exit = _ROUTES[strategy]
    queries = [Query(p.query.target, route, early_exit, plan.chunk_rows) for p in plan.probes]
    for _ in range(plan.warmup):
        for query in queries:
            execute(query, plan.dataset, indexes)
    samples: list[list[float]] = [[] for _ in plan.probes]
    last = [None] * len(plan.probes)
    for _ in range(plan.repetitions):
        for i, (probe, query) in enumerate(zip(plan.probes, queries)):
            if cold_cache:
                _drop_cache(plan.dataset.path)
            start = clock()
            result = execute(query, plan.dataset, indexes)
            samples[i].append(clock() - start)
            expected = [] if probe.expected_row is None else [probe.expected_row]
            if result.rows != expected:
                raise CorrectnessFailure(
                    f"{strategy.value} / {probe.label}: expected rows {expected}, got {result.rows}"
                )
            last[i] = result
    return [
        Cell(
            strategy,
            probe.label,
            probe.expected_row,
            statistics.median(times),
            len(result.matches),
            result.bytes_scanned,
            tuple(times),
        )
        for probe, times, result in zip(plan.probes, samples, last)
    ]


def report_to_dict(report: BenchReport) -> dict:
    return {
        "environment": report.environment,
        "cells": [
            {
                "strategy": c.strategy.value,
                "probe_label": c.probe_label,
                "expected_row": c.expected_row,
                "elapsed_s": c.elapsed_s,
                "matches": c.matches,
                "bytes_scanned": c.bytes_scanned,
                "samples_s": list(c.samples_s),
            }
            for c in report.cells
        ],
        "averages": [{"strategy": s.value, "avg_s": avg} for s, avg in report.per_strategy_avg.items()],
    }


def report_from_dict(data: dict) -> BenchReport:
    cells = [
        Cell(
            ScanKind(c["strategy"]),
            c["probe_label"],
            c.get("expected_row"),
            c["elapsed_s"],
            c["matches"],
            c["bytes_scanned"],
            tuple(c.get("samples_s", ())),
        )
        for c in data["cells"]
    ]
    return BenchReport(cells, dict(data["environment"]))


def render_report(report: BenchReport, fmt: str = "markdown") -> str:
    if fmt == "json":
        return json.dumps(report_to_dict(report), indent=2, sort_keys=True) + "\n"
    if fmt != "markdown":
        raise ValueError(f"unknown report format {fmt!r}")
    return _markdown(report)


def _markdown(report: BenchReport) -> str:
    out = ["# Benchmark report", "", "## Environment", ""]
    out += ["| Key | Value |", "|---|---|"]
    out += [f"| {k} | {v} |" for k, v in sorted(report.environment.items())]
    averages = report.per_strategy_avg
    for strategy in report.strategies:
        out += ["", f"## {strategy.value}", ""]
        out += ["| Probe | Time taken (s) | Matches | Bytes scanned |", "|---|---:|---:|---:|"]
        for c in report.cells_for(strategy):
            out.append(f"| {c.probe_label} | {c.elapsed_s:.4f} | {c.matches} | {c.bytes_scanned} |")
        out.append(f"| Average Time | {averages[strategy]:.4f} | | |")
    out += ["", "## Overall", "", "| Strategy | Average time (s) |", "|---|---:|"]
    out += [f"| {s.value} | {avg:.4f} |" for s, avg in averages.items()]
    return "\n".join(out) + "\n"
