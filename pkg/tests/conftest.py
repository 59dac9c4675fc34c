from __future__ import annotations

import os
import sys
from pathlib import Path

import pytest
from hypothesis import HealthCheck, settings

from brix.datagen import GenSpec, Plant, generate_dataset, quartile_plants, write_manifest

sys.path.insert(0, str(Path(__file__).parent))

settings.register_profile("default", deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

REFERENCE_ROWS = 1_000_000
FIXED_MTIME = 1_700_000_000


def pin_mtime(path, mtime: int = FIXED_MTIME) -> None:
    os.utime(path, (mtime, mtime))


@pytest.fixture(scope="session")
def small_corpus(tmp_path_factory):
    """2,000 generated rows with quartile plants."""
    out = tmp_path_factory.mktemp("small") / "small.csv"
    spec = GenSpec(rows=2000, seed=11, planted=quartile_plants(2000))
    descriptor = generate_dataset(spec, out)
    write_manifest(spec, out)
    return spec, descriptor


@pytest.fixture(scope="session")
def dup_corpus(tmp_path_factory):
    """1,000 rows where one planted email appears on two rows."""
    out = tmp_path_factory.mktemp("dup") / "dup.csv"
    plants = (
        Plant(100, "twin@plant.example", "+1 555 000 0001"),
        Plant(640, "Twin@Plant.Example ", "+1 555 000 0002"),
        Plant(1000, "last@plant.example", "555-000-0003"),
    )
    spec = GenSpec(rows=1000, seed=5, planted=plants)
    return spec, generate_dataset(spec, out)


@pytest.fixture(scope="session")
def reference_corpus(tmp_path_factory):
    """The acceptance corpus: 1M rows, 59 columns, seed 42, quartile plants."""
    out = tmp_path_factory.mktemp("reference") / "corpus.csv"
    spec = GenSpec(rows=REFERENCE_ROWS, seed=42, planted=quartile_plants(REFERENCE_ROWS))
    descriptor = generate_dataset(spec, out)
    write_manifest(spec, out)
    return spec, descriptor


# Acceptance criteria report: each acceptance test carries a criterion marker
# and may attach a one-line detail through ``record_property("detail", ...)``.

_acceptance: dict[str, tuple[str, str]] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(id): acceptance criterion covered by this test")


def pytest_runtest_logreport(report):
    if report.when != "call" and not (report.when == "setup" and report.outcome != "passed"):
        return
    marker_ids = [v for k, v in report.user_properties if k == "criterion"]
    if not marker_ids:
        return
    detail = next((v for k, v in report.user_properties if k == "detail"), "")
    outcome = "PASS" if report.outcome == "passed" else "FAIL"
    _acceptance[marker_ids[0]] = (outcome, detail)


@pytest.fixture(autouse=True)
def _criterion_property(request):
    marker = request.node.get_closest_marker("criterion")
    if marker is not None:
        request.node.user_properties.append(("criterion", marker.args[0]))


def pytest_terminal_summary(terminalreporter):
    if not _acceptance:
        return
    terminalreporter.section("acceptance criteria")
    for cid in sorted(_acceptance, key=lambda c: int(c[1:])):
        outcome, detail = _acceptance[cid]
        terminalreporter.write_line(f"{cid} {outcome} {detail}".rstrip())
