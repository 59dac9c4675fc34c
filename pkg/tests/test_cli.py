import json
import os
import shutil
import subprocess
import sys

import jsonschema
import pytest

from brix.bench import REPORT_SCHEMA
from brix.cli import main
from brix.datagen import read_manifest
from oracles import csv_rows


def brix(capsys, *argv):
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    """A generated, indexed corpus shared by the read-only CLI tests."""
    root = tmp_path_factory.mktemp("cli")
    corpus = root / "corpus.csv"
    assert main(["generate", "--rows", "1200", "--seed", "42", "--out", str(corpus)]) == 0
    assert main(["index", str(corpus), "--key", "email:5", "--key", "phone:7", "--key", "integer:0"]) == 0
    return corpus


def test_generate_writes_corpus_and_manifest(tmp_path, capsys):
    out = tmp_path / "c.csv"
    code, stdout, _ = brix(capsys, "generate", "--rows", 100, "--seed", 1, "--out", out)
    assert code == 0 and "100 rows" in stdout
    spec = read_manifest(out)
    assert [p.row_number for p in spec.planted] == [25, 50, 75, 100]
    assert len(csv_rows(out)) == 100


def test_index_builds_expected_files(workspace):
    names = sorted(p.name for p in workspace.with_name("corpus.csv.brix.d").iterdir())
    assert names == ["key-email-c5.idx", "key-integer-c0.idx", "key-phone-c7.idx", "rows.idx"]


def test_query_auto_equals_field_scan(workspace, capsys):
    plant = read_manifest(workspace).planted[1]
    _, auto, _ = brix(capsys, "query", workspace, "--email", plant.email.upper(), "--strategy", "auto")
    _, field, _ = brix(capsys, "query", workspace, "--email", plant.email, "--strategy", "field-scan")
    _, chunked, _ = brix(capsys, "query", workspace, "--email", plant.email, "--strategy", "chunked_scan")
    assert auto == field == chunked
    row = csv_rows(workspace)[plant.row_number - 1]
    assert auto.splitlines() == [",".join(row)]


def test_query_phone_and_row(workspace, capsys):
    plant = read_manifest(workspace).planted[0]
    _, by_phone, _ = brix(capsys, "query", workspace, "--phone", plant.phone, "--strategy", "index")
    _, by_row, _ = brix(capsys, "query", workspace, "--row", plant.row_number)
    assert by_phone == by_row and by_row.count("\n") == 1
    _, by_id, _ = brix(capsys, "query", workspace, "--integer", plant.row_number)
    assert by_id == by_row


def test_query_pattern(workspace, capsys):
    plant = read_manifest(workspace).planted[3]
    code, out, _ = brix(capsys, "query", workspace, "--pattern", plant.email)
    assert code == 0 and plant.email in out


def test_not_found_is_success(workspace, capsys):
    code, out, err = brix(capsys, "query", workspace, "--email", "gone1@absent.example")
    assert (code, out, err) == (0, "", "")
    code, out, _ = brix(capsys, "query", workspace, "--row", 99999)
    assert (code, out) == (0, "")


def test_usage_errors_exit_2(workspace, capsys):
    with pytest.raises(SystemExit) as exc:
        main(["query", str(workspace), "--email", "a@b.c", "--row", "3"])
    assert exc.value.code == 2
    assert "ERROR usage:" in capsys.readouterr().err
    with pytest.raises(SystemExit) as exc:
        main(["query", str(workspace), "--email", "a@b.c", "--strategy", "fastest"])
    assert exc.value.code == 2
    capsys.readouterr()
    code, _, err = brix(capsys, "query", workspace, "--row", 0)
    assert code == 2 and err.startswith("ERROR usage:")


def test_operational_errors_exit_1(workspace, tmp_path, capsys):
    code, _, err = brix(capsys, "query", workspace, "--phone", "1", "--strategy", "line-scan")
    assert code == 1 and err.startswith("ERROR strategy_unavailable:")
    code, _, err = brix(capsys, "query", tmp_path / "missing.csv", "--row", 1)
    assert code == 1 and err.startswith("ERROR io:")
    code, _, err = brix(capsys, "query", workspace, "--email", "a@b.c", "--strategy", "index",
                        "--index-dir", tmp_path)
    assert code == 1 and err.startswith("ERROR strategy_unavailable:")


def test_stale_index_reported(workspace, tmp_path, capsys):
    corpus = tmp_path / "copy.csv"
    shutil.copy(workspace, corpus)
    assert brix(capsys, "index", corpus, "--key", "email:5")[0] == 0
    with open(corpus, "ab") as fh:
        fh.write(b"x\n")
    code, _, err = brix(capsys, "query", corpus, "--email", "a@b.c")
    assert code == 1 and err.startswith("ERROR stale_index:")


def test_index_dir_env_override(workspace, tmp_path, capsys, monkeypatch):
    monkeypatch.setenv("BRIX_INDEX_DIR", str(tmp_path / "envdir"))
    assert brix(capsys, "index", workspace, "--key", "email:5")[0] == 0
    assert (tmp_path / "envdir" / "rows.idx").exists()
    code, _, _ = brix(capsys, "index", workspace, "--index-dir", tmp_path / "flag")
    assert code == 0 and (tmp_path / "flag" / "rows.idx").exists()


def test_bad_key_spec(workspace, capsys):
    with pytest.raises(SystemExit) as exc:
        main(["index", str(workspace), "--key", "email"])
    assert exc.value.code == 2
    capsys.readouterr()
    code, _, err = brix(capsys, "index", workspace, "--key", "email:99", "--index-dir",
                        workspace.parent / "bad")
    assert code == 2 and err.startswith("ERROR usage:")
    assert not (workspace.parent / "bad").exists()


def test_inspect(workspace, capsys):
    code, out, _ = brix(capsys, "inspect", workspace.with_name("corpus.csv.brix.d"))
    headers = {os.path.basename(h["path"]): h for h in json.loads(out)}
    assert code == 0
    assert headers["rows.idx"]["entry_count"] == 1200
    assert headers["key-email-c5.idx"]["column"] == 5


def test_bench_json_validates(workspace, tmp_path, capsys):
    out = tmp_path / "r.json"
    code, _, _ = brix(capsys, "bench", workspace, "--json", "--repetitions", 1, "--warmup", 0, "--out", out)
    data = json.loads(out.read_text())
    assert code == 0
    jsonschema.validate(data, REPORT_SCHEMA)
    assert len(data["cells"]) == 25
    code, md, _ = brix(capsys, "bench", workspace, "--strategies", "index_lookup", "--probe-kind", "row",
                       "--repetitions", 1)
    assert code == 0 and "## index_lookup" in md and "| Average Time |" in md


def test_bench_without_manifest(workspace, tmp_path, capsys):
    corpus = tmp_path / "bare.csv"
    shutil.copy(workspace, corpus)
    code, _, err = brix(capsys, "bench", corpus)
    assert code == 1 and err.startswith("ERROR missing_plants:")


def test_estimate_arithmetic(capsys):
    code, out, _ = brix(capsys, "estimate", "--sample-size", 262, "--sample-mem", 285.8, "--sample-time", 0,
                        "--target", 22118.4, "--units", "MB")
    assert code == 0 and "24,127.63 MB" in out
    code, _, err = brix(capsys, "estimate", "--sample-size", 0, "--sample-mem", 1, "--sample-time", 1,
                        "--target", 5)
    assert code == 1 and err.startswith("ERROR zero_sample:")
    code, _, err = brix(capsys, "estimate", "--target", 5)
    assert code == 2


def test_estimate_from_corpus(workspace, capsys):
    code, out, _ = brix(capsys, "estimate", workspace, "--target", 1, "--units", "GB")
    assert code == 0 and "GB" in out


def test_console_script_entry_point(workspace):
    exe = shutil.which("brix") or pytest.skip("console script not installed")
    done = subprocess.run([exe, "query", str(workspace), "--row", "1"], capture_output=True, text=True)
    assert done.returncode == 0 and done.stdout.count("\n") == 1
    done = subprocess.run([sys.executable, "-m", "brix.cli", "query"], capture_output=True, text=True)
    assert done.returncode == 2 and "ERROR usage:" in done.stderr
