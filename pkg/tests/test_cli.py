"""CLI contract: exit codes, output shapes, and argument handling."""

import csv
import io
import json

import pytest

from simplex import CSV_HEADER, probe
from simplex.cli import (
    EXIT_CORRECTNESS,
    EXIT_ENVIRONMENT,
    EXIT_OK,
    EXIT_USAGE,
    main,
)
from simplex.probe import ENV_BACKEND


@pytest.fixture(autouse=True)
def clean_backend_env(monkeypatch):
    monkeypatch.delenv(ENV_BACKEND, raising=False)


def test_no_subcommand_is_usage_error(capsys):
    assert main([]) == EXIT_USAGE
    assert "usage" in capsys.readouterr().err


def test_unknown_subcommand_is_usage_error(capsys):
    assert main(["frobnicate"]) == EXIT_USAGE


def test_probe_reports_selection(capsys):
    assert main(["probe"]) == EXIT_OK
    out = capsys.readouterr().out
    assert "selected:" in out
    assert "hardware_capable:" in out


def test_probe_json_schema(capsys):
    assert main(["probe", "--json"]) == EXIT_OK
    doc = json.loads(capsys.readouterr().out)
    assert set(doc) == {
        "cpu_has_mpx", "xstate_bndregs", "xstate_bndcsr",
        "os_context_saves_mpx", "selected", "override_source",
    }
    assert doc["selected"] in ("hardware", "emulated")
    assert doc["override_source"] in ("none", "env", "flag")


def test_probe_strict_hardware_on_incapable_machine(capsys):
    if probe().hardware_capable:
        pytest.skip("machine provides MPX; strict probe succeeds here")
    assert main(["--backend", "hardware", "probe"]) == EXIT_ENVIRONMENT
    assert capsys.readouterr().err


def test_bad_backend_flag_is_usage_error():
    assert main(["--backend", "turbo", "probe"]) == EXIT_USAGE


def test_bad_backend_env_is_environment_error(monkeypatch, capsys):
    monkeypatch.setenv(ENV_BACKEND, "turbo")
    assert main(["probe"]) == EXIT_ENVIRONMENT
    assert "backend configuration" in capsys.readouterr().err


def test_env_override_is_reported(monkeypatch, capsys):
    monkeypatch.setenv(ENV_BACKEND, "emulated")
    assert main(["probe"]) == EXIT_OK
    assert "override: env" in capsys.readouterr().out


def test_selftest_passes_all_stages(capsys):
    assert main(["--backend", "emulated", "selftest"]) == EXIT_OK
    out = capsys.readouterr().out
    assert out.count("PASS") == 4
    for stage in ("fork-inheritance", "thread-inheritance",
                  "reinit-and-finish", "round-trip"):
        assert stage in out


def test_selftest_single_stage(capsys):
    assert main(["--backend", "emulated", "selftest", "--reinit"]) == EXIT_OK
    out = capsys.readouterr().out
    assert out.count("PASS") == 1
    assert "reinit-and-finish" in out


def test_selftest_injected_fault_exits_correctness(capsys):
    assert main(["--backend", "emulated", "selftest", "--fork",
                 "--inject-fault"]) == EXIT_CORRECTNESS
    err = capsys.readouterr().err
    assert "FAIL" in err and "row 2" in err


def test_bench_loadstore_markdown(capsys):
    assert main(["--backend", "emulated", "bench", "loadstore",
                 "--runs", "2", "--iters", "64"]) == EXIT_OK
    out = capsys.readouterr().out
    assert "| loadstore" in out
    assert "slot/register rate ratio: store" in out
    assert "slot/register rate ratio: load" in out


def test_bench_traversal_csv_header_and_rows(capsys):
    assert main(["--backend", "emulated", "bench", "traversal",
                 "--sizes", "1K", "--runs", "2", "--iters", "1",
                 "--format", "csv"]) == EXIT_OK
    out = capsys.readouterr().out
    lines = out.strip().splitlines()
    assert lines[0] == CSV_HEADER
    assert len(lines) == 3  # header + register + slot
    rows = list(csv.DictReader(io.StringIO(out)))
    assert {r["target"] for r in rows} == {"register", "slot"}
    assert all(r["size_bytes"] == "1024" for r in rows)


def test_bench_strops_json_carries_geomean(capsys):
    assert main(["--backend", "emulated", "bench", "strops",
                 "--sizes", "512", "--runs", "2", "--format", "json"]) == EXIT_OK
    doc = json.loads(capsys.readouterr().out)
    assert "geomean_overhead_pct" in doc
    assert len(doc["records"]) == 10


def test_bench_size_alias_accepted(capsys):
    assert main(["--backend", "emulated", "bench", "strops",
                 "--size", "512", "--runs", "2", "--format", "json"]) == EXIT_OK
    doc = json.loads(capsys.readouterr().out)
    assert {r["size_bytes"] for r in doc["records"]} == {512}


def test_bench_help_documents_published_defaults(capsys):
    assert main(["bench", "--help"]) == EXIT_OK
    out = capsys.readouterr().out
    for token in ("10000", "1000000", "1000", "4K,8K,1M,16M", "per-byte", "100"):
        assert token in out


def test_bench_rejects_malformed_sizes(capsys):
    assert main(["--backend", "emulated", "bench", "strops",
                 "--sizes", "4X"]) == EXIT_USAGE
    assert "bad size" in capsys.readouterr().err


def test_demo_hide_roundtrip(tmp_path, capsys):
    secret = tmp_path / "secret.bin"
    secret.write_bytes(bytes(range(256)) * 16)  # 4 KiB
    assert main(["--backend", "emulated", "demo-hide",
                 "--secret-file", str(secret)]) == EXIT_OK
    out = capsys.readouterr().out
    assert "BND2" in out and "BND3" in out
    assert "nothing was written to disk" in out
    assert list(tmp_path.iterdir()) == [secret]  # no artifacts


def test_demo_hide_empty_file(tmp_path, capsys):
    secret = tmp_path / "empty.bin"
    secret.write_bytes(b"")
    assert main(["--backend", "emulated", "demo-hide",
                 "--secret-file", str(secret)]) == EXIT_OK
    assert "nothing to hide" in capsys.readouterr().out


def test_demo_hide_missing_file(tmp_path, capsys):
    assert main(["--backend", "emulated", "demo-hide",
                 "--secret-file", str(tmp_path / "absent")]) == EXIT_USAGE
    assert "cannot read" in capsys.readouterr().err


def test_demo_hide_rejects_oversized_file(tmp_path, capsys):
    big = tmp_path / "big.bin"
    big.write_bytes(b"\0" * ((16 << 20) + 1))
    assert main(["--backend", "emulated", "demo-hide",
                 "--secret-file", str(big)]) == EXIT_USAGE
    assert "caps secrets" in capsys.readouterr().err
