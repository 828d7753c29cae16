import subprocess
import sys

import pytest

from islanddb.bench import cli
from islanddb.metrics import CSV_FIELDS, read_csv

SMALL = ["--txn-threads", "2", "--analytic-threads", "1", "--txn-count", "200", "--rows", "200",
         "--vaults", "4", "--vault-group-size", "2", "--segment-size", "64"]


def run(capsys, *argv):
    rc = cli.main(list(argv))
    out = capsys.readouterr()
    return rc, read_csv(out.out) if out.out else [], out.err


def test_zero_query_run_leaves_ana_tput_empty(capsys):
    rc, rows, _ = run(capsys, "bench-synthetic", *SMALL, "--query-count", "0")
    assert rc == 0 and len(rows) == 1
    assert rows[0]["ana_tput"] == ""
    assert float(rows[0]["txn_tput"]) > 0


def test_same_seed_same_checksum(capsys):
    a = run(capsys, "bench-synthetic", *SMALL, "--query-count", "3", "--seed", "5")[1]
    b = run(capsys, "bench-synthetic", *SMALL, "--query-count", "3", "--seed", "5")[1]
    c = run(capsys, "bench-synthetic", *SMALL, "--query-count", "3", "--seed", "6")[1]
    assert a[0]["checksum"] == b[0]["checksum"] != c[0]["checksum"]


def test_engine_all_gives_four_matching_rows(capsys):
    rc, rows, _ = run(capsys, "bench-synthetic", *SMALL, "--query-count", "3", "--engine", "all")
    assert rc == 0
    assert [r["mode"] for r in rows] == ["polynesia", "si-ss", "si-mvcc", "mi-naive"]
    assert len({r["checksum"] for r in rows}) == 1
    assert list(rows[0])[: len(CSV_FIELDS)] == list(CSV_FIELDS)


def test_tpcc_and_tpch6_commands(capsys, tmp_path):
    out = tmp_path / "tpcc.csv"
    rc, _, _ = run(capsys, "bench-tpcc", "--engine", "all", "--txn-threads", "2", "--txn-count", "50",
                   "--analytic-threads", "1", "--query-count", "2", "--output", str(out))
    assert rc == 0
    rows = read_csv(out.read_text())
    assert len(rows) == 4 and len({r["checksum"] for r in rows}) == 1
    rc, rows, _ = run(capsys, "bench-tpch6", "--rows", "3000", "--engine", "si-mvcc")
    assert rc == 0 and float(rows[0]["ana_tput"]) > 0 and int(rows[0]["mvcc_steps"]) > 0


def test_verify_command(capsys):
    rc, rows, err = run(capsys, "verify", *SMALL, "--query-count", "4", "--engine", "all", "--histories", "2")
    assert rc == 0, err
    assert len(rows) == 8
    assert err.count("0 mismatches") == 8


@pytest.mark.parametrize(
    "bad",
    [
        ["--vault-group-size", "3"],
        ["--ship-threshold", "5000"],
        ["--write-ratio", "2"],
        ["--txn-count", "-4"],
    ],
)
def test_bad_config_exits_nonzero(capsys, bad):
    rc, rows, err = run(capsys, "bench-synthetic", *bad)
    assert rc == 2 and not rows and "islanddb:" in err


def test_unknown_engine_is_a_usage_error(capsys):
    with pytest.raises(SystemExit) as exc:
        cli.main(["bench-synthetic", "--engine", "nope"])
    assert exc.value.code != 0


def test_engine_failure_exits_nonzero(capsys, monkeypatch):
    def boom(*a, **k):
        raise RuntimeError("worker died")

    monkeypatch.setattr(cli, "run_synthetic", boom)
    rc, rows, err = run(capsys, "bench-synthetic")
    assert rc == 1 and "worker died" in err


def test_disabled_analytics_flag(capsys):
    rc, rows, _ = run(capsys, "bench-synthetic", *SMALL, "--disable-analytics")
    assert rc == 0 and rows[0]["ana_tput"] == "" and rows[0]["analytic_threads"] == "0"


def test_module_entry_point():
    proc = subprocess.run(
        [sys.executable, "-m", "islanddb", "bench-synthetic", *SMALL, "--query-count", "1"],
        capture_output=True, text=True, timeout=120,
    )
    assert proc.returncode == 0, proc.stderr
    assert proc.stdout.startswith("mode,seed,")
