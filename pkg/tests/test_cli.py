import csv
import hashlib
import json

import pytest
from click.testing import CliRunner

from geolab.cli import CSV_COLUMNS, main, non_finite_fields

TORUS = """schema_version = 1
seed = 0

[manifold]
model = "torus"

[grid]
k = 8
spacing = "warn"

[find]
starts = 4
winding = [1, 0]
amplitude = 0.05

[iterate]
p = 1
m_max = 3

[family]
kind = "point_circle"
samples = 9

[bangert]
m_values = [2, 4]
s_samples = 2

[minimax]
rounds = 400
window = 20
"""


@pytest.fixture
def torus_config(tmp_path):
    path = tmp_path / "torus.toml"
    path.write_text(TORUS)
    return path


def invoke(*args):
    return CliRunner().invoke(main, [str(a) for a in args])


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def test_find_writes_report_and_records(torus_config, tmp_path):
    out = tmp_path / "out"
    res = invoke("find", "--config", torus_config, "--out", out)
    assert res.exit_code == 0, res.output
    report = json.loads((out / "find.json").read_text())
    digest = hashlib.sha256(torus_config.read_bytes()).hexdigest()
    assert report["config_hash"] == digest
    assert report["seed"] == 0
    rows = read_csv(out / "records.csv")
    with open(out / "records.csv") as fh:
        header = fh.readline().strip().split(",")
    assert header == CSV_COLUMNS["records"] + ["config_hash", "seed"]
    assert len(rows) == 1
    assert float(rows[0]["energy"]) == pytest.approx(1.0, abs=1e-8)
    assert (rows[0]["index"], rows[0]["nullity"]) == ("0", "2")
    assert rows[0]["config_hash"] == digest


def test_find_is_reproducible(torus_config, tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    assert invoke("find", "--config", torus_config, "--out", a, "--seed", 5).exit_code == 0
    assert invoke("find", "--config", torus_config, "--out", b, "--seed", 5).exit_code == 0
    assert (a / "find.json").read_text() == (b / "find.json").read_text()
    assert (a / "records.csv").read_text() == (b / "records.csv").read_text()
    assert json.loads((a / "find.json").read_text())["seed"] == 5


def test_iterate_scan_table(torus_config, tmp_path):
    res = invoke("iterate", "--config", torus_config, "--out", tmp_path)
    assert res.exit_code == 0, res.output
    rows = read_csv(tmp_path / "scan.csv")
    assert [r["m"] for r in rows] == ["0", "1", "2", "3"]
    assert {r["verdict"] for r in rows} == {"ALL_ZERO"}


def test_minimax_and_bangert(torus_config, tmp_path):
    res = invoke("bangert", "--config", torus_config, "--out", tmp_path)
    assert res.exit_code == 0, res.output
    rows = read_csv(tmp_path / "decay.csv")
    assert [r["m"] for r in rows] == ["2", "4"]
    assert list(rows[0]) == CSV_COLUMNS["decay"] + ["config_hash", "seed"]
    res = invoke("minimax", "--config", torus_config, "--out", tmp_path)
    # circles shrink to point loops: the family is contractible and its minimax level is zero
    assert res.exit_code == 0, res.output
    assert json.loads((tmp_path / "minimax.json").read_text())["c"] < 1e-10
    trace = read_csv(tmp_path / "trace.csv")
    energies = [float(r["max_energy"]) for r in trace]
    assert all(b <= a + 1e-12 for a, b in zip(energies, energies[1:]))


def test_config_error_exit_code(tmp_path):
    bad = tmp_path / "bad.toml"
    bad.write_text("[grid]\nk = 8\nclosure = \"open\"\n")
    res = invoke("find", "--config", bad, "--out", tmp_path)
    assert res.exit_code == 2
    assert "grid.closure" in res.output
    assert "(line 3)" in res.output
    assert not (tmp_path / "find.json").exists()


def test_missing_config_exit_code(tmp_path):
    assert invoke("find", "--config", tmp_path / "none.toml").exit_code == 2


def test_numerical_failure_exit_code(tmp_path):
    cfg = tmp_path / "c.toml"
    # two rounds cannot stabilise the minimax level: NO_CONVERGENCE is a failure flag
    cfg.write_text(TORUS.replace("rounds = 400", "rounds = 2"))
    res = invoke("minimax", "--config", cfg, "--out", tmp_path)
    assert res.exit_code == 3, res.output
    assert "NO_CONVERGENCE" in res.output
    assert json.loads((tmp_path / "minimax.json").read_text())["flag"] == "NO_CONVERGENCE"


def test_verify_subset(tmp_path):
    cfg = tmp_path / "v.toml"
    cfg.write_text("schema_version = 1\n")
    res = invoke("verify", "--config", cfg, "--out", tmp_path, "--only", 10, "--only", 3)
    assert res.exit_code == 0, res.output
    lines = [l for l in res.output.splitlines() if l.startswith("criterion")]
    assert len(lines) == 2 and all(" PASS " in l for l in lines)
    rows = read_csv(tmp_path / "acceptance.csv")
    assert [r["criterion"] for r in rows] == ["3", "10"]
    assert {r["status"] for r in rows} == {"PASS"}
    assert invoke("verify", "--config", cfg, "--only", 11).exit_code == 2


def test_non_finite_fields():
    assert non_finite_fields({"a": [1.0, float("nan")], "b": {"c": float("inf")}}) == ["a[1]", "b.c"]
    assert non_finite_fields({"a": 1.0}) == []
