import json

import pytest

from pathlib import Path

from cylwalk.cli import COMMANDS, main
from cylwalk.config import load_config
from cylwalk.rng import THREADS_ENV


@pytest.fixture(autouse=True)
def clean_env(monkeypatch):
    monkeypatch.delenv(THREADS_ENV, raising=False)


def test_capacity_run_writes_artifacts(tmp_path, capsys, monkeypatch):
    rc = main(["capacity", "--replicas", "2e4", "--seed", "3", "--threads", "2", "--out", str(tmp_path)])
    assert rc == 0
    body = json.loads((tmp_path / "result.json").read_text())
    assert body["config"]["walkers"] == 20000 and body["seed"] == 3
    assert list((tmp_path / "tables").glob("*.csv"))
    out = capsys.readouterr().out
    assert "PASS  mc_agreement" in out and body["determinism_hash"][:12] in out


def test_config_file_and_set(tmp_path):
    cfg = tmp_path / "c.cfg"
    cfg.write_text('schema_version = 1\nkind = capacity\nwalkers = 0\n')
    rc = main(["capacity", "--config", str(cfg), "--set", 'pattern="[(0,0,0),(1,0,0)]"', "--out", str(tmp_path / "o")])
    assert rc == 0
    assert json.loads((tmp_path / "o" / "result.json").read_text())["config"]["pattern"] == "[(0,0,0),(1,0,0)]"


@pytest.mark.parametrize("argv", [
    ["capacity", "--set", "walkerz=3"],
    ["verify-lemma42", "--replicas", "100"],
    ["capacity", "--threads", "0"],
])
def test_usage_errors_exit_2(argv, capsys):
    assert main(argv) == 2
    assert "cylwalk: error" in capsys.readouterr().err


def test_kind_mismatch(tmp_path):
    cfg = tmp_path / "c.cfg"
    cfg.write_text("schema_version = 1\nkind = interlace\n")
    assert main(["capacity", "--config", str(cfg)]) == 2


def test_bad_schema_version(tmp_path):
    cfg = tmp_path / "c.cfg"
    cfg.write_text("schema_version = 7\n")
    assert main(["capacity", "--config", str(cfg)]) == 2


def test_gate_failure_exit_1():
    # an absurd tolerance makes the Monte Carlo agreement gate fail
    assert main(["capacity", "--replicas", "2000", "--set", "rel_tol=1e-9"]) == 1


def test_unknown_command():
    with pytest.raises(SystemExit) as e:
        main(["frobnicate"])
    assert e.value.code == 2


@pytest.mark.parametrize("command", sorted(COMMANDS))
def test_shipped_configs_match_defaults(command):
    path = Path(__file__).parent.parent / "scripts" / "configs" / f"{command}.cfg"
    assert COMMANDS[command].from_dict(load_config(path)) == COMMANDS[command]()
