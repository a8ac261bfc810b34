import json
import subprocess
import sys

import numpy as np
import pytest

from safeguard import cli
from safeguard.core import BadOverride, IoFailure, UnknownScenario


def read_csv(path):
    header, *rows = path.read_text().split("\n")[:-1]
    return header.split(","), np.array([[float(v) for v in r.split(",")] for r in rows])


def test_list_is_stable_and_complete(capsys):
    assert cli.main(["list"]) == 0
    first = capsys.readouterr().out
    cli.main(["list"])
    assert capsys.readouterr().out == first
    lines = first.strip().splitlines()
    assert len(lines) == 9
    assert "gamma=3" in first and "gamma=7.5" in first


def test_acc_run_outputs(tmp_path):
    assert cli.main(["run", "acc:nodelay", "--out", str(tmp_path), "--horizon", "5"]) == 0
    out = tmp_path / "acc:nodelay"
    header, data = read_csv(out / "trajectory.csv")
    assert header == ["t", "s", "v", "s1", "v1", "H", "u_des", "u", "residual", "flags"]
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["verdict"]["min_barrier"] == data[:, header.index("H")].min()
    assert manifest["verdict"]["min_barrier"] >= -1e-6
    assert manifest["config"]["effective_horizon"] == 5.0
    assert len(data) == 5001


def test_unsafe_exit_codes(tmp_path):
    args = ["run", "segway:delay_naive", "--out", str(tmp_path), "--horizon", "2"]
    assert cli.main(args) == 2
    assert cli.main(args + ["--expect-unsafe"]) == 0
    manifest = json.loads((tmp_path / "segway:delay_naive" / "manifest.json").read_text())
    assert manifest["verdict"]["first_violation_time"] > 0


def test_errors_exit_one(tmp_path, capsys):
    assert cli.main(["run", "bogus", "--out", str(tmp_path)]) == 1
    assert capsys.readouterr().err.startswith("UnknownScenario")
    assert cli.main(["run", "acc:nodelay", "--out", str(tmp_path), "--set", "acc.nope=1"]) == 1
    assert capsys.readouterr().err.startswith("BadOverride")
    assert cli.main(["run", "acc:nodelay", "--out", str(tmp_path), "--config", str(tmp_path / "missing.cfg")]) == 1
    assert capsys.readouterr().err.startswith("IoFailure")


def test_override_parsing_and_precedence(tmp_path):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("# comment\nacc.gamma = 2\nsegway.domain_e = -4, 4\nsim.horizon = 3\n")
    pairs = cli.read_config(str(cfg)) + [cli.parse_assignment("acc.gamma=5")]
    run = cli.resolve("acc:nodelay", pairs, {"horizon": None})
    assert run.targets[0].gamma == 5.0 and run.options.horizon == 3.0
    run = cli.resolve("acc:nodelay", pairs, {"horizon": 1.5})
    assert run.options.horizon == 1.5
    seg = cli.resolve("segway:nodelay", pairs, {})
    assert seg.targets[1].domains.e == (-4.0, 4.0)


@pytest.mark.parametrize("bad", ["acc.gamma=abc", "acc.gamma=-1", "segway.domain_e=1", "other.x=1", "sim.tau=1"])
def test_bad_overrides(bad):
    with pytest.raises(BadOverride):
        cli.resolve("acc:nodelay", [cli.parse_assignment(bad)], {})


def test_malformed_assignment():
    with pytest.raises(BadOverride):
        cli.parse_assignment("novalue")
    with pytest.raises(UnknownScenario):
        cli.resolve("acc:bogus", [], {})


def test_env_default_out_dir(tmp_path, monkeypatch):
    monkeypatch.setenv("SAFEGUARD_OUT", str(tmp_path))
    assert cli.main(["run", "acc:nodelay", "--horizon", "0.5"]) == 0
    assert (tmp_path / "acc:nodelay" / "trajectory.csv").exists()


def test_sweep_writes_one_directory_per_value(tmp_path):
    code = cli.main(["run", "acc:nodelay", "--out", str(tmp_path), "--horizon", "1", "--sweep", "acc.gamma=2,3", "--workers", "2"])
    assert code == 0
    for v in ("2", "3"):
        m = json.loads((tmp_path / "acc:nodelay" / f"acc.gamma={v}" / "manifest.json").read_text())
        assert m["parameters"][0]["gamma"] == float(v)


def test_module_entry_point(tmp_path):
    res = subprocess.run([sys.executable, "-m", "safeguard", "list"], capture_output=True, text=True)
    assert res.returncode == 0 and len(res.stdout.splitlines()) == 9
