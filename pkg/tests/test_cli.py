import json
import subprocess
import sys

import pytest

from oclmon.cli import main
from oclmon.environment import write_synthetic_replay


def _config(tmp_path, **changes):
    cfg = {
        "environment": {"kind": "sim", "N": 6},
        "policies": [{"name": "clucb", "alpha_q": 0.5, "alpha_c": 1.0}, {"name": "linucb"}],
        "M": 2, "T": 15, "replications": 2, "error_stride": 5,
    }
    cfg.update(changes)
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(cfg), encoding="utf-8")
    return path


def test_run_writes_outputs(tmp_path, capsys):
    out = tmp_path / "out"
    assert main(["run", "--config", str(_config(tmp_path)), "--out", str(out)]) == 0
    for name in ("regret.csv", "estimation_error.csv", "summary.json"):
        assert (out / name).exists()
    assert "mean_final_regret" in capsys.readouterr().out


def test_run_reports_failures(tmp_path):
    cfg = _config(tmp_path, policies=[{"name": "linucb", "eta1": 0.0}])
    assert main(["run", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 1


def test_bad_config_exit_code(tmp_path, capsys):
    path = tmp_path / "bad.json"
    path.write_text(json.dumps({"T": 5, "colour": "red"}), encoding="utf-8")
    assert main(["run", "--config", str(path)]) == 2
    assert "colour" in capsys.readouterr().err


def test_sweep(tmp_path, capsys):
    cfg = _config(tmp_path, policies=[{"name": "linucb"}], T=5)
    out = tmp_path / "sw"
    assert main(["sweep", "--config", str(cfg), "--axis", "N", "--values", "4,6",
                 "--out", str(out)]) == 0
    assert (out / "N=4" / "regret.csv").exists()
    assert "axis,value,policy" in capsys.readouterr().out


def test_replay(tmp_path):
    data, risks = tmp_path / "o.csv", tmp_path / "r.csv"
    write_synthetic_replay(data, risks, n_units=9, seed=0)
    cfg = _config(tmp_path, M=0.33, T=20)
    out = tmp_path / "rp"
    assert main(["replay", "--data", str(data), "--risks", str(risks), "--config", str(cfg),
                 "--out", str(out)]) == 0
    assert (out / "regret.csv").exists()
    assert not (out / "estimation_error.csv").exists()


def test_bound(tmp_path, capsys):
    consts = tmp_path / "c.json"
    consts.write_text(json.dumps({"S": 1, "L": 2, "P": 3, "v1": 0.5, "v2": 0.5}), encoding="utf-8")
    assert main(["bound", "--config", str(_config(tmp_path)), "--constants", str(consts)]) == 0
    report = json.loads(capsys.readouterr().out)
    assert report["m"] == 2 and report["bound"] > 0


def test_console_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "oclmon.cli", "--help"],
                          capture_output=True, text=True, check=False)
    assert proc.returncode == 0
    assert "replay" in proc.stdout


def test_unknown_axis_rejected(tmp_path):
    with pytest.raises(SystemExit):
        main(["sweep", "--config", str(_config(tmp_path)), "--axis", "T", "--values", "1"])
