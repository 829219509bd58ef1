import json
import subprocess
import sys
from pathlib import Path

import pytest

from ramsey_affine.affine_model import spec_to_dict
from ramsey_affine.cli import EXIT_BLOWUP, EXIT_CONFIG, EXIT_OK, EXIT_VERIFY, main
from ramsey_affine.fixtures import cir

CONFIGS = Path(__file__).resolve().parents[1] / "configs"


def cfg(name):
    return str(CONFIGS / f"{name}.json")


COMMANDS = {
    "validate": ["validate", "--config", cfg("vasicek")],
    "curve": ["curve", "--config", cfg("cir"), "--tenors", "1,5,10"],
    "longrate": ["longrate", "--config", cfg("nondecreasing"), "--verify", "--paths", "64"],
    "backward-power": ["backward-power", "--config", cfg("backward_two_factor"), "--theta", "0.5", "--horizon", "1",
                       "--step", "0.01", "--pathwise-paths", "64"],
    "mixture-curve": ["mixture-curve", "--config", cfg("mixture_two_factor"), "--mixture", cfg("mixture"),
                      "--tenors", "1,10", "--y", "0.5,2", "--step", "0.01"],
    "simulate": ["simulate", "--config", cfg("vasicek"), "--sim", cfg("sim"), "--paths", "512"],
}


def _manifest(out, command):
    return json.loads((out / f"{command}.manifest.json").read_text())


@pytest.mark.parametrize("command", sorted(COMMANDS))
def test_command_writes_outputs_and_reruns_identically(command, tmp_path):
    out = tmp_path / "run"
    assert main(COMMANDS[command] + ["--out", str(out)]) == EXIT_OK
    man = _manifest(out, command)
    assert man["command"] == command and man["outputs"]
    for key in ("args", "effective_config", "config_hash", "seed", "version", "wall_time_s", "verdicts"):
        assert key in man
    assert main(["rerun", "--manifest", str(out / f"{command}.manifest.json")]) == EXIT_OK
    again = _manifest(out / "rerun", command)
    assert again["outputs"] == man["outputs"]
    man.pop("wall_time_s"), again.pop("wall_time_s")
    assert again == man


def test_out_dir_from_environment(tmp_path, monkeypatch):
    monkeypatch.setenv("RAMSEY_AFFINE_OUT", str(tmp_path / "env"))
    assert main(["validate", "--config", cfg("zero_vol")]) == EXIT_OK
    assert (tmp_path / "env" / "validation.json").exists()


def test_curve_csv_columns(tmp_path):
    assert main(["curve", "--config", cfg("zero_vol"), "--tenors", "1,10", "--out", str(tmp_path)]) == EXIT_OK
    lines = (tmp_path / "curve.csv").read_text().splitlines()
    assert lines[0] == "tenor,bond_price,zero_rate,vol_norm"
    assert len(lines) == 3


def test_seed_changes_simulation_outputs(tmp_path):
    base = ["simulate", "--config", cfg("vasicek"), "--sim", cfg("sim"), "--paths", "256"]
    main(base + ["--seed", "1", "--out", str(tmp_path / "a")])
    main(base + ["--seed", "2", "--out", str(tmp_path / "b")])
    assert _manifest(tmp_path / "a", "simulate")["outputs"] != _manifest(tmp_path / "b", "simulate")["outputs"]


def test_missing_config_is_config_error(tmp_path):
    assert main(["curve", "--config", str(tmp_path / "none.json"), "--out", str(tmp_path)]) == EXIT_CONFIG


def test_malformed_config_is_config_error(tmp_path):
    p = tmp_path / "bad.json"
    p.write_text("{not json")
    assert main(["curve", "--config", str(p), "--out", str(tmp_path)]) == EXIT_CONFIG
    p.write_text(json.dumps({"dim": 1}))
    assert main(["curve", "--config", str(p), "--out", str(tmp_path)]) == EXIT_CONFIG


def test_invalid_model_is_config_error(tmp_path):
    d = spec_to_dict(cir())
    d["eigen_intercepts"] = [-1.0]
    p = tmp_path / "m.json"
    p.write_text(json.dumps(d))
    assert main(["validate", "--config", str(p), "--out", str(tmp_path)]) == EXIT_CONFIG
    assert json.loads((tmp_path / "validation.json").read_text())["ok"] is False
    assert main(["curve", "--config", str(p), "--out", str(tmp_path)]) == EXIT_CONFIG


def test_bad_sim_settings_are_config_error(tmp_path):
    p = tmp_path / "sim.json"
    p.write_text(json.dumps({"n_paths": 100, "step": 0.3, "horizon": 1.0}))
    assert main(["simulate", "--config", cfg("vasicek"), "--sim", str(p), "--out", str(tmp_path)]) == EXIT_CONFIG


def test_riccati_blowup_exit_code(tmp_path):
    p = tmp_path / "m.json"
    p.write_text(json.dumps(spec_to_dict(cir(premium=5.0))))
    code = main(["backward-power", "--config", str(p), "--theta", "0.05", "--horizon", "20", "--out", str(tmp_path)])
    assert code == EXIT_BLOWUP


def test_failed_verification_exit_code(tmp_path):
    code = main(["backward-power", "--config", cfg("backward_two_factor_perp"), "--verify", "--paths", "2000",
                 "--step", "0.01", "--pathwise-paths", "64", "--out", str(tmp_path)])
    assert code == EXIT_VERIFY
    assert _manifest(tmp_path, "backward-power")["verdicts"]["orthogonal_identity"] == "fail"


def test_tampered_manifest_fails_reproduction(tmp_path):
    out = tmp_path / "run"
    main(COMMANDS["curve"] + ["--out", str(out)])
    path = out / "curve.manifest.json"
    man = json.loads(path.read_text())
    man["outputs"][0]["sha256"] = "0" * 64
    path.write_text(json.dumps(man))
    assert main(["rerun", "--manifest", str(path)]) == EXIT_VERIFY


def test_console_entry_point(tmp_path):
    r = subprocess.run([sys.executable, "-m", "ramsey_affine.cli", "validate", "--config", cfg("cir"),
                        "--out", str(tmp_path)], capture_output=True, text=True)
    assert r.returncode == 0
    assert "spec valid" in r.stdout
