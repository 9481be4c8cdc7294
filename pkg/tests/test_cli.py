import json

import pytest

from trajsynth.cli import main


def run_cli(capsys, *argv):
    code = main(list(argv))
    captured = capsys.readouterr()
    return code, captured.out, captured.err


def test_gen_data_and_train_and_eval(tmp_path, capsys):
    data = tmp_path / "expert.jsonl"
    code, out, _ = run_cli(
        capsys, "gen-data", "--env", "pointgoal", "--tier", "expert", "--episodes", "6",
        "--seed", "0", "--out", str(data),
    )
    assert code == 0
    assert json.loads(out)["episodes"] == 6
    assert data.exists()

    bank = tmp_path / "bank.atrd"
    code, out, _ = run_cli(
        capsys, "train-diffuser", "--data", str(data), "--out", str(bank), "--lengths", "5,10",
        "--steps", "40", "--batch", "16", "--hidden", "24", "--n-steps", "20", "--seed", "1",
    )
    assert code == 0
    assert json.loads(out)["presets"] == [5, 10]
    assert bank.read_bytes()[:4] == b"ATRD"

    code, out, _ = run_cli(
        capsys, "eval-diffuser", "--bank", str(bank), "--n", "12", "--seed", "2",
    )
    assert code == 0
    report = json.loads(out)
    assert report["n"] == 12
    assert report["first_state_exact_rate"] == 1.0
    assert 1 <= report["min_length"] <= report["max_length"] <= 10


def test_run_and_plot(tmp_path, capsys):
    cfg = {
        "env": {"name": "pointgoal"},
        "seeds": [0],
        "mode": "online",
        "rho": 0.0,
        "total_steps": 400,
        "eval_every": 200,
        "eval_episodes": 2,
        "agent": {"hidden": [8]},
        "output_dir": str(tmp_path / "run"),
    }
    cfg_path = tmp_path / "cfg.json"
    cfg_path.write_text(json.dumps(cfg))
    code, out, _ = run_cli(capsys, "run", "--config", str(cfg_path))
    assert code == 0
    result = json.loads(out)
    assert result["seeds_completed"] == [0]

    png = tmp_path / "curves.png"
    code, out, _ = run_cli(capsys, "plot", "--csv", result["aggregate_csv"], "--out", str(png))
    assert code == 0
    assert png.exists()


def test_error_is_machine_readable_json(tmp_path, capsys):
    missing = tmp_path / "nope.json"
    code, out, err = run_cli(capsys, "run", "--config", str(missing))
    assert code != 0
    payload = json.loads(err)
    assert "error" in payload and "type" in payload


def test_bad_config_key_fails_fast(tmp_path, capsys):
    cfg_path = tmp_path / "bad.json"
    cfg_path.write_text(json.dumps({"env": {"name": "pointgoal"}, "seeds": [0], "tpyo": 1}))
    code, _, err = run_cli(capsys, "run", "--config", str(cfg_path))
    assert code == 1
    assert json.loads(err)["type"] == "ValueError"
