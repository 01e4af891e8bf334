import json

import pytest

from nrcvanet import cli


def _small_config(tmp_path):
    cfg = {
        "scenarios": [
            {"kind": "baseline", "seed": 1, "horizon_s": 900.0},
            {"kind": "incident", "seed": 2, "horizon_s": 1500.0, "start_s": 300.0, "duration_s": 900.0,
             "segment": "a_g10_g11", "lanes": [0, 1]},
        ],
        "target_rows": 10,
        "class_shares": {"Recurrent": 1, "Incident": 1},
    }
    p = tmp_path / "small.json"
    p.write_text(json.dumps(cfg))
    return p


def test_unknown_command_is_a_usage_error():
    with pytest.raises(SystemExit) as e:
        cli.main(["bogus"])
    assert e.value.code == 2


def test_bad_config_reports_a_config_error(tmp_path, capsys):
    p = tmp_path / "bad.json"
    p.write_text(json.dumps({"folds": 10, "unknown_knob": 3}))
    assert cli.main(["evaluate", "--config", str(p), "--out", str(tmp_path)]) == 1
    err = json.loads(capsys.readouterr().err.strip().splitlines()[-1])
    assert err["error"] == "config"


def test_missing_model_file_reports_an_input_error(tmp_path, capsys):
    code = cli.main(["detect", "--model-file", str(tmp_path / "none.json"), "--out", str(tmp_path)])
    assert code == 1
    assert json.loads(capsys.readouterr().err.strip().splitlines()[-1])["error"] == "input"


def test_evaluate_writes_accuracy_table(tmp_path, capsys):
    assert cli.main(["evaluate", "--config", "fixture", "--no-sensitivity", "--out", str(tmp_path)]) == 0
    lines = (tmp_path / "accuracy.csv").read_text().splitlines()
    assert lines[0] == "classifier,accuracy"
    assert [ln.split(",")[0] for ln in lines[1:]] == ["CT", "NB", "RF", "Boost"]
    out = json.loads(capsys.readouterr().out.strip().splitlines()[-1])
    assert all(0 <= v <= 1 for v in out["accuracy"].values())


def test_gen_dataset_is_reproducible_and_train_reads_it(tmp_path, capsys):
    cfg = _small_config(tmp_path)
    for name in ("a", "b"):
        assert cli.main(["gen-dataset", "--config", str(cfg), "--seed", "7", "--out", str(tmp_path / name)]) == 0
    for f in ("dataset.csv", "dataset_provenance.csv"):
        assert (tmp_path / "a" / f).read_text() == (tmp_path / "b" / f).read_text()
    assert len((tmp_path / "a" / "dataset.csv").read_text().splitlines()) == 11
    code = cli.main(["train", "--config", str(cfg), "--model", "ct", "--dataset", str(tmp_path / "a" / "dataset.csv"),
                     "--out", str(tmp_path)])
    assert code == 0
    assert (tmp_path / "model_ct.json").exists()


def test_out_directory_falls_back_to_environment(tmp_path, monkeypatch):
    monkeypatch.setenv(cli.OUT_ENV, str(tmp_path / "env"))
    monkeypatch.chdir(tmp_path)
    assert cli.main(["gen-network"]) == 0
    assert (tmp_path / "env" / "network.json").exists()
