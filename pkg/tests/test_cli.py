import json

import pytest

from rbfpde.cli import main


@pytest.fixture
def workspace(tmp_path):
    data = tmp_path / "data.json"
    model = tmp_path / "model.json"
    assert main(["generate", "--pde", "heat", "--n-interior", "10", "--n-boundary", "6", "--n-sequences", "3",
                 "--K", "6", "--resolution", "31", "--seed", "1", "--out", str(data)]) == 0
    assert main(["train", "--dataset", str(data), "--out", str(model), "--epochs", "2", "--linear", "true",
                 "--report", str(tmp_path / "report.csv"), "--seed", "2"]) == 0
    return tmp_path, data, model


def test_end_to_end(workspace, capsys):
    tmp, data, model = workspace
    assert (tmp / "report.csv").read_text().startswith("epoch,")
    assert main(["forecast", "--model", str(model), "--dataset", str(data), "--sequence", "1", "--steps", "3",
                 "--out", str(tmp / "traj.csv")]) == 0
    assert (tmp / "traj.csv").read_text().splitlines()[0] == "step,t,id,variable,value"
    capsys.readouterr()
    assert main(["evaluate", "--model", str(model), "--dataset", str(data), "--horizon", "4",
                 "--out-dir", str(tmp / "eval")]) == 0
    summary = json.loads(capsys.readouterr().out)
    assert summary["horizon"] == 4 and summary["n_sequences"] == 3
    assert main(["stability", "--model", str(model), "--dataset", str(data), "--dt", "0.01"]) == 0
    assert "spectral_radius" in json.loads(capsys.readouterr().out)


def test_config_file_with_flag_override(tmp_path):
    cfg = tmp_path / "gen.json"
    cfg.write_text(json.dumps({"pde": "heat", "n_interior": 6, "n_boundary": 4, "n_sequences": 1, "K": 3,
                               "resolution": 21, "out": str(tmp_path / "a.json")}))
    assert main(["generate", "--config", str(cfg), "--K", "2"]) == 0
    frames = json.loads((tmp_path / "a.json").read_text())["sequences"][0]["frames"]
    assert len(frames) == 3


def test_generate_and_train_are_deterministic(workspace, tmp_path):
    _, data, model = workspace
    data2, model2 = tmp_path / "data2.json", tmp_path / "model2.json"
    main(["generate", "--pde", "heat", "--n-interior", "10", "--n-boundary", "6", "--n-sequences", "3",
          "--K", "6", "--resolution", "31", "--seed", "1", "--out", str(data2)])
    main(["train", "--dataset", str(data2), "--out", str(model2), "--epochs", "2", "--linear", "true",
          "--seed", "2"])
    assert data.read_bytes() == data2.read_bytes()
    assert model.read_bytes() == model2.read_bytes()


def test_exit_codes(tmp_path):
    assert main(["selftest"]) == 0
    assert main(["train", "--dataset", str(tmp_path / "missing.json"), "--out", str(tmp_path / "m.json")]) == 2
    bad = tmp_path / "bad.json"
    bad.write_text("{}")
    assert main(["train", "--dataset", str(bad), "--out", str(tmp_path / "m.json")]) == 2
    assert main(["generate", "--pde", "heat", "--n-interior", "0", "--out", str(tmp_path / "x.json")]) == 2
    with pytest.raises(SystemExit) as exc:
        main(["nonsense"])
    assert exc.value.code == 2


def test_numerical_failure_exit_code(workspace):
    tmp, data, _ = workspace
    code = main(["train", "--dataset", str(data), "--out", str(tmp / "div.json"), "--epochs", "5",
                 "--lr", "50", "--h", "2", "--batch-size", "2"])
    assert code == 3
