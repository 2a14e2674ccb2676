import json

import numpy as np
import pytest

from empmp.checkpoint import load_checkpoint
from empmp.cli import main
from empmp.data import load_scenes
from empmp.metrics import mpjpe


@pytest.fixture
def data(tmp_path):
    assert main(["synth", "--n", "3", "--seed", "1", "--out", str(tmp_path / "data"), "--templates", "4"]) == 0
    return tmp_path / "data" / "manifest.txt"


def small_train(data, out, *extra):
    return main(["train", "--data", str(data), "--out", str(out), "--epochs", "2", "--batch-size", "3",
                 "--seed", "4", "--set", "model.N=2", "--set", "model.K=1", *extra])


def test_synth_is_deterministic(tmp_path):
    for d in ("a", "b"):
        assert main(["synth", "--n", "2", "--seed", "3", "--out", str(tmp_path / d), "--templates", "3"]) == 0
    for name in ("manifest.txt", "scene_00000.txt", "scene_00001.txt"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    assert main(["synth", "--n", "0", "--out", str(tmp_path / "e")]) == 0
    assert (tmp_path / "e" / "manifest.txt").read_text() == ""


def test_usage_errors_exit_2(tmp_path, capsys):
    assert main(["synth", "--bogus"]) == 2
    assert main([]) == 2
    assert main(["train", "--data", str(tmp_path / "none.txt"), "--out", str(tmp_path / "o")]) == 2
    assert main(["eval", "--data", str(tmp_path / "none.txt"), "--scheme", "cmu-1s", "--pred", "x"]) == 2
    out = tmp_path / "blocker"
    out.write_text("a file, not a directory")
    assert main(["synth", "--n", "1", "--out", str(out / "sub")]) == 2


def test_train_outputs_and_determinism(data, tmp_path):
    assert small_train(data, tmp_path / "r1") == 0
    assert small_train(data, tmp_path / "r2") == 0
    a, b = tmp_path / "r1", tmp_path / "r2"
    assert (a / "model.empm").read_bytes() == (b / "model.empm").read_bytes()
    assert (a / "loss.csv").read_text().splitlines()[0] == "epoch,joint_loss,velocity_loss,total"
    assert "epochs: 2" in (a / "config.yaml").read_text()


def test_zero_epochs_checkpoint_equals_init(data, tmp_path):
    from empmp.checkpoint import dumps
    from empmp.model import EmpmpModel, preset
    assert small_train(data, tmp_path / "z", "--epochs", "0") == 0
    ck = load_checkpoint(tmp_path / "z" / "model.empm")
    ref = EmpmpModel(preset("cmu-1s", N=2, K=1, seed=4))
    assert dumps(ck.model) == dumps(ref)


def test_resume_from_checkpoint(data, tmp_path):
    assert small_train(data, tmp_path / "full", "--checkpoint-every", "1") == 0
    assert small_train(data, tmp_path / "res", "--from-checkpoint", str(tmp_path / "full" / "epoch_00001.empm")) == 0
    assert (tmp_path / "full" / "model.empm").read_bytes() == (tmp_path / "res" / "model.empm").read_bytes()
    assert small_train(data, tmp_path / "bad", "--preset", "3dpw",
                       "--from-checkpoint", str(tmp_path / "full" / "epoch_00001.empm")) == 2


def test_nan_training_exits_3(data, tmp_path):
    # a learning rate this large overflows within a step or two
    assert small_train(data, tmp_path / "nan", "--lr", "1e300", "--epochs", "3") == 3


def test_eval_pred_equals_gt_is_zero(tmp_path):
    assert main(["synth", "--n", "2", "--seed", "1", "--out", str(tmp_path / "d"), "--frames", "15",
                 "--templates", "3"]) == 0
    m = str(tmp_path / "d" / "manifest.txt")
    assert main(["eval", "--data", m, "--pred", m, "--scheme", "cmu-1s", "--out", str(tmp_path / "ev")]) == 0
    doc = json.loads((tmp_path / "ev" / "metrics.json").read_text())
    assert all(v == 0.0 for v in doc["averages"].values())
    rows = (tmp_path / "ev" / "metrics.csv").read_text().splitlines()[1:]
    per = [float(r.split(",")[2]) for r in rows if r.startswith("jpe,") and ",avg," not in r]
    avg = [float(r.split(",")[2]) for r in rows if r.startswith("jpe,avg,")][0]
    assert abs(np.mean(per) - avg) <= 1e-9
    assert main(["eval", "--data", m, "--pred", m, "--scheme", "h36m"]) == 2


def test_eval_and_predict_from_checkpoint(data, tmp_path):
    assert small_train(data, tmp_path / "r") == 0
    ck = str(tmp_path / "r" / "model.empm")
    assert main(["eval", "--data", str(data), "--checkpoint", ck, "--scheme", "cmu-1s",
                 "--out", str(tmp_path / "ev")]) == 0
    assert (tmp_path / "ev" / "metrics.csv").exists()
    assert main(["predict", "--checkpoint", ck, "--data", str(data), "--out", str(tmp_path / "p"), "--csv"]) == 0
    head = (tmp_path / "p" / "scene_00000.txt").read_text().splitlines()[0]
    assert " F=15 " in head
    preds = load_scenes(tmp_path / "p" / "manifest.txt")
    assert len(preds) == 3 and preds[0].frames == 15
    csv_lines = (tmp_path / "p" / "trajectories.csv").read_text().splitlines()
    assert csv_lines[0] == "scene,person,frame,joint,x,y,z" and len(csv_lines) == 1 + 3 * 3 * 15 * 15


def test_predict_dimension_mismatch_names_fields(data, tmp_path, capsys):
    assert small_train(data, tmp_path / "r") == 0
    assert main(["synth", "--n", "1", "--out", str(tmp_path / "two"), "--persons", "2"]) == 0
    rc = main(["predict", "--checkpoint", str(tmp_path / "r" / "model.empm"),
               "--data", str(tmp_path / "two" / "manifest.txt"), "--out", str(tmp_path / "p")])
    assert rc == 2
    assert "P (model 3, data 2)" in capsys.readouterr().err


def test_profile(tmp_path, capsys):
    assert main(["profile", "--preset", "cmu-2s", "--runs", "3", "--out", str(tmp_path / "p.json")]) == 0
    out = capsys.readouterr().out
    assert "parameters 160590" in out and "total      12441600" in out
    doc = json.loads((tmp_path / "p.json").read_text())
    assert doc["macs_total"] == 12_441_600 and doc["latency_ms"] > 0
    assert main(["profile", "--preset", "3dpw", "--runs", "0"]) == 0
    assert "parameters 40034" in capsys.readouterr().out
