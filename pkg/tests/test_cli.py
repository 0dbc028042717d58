import hashlib
import json
import os
import subprocess
import sys

import numpy as np
import pytest

from edgestereo import cli
from edgestereo.codecs import pfm_read, read_rgb, write_rgb

from test_training import TINY

PHASES = [{"id": 1, "iterations": 3, "lr": 1e-3}, {"id": 2, "iterations": 4, "lr": 1e-3},
          {"id": 3, "iterations": 4, "lr": 5e-4}]


def digest(directory):
    return {p.name: hashlib.sha256(p.read_bytes()).hexdigest() for p in sorted(directory.iterdir())}


@pytest.fixture(scope="module")
def config(tmp_path_factory):
    path = tmp_path_factory.mktemp("cfg") / "run.json"
    path.write_text(json.dumps({
        "seed": 0, "model": TINY, "training": {"phases": PHASES},
        "data": {"n_samples": 6, "holdout": 2, "height": 16, "width": 32, "d_max": 4},
    }))
    return path


@pytest.fixture(scope="module")
def trained(config, tmp_path_factory):
    out = tmp_path_factory.mktemp("run")
    assert cli.main(["train", "--config", str(config), "--out", str(out),
                     "--checkpoint-every", "2"]) == 0
    return out


def test_gen_data_writes_samples_and_manifest(tmp_path, capsys):
    assert cli.main(["gen-data", "--out", str(tmp_path / "a"), "--n", "4", "--seed", "7"]) == 0
    manifest = json.loads((tmp_path / "a" / "manifest.json").read_text())
    assert len(manifest["samples"]) == 4
    assert len(list((tmp_path / "a").glob("*_disp.pfm"))) == 4
    assert cli.main(["gen-data", "--out", str(tmp_path / "b"), "--n", "4", "--seed", "7"]) == 0
    assert digest(tmp_path / "a") == digest(tmp_path / "b")


def test_gen_data_unwritable_directory(tmp_path, capsys):
    blocker = tmp_path / "file"
    blocker.write_text("")
    assert cli.main(["gen-data", "--out", str(blocker / "sub"), "--n", "1"]) != 0
    assert "error" in capsys.readouterr().err


def test_train_writes_log_and_checkpoints(trained):
    names = {p.name for p in trained.iterdir()}
    assert {"model.ckpt", "loss_log.csv", "config.json", "eval.txt",
            "phase1.ckpt", "phase2.ckpt", "phase3.ckpt", "phase2_iter000002.ckpt"} <= names
    rows = (trained / "loss_log.csv").read_text().splitlines()
    assert rows[0] == "phase,iteration,loss" and len(rows) == 1 + 3 + 4 + 4


def test_train_is_deterministic_and_resumable(config, trained, tmp_path):
    again = tmp_path / "again"
    assert cli.main(["train", "--config", str(config), "--out", str(again)]) == 0
    assert (again / "loss_log.csv").read_bytes() == (trained / "loss_log.csv").read_bytes()
    resumed = tmp_path / "resumed"
    assert cli.main(["train", "--config", str(config), "--out", str(resumed),
                     "--resume", str(trained / "phase2_iter000002.ckpt")]) == 0
    assert (resumed / "loss_log.csv").read_bytes() == (trained / "loss_log.csv").read_bytes()
    assert (resumed / "model.ckpt").read_bytes() == (trained / "model.ckpt").read_bytes()


def test_infer_keeps_input_extents_and_writes_error_map(trained, tmp_path, rng):
    data = tmp_path / "data"
    assert cli.main(["gen-data", "--out", str(data), "--n", "2", "--height", "20",
                     "--width", "40", "--d-max", "4"]) == 0
    out = tmp_path / "pred"
    code = cli.main(["infer", "--checkpoint", str(trained / "model.ckpt"),
                     "--left", str(data / "00000_left.png"), "--right", str(data / "00000_right.png"),
                     "--gt", str(data / "00000_disp.pfm"), "--gt-valid", str(data / "00000_valid.png"),
                     "--out", str(out)])
    assert code == 0
    assert pfm_read(out / "00000_disp.pfm").shape == (20, 40)
    assert read_rgb(out / "00000_error.png").shape == (3, 20, 40)
    assert (out / "00000_edges.png").exists()


def test_error_colormap_saturates_above_three_pixels():
    rgb = cli.error_colormap(np.array([[0.0, 1.5, 3.0, 10.0, np.nan]]))
    assert rgb[:, 0, 0].tolist() == [0, 0, 1]
    assert np.array_equal(rgb[:, 0, 2], rgb[:, 0, 3])
    assert rgb[:, 0, 3].tolist() == [1, 0, 0]
    assert not rgb[:, 0, 4].any()


def test_eval_of_ground_truth_is_perfect(tmp_path, capsys):
    data = tmp_path / "data"
    cli.main(["gen-data", "--out", str(data), "--n", "3", "--height", "16", "--width", "32",
              "--d-max", "4"])
    pred = tmp_path / "pred"
    pred.mkdir()
    for i in range(3):
        (pred / f"{i:05d}.pfm").write_bytes((data / f"{i:05d}_disp.pfm").read_bytes())
    capsys.readouterr()
    assert cli.main(["eval", "--pred", str(pred), "--gt", str(data)]) == 0
    text = capsys.readouterr().out
    assert "epe: 0.000" in text and "bad_3: 0.0%" in text


def test_dataset_inference_then_eval(trained, tmp_path, capsys):
    data = tmp_path / "data"
    cli.main(["gen-data", "--out", str(data), "--n", "2", "--height", "16", "--width", "32",
              "--d-max", "4"])
    assert cli.main(["infer", "--checkpoint", str(trained / "model.ckpt"), "--dataset", str(data),
                     "--out", str(tmp_path / "p")]) == 0
    capsys.readouterr()
    assert cli.main(["eval", "--pred", str(tmp_path / "p"), "--gt", str(data)]) == 0
    assert "valid_count" in capsys.readouterr().out


def test_infer_rejects_mismatched_pair(trained, tmp_path):
    write_rgb(tmp_path / "l.png", np.zeros((3, 16, 32)))
    write_rgb(tmp_path / "r.png", np.zeros((3, 16, 16)))
    assert cli.main(["infer", "--checkpoint", str(trained / "model.ckpt"), "--left",
                     str(tmp_path / "l.png"), "--right", str(tmp_path / "r.png"),
                     "--out", str(tmp_path)]) != 0


def test_resume_with_other_architecture_fails(trained, tmp_path):
    other = tmp_path / "other.json"
    other.write_text(json.dumps({"model": {**TINY, "mixed_channels": 12}}))
    assert cli.main(["train", "--config", str(other), "--out", str(tmp_path / "o"),
                     "--resume", str(trained / "phase1.ckpt")]) != 0


def test_unknown_config_key_is_rejected(tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"modle": {}}))
    assert cli.main(["train", "--config", str(bad), "--out", str(tmp_path)]) != 0


def test_gradcheck_subset_passes(capsys):
    assert cli.main(["gradcheck", "--names", "conv2d,warp_right_to_left"]) == 0
    out = capsys.readouterr().out
    assert out.count("PASS") == 2


def test_gradcheck_names_failing_operator(monkeypatch, capsys):
    from edgestereo import gradcheck
    monkeypatch.setattr(gradcheck, "TOLERANCE", 0.0)
    assert cli.main(["gradcheck", "--names", "relu", "--instances", "1"]) == 1
    assert "relu" in capsys.readouterr().err


def test_module_entry_point_and_thread_cap():
    env = dict(os.environ, EDGESTEREO_NUM_THREADS="1")
    proc = subprocess.run([sys.executable, "-m", "edgestereo", "gradcheck", "--names", "relu",
                           "--instances", "1"], capture_output=True, text=True, env=env)
    assert proc.returncode == 0 and "relu" in proc.stdout
