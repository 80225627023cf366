import json
import subprocess
import sys

import numpy as np
import pytest

from drape.cli import EXIT_NUMERIC, EXIT_OK, EXIT_USER, main
from drape.mesh import load_obj
from drape.nodes import NodeSet
from drape.runtime import FlatModel
from drape.scenes import make_test_scene

TINY_NET = ["--nodes", "8", "--pose-width", "16", "--pose-layers", "2", "--node-width", "8", "--node-layers", "2"]


@pytest.fixture(scope="module")
def model_path(tmp_path_factory):
    out = tmp_path_factory.mktemp("cli") / "m.ndrp"
    assert main(["train", "--epochs", "0", "--held-out", "0", "--out", str(out), *TINY_NET]) == EXIT_OK
    return out


@pytest.fixture(scope="module")
def trained_path(tmp_path_factory):
    out = tmp_path_factory.mktemp("cli") / "t.ndrp"
    assert main(["train", "--epochs", "3", "--batch", "2", "--held-out", "2", "--out", str(out), *TINY_NET]) == 0
    return out


def test_sample_nodes_defaults_and_determinism(tmp_path):
    a, b = tmp_path / "a.json", tmp_path / "b.json"
    assert main(["sample-nodes", "--out", str(a)]) == EXIT_OK
    assert main(["sample-nodes", "--out", str(b)]) == EXIT_OK
    assert a.read_bytes() == b.read_bytes()
    assert NodeSet.load(a).m == 128
    assert main(["sample-nodes", "--nodes", "1", "--out", str(a)]) == EXIT_OK
    assert NodeSet.load(a).m == 1


def test_sample_nodes_json_output(tmp_path, capsys):
    assert main(["sample-nodes", "--nodes", "4", "--json", "--out", str(tmp_path / "n.json")]) == EXIT_OK
    doc = json.loads(capsys.readouterr().out)
    assert doc["m"] == 4 and doc["n"] == make_test_scene("capsule-arm-sleeve")[0].n_vertices


def test_zero_epoch_checkpoint_and_sidecar(model_path):
    flat = FlatModel.load(model_path)
    assert flat.m == 8
    side = json.loads(model_path.with_suffix(".ndrp.json").read_text())
    assert side["config"]["epochs"] == 0
    assert side["loss_curve"] == []
    assert side["dims"]["pose_hidden"] == [16, 16]
    assert "material" in side and side["scene"] == "capsule-arm-sleeve"


def test_training_sidecar_records_evaluation(trained_path):
    side = json.loads(trained_path.with_suffix(".ndrp.json").read_text())
    assert len(side["loss_curve"]) == 3
    assert set(side["evaluation"]) >= {"loss", "eps_e", "eps_a", "eps_c"}
    assert side["baseline"]["loss"] > 0


def test_supervised_training_reads_a_dataset(tmp_path):
    data = tmp_path / "d.qsds"
    assert main(["oracle", "--count", "2", "--steps", "3", "--nodes", "8", "--out", str(data)]) == EXIT_OK
    out = tmp_path / "s.ndrp"
    assert main(["train", "--mode", "supervised", "--dataset", str(data), "--epochs", "2", "--out", str(out),
                 *TINY_NET]) == EXIT_OK
    side = json.loads(out.with_suffix(".ndrp.json").read_text())
    assert side["config"]["mode"] == "supervised"
    assert main(["train", "--mode", "supervised", "--epochs", "1", "--out", str(out), *TINY_NET]) == EXIT_USER


def test_infer_zero_pose_gives_canonical_garment(tmp_path, model_path):
    pose = tmp_path / "pose.json"
    pose.write_text(json.dumps([0.0] * 6))
    out = tmp_path / "zero.obj"
    assert main(["infer", "--model", str(model_path), "--pose", str(pose), "--out", str(out)]) == EXIT_OK
    garment, _ = make_test_scene("capsule-arm-sleeve")
    assert np.abs(load_obj(out).vertices - garment.vertices).max() < 1e-6


def test_infer_sequence_and_repeatability(tmp_path, trained_path):
    seq = tmp_path / "seq.json"
    poses = np.random.default_rng(0).uniform(-0.5, 0.5, (100, 6))
    seq.write_text(json.dumps(poses.tolist()))
    frames = tmp_path / "frames"
    assert main(["infer", "--model", str(trained_path), "--pose-seq", str(seq), "--out", str(frames)]) == EXIT_OK
    files = sorted(frames.glob("*.obj"))
    assert len(files) == 100
    pose = tmp_path / "p.json"
    pose.write_text(json.dumps(poses[7].tolist()))
    a, b = tmp_path / "a.obj", tmp_path / "b.obj"
    for out in (a, b):
        assert main(["drape", "--model", str(trained_path), "--pose", str(pose), "--out", str(out)]) == EXIT_OK
    assert a.read_bytes() == b.read_bytes()


def test_bench_writes_json(tmp_path, model_path, capsys):
    out = tmp_path / "bench.json"
    assert main(["bench", "--model", str(model_path), "--iters", "1000", "--out", str(out)]) == EXIT_OK
    report = json.loads(out.read_text())
    (rep,) = report.values()
    assert rep["iterations"] == 1000
    assert {"stages_us", "mlp_us", "total_us", "fps_mlp", "hardware"} <= set(rep)
    assert "median us" in capsys.readouterr().out


def test_metrics_table(trained_path, capsys):
    assert main(["metrics", "--model", str(trained_path), "--poses", "3"]) == EXIT_OK
    lines = capsys.readouterr().out.strip().splitlines()
    assert lines[0].split() == ["method", "eps_e", "eps_a", "eps_c"]
    assert [ln.split()[0] for ln in lines[2:]] == ["model", "lbs"]


def test_user_errors_exit_with_one(tmp_path, model_path, capsys):
    assert main(["sample-nodes", "--nodes", "0", "--out", str(tmp_path / "x.json")]) == EXIT_USER
    assert main(["sample-nodes", "--scene", "nope", "--out", str(tmp_path / "x.json")]) == EXIT_USER
    assert main(["infer", "--model", str(tmp_path / "missing.ndrp"), "--pose", "p", "--out", "o"]) == EXIT_USER
    (tmp_path / "bad.json").write_text("[1, 2]")
    assert main(["infer", "--model", str(model_path), "--pose", str(tmp_path / "bad.json"),
                 "--out", str(tmp_path / "o.obj")]) == EXIT_USER
    assert main(["bench", "--model", str(model_path), "--iters", "10"]) == EXIT_USER
    with pytest.raises(SystemExit) as err:
        main(["train"])
    assert err.value.code == EXIT_USER
    assert "error" in capsys.readouterr().err


def test_numeric_failure_exits_with_two(tmp_path, capsys):
    material = tmp_path / "mat.json"
    material.write_text(json.dumps({"mu": 1e308, "lambda_lame": 1e308}))
    code = main(["oracle", "--count", "1", "--steps", "2", "--nodes", "8", "--material", str(material),
                 "--out", str(tmp_path / "d.qsds")])
    assert code == EXIT_NUMERIC
    err = capsys.readouterr().err
    assert "numeric failure" in err and "pose" in err


def test_console_entry_point_runs():
    proc = subprocess.run([sys.executable, "-m", "drape.cli", "config"], capture_output=True, text=True, check=True)
    doc = json.loads(proc.stdout)
    assert doc["material"]["mu"] == 20.0 and doc["training"]["epochs"] == 2000
