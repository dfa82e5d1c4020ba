import json

import numpy as np
import pytest

from twogcn.cli import main
from twogcn.skeleton_io import DatasetManifest, read_canonical, read_feature_cache
from helpers import ntu_text, sbu_text


@pytest.fixture(scope="module")
def toy_env(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    data = root / "data"
    assert main(["toydata", "--seed", "9", "--out", str(data),
                 "--samples-per-class", "3"]) == 0
    return root, data / "manifest.json"


def test_toydata_and_manifest(toy_env):
    _, manifest_path = toy_env
    manifest = DatasetManifest.load(manifest_path)
    assert len(manifest.entries) == 12
    assert manifest.num_classes == 4


def test_info_runs(capsys):
    assert main(["info", "--config", "tiny"]) == 0
    out = capsys.readouterr().out
    assert "parameters:" in out and "flops" in out


def test_graph_export(tmp_path):
    target = tmp_path / "adj.json"
    assert main(["graph", "--strategy", "pairwise", "--export", str(target)]) == 0
    doc = json.loads(target.read_text())
    assert doc["V"] == 50 and doc["K"] == 3
    assert len(doc["matrices"]) == 3


def test_graph_geometric_needs_sample(tmp_path, toy_env):
    _, manifest_path = toy_env
    manifest = DatasetManifest.load(manifest_path)
    target = tmp_path / "geo.json"
    sample = manifest.entries[0].path
    assert main(["graph", "--strategy", "geometric", "--sample", sample,
                 "--frames", "8", "--export", str(target)]) == 0
    assert json.loads(target.read_text())["strategy"] == "geometric"


def test_train_eval_cycle(toy_env, tmp_path, capsys):
    _, manifest_path = toy_env
    run_dir = tmp_path / "run"
    config = tmp_path / "micro.json"
    config.write_text(json.dumps({
        "num_classes": 4, "mode": "mutual", "strategy": "physical", "frames": 8,
        "input_plan": [[6, 8], [8, 4]], "main_plan": [[16, 16]], "main_strides": [1],
    }))
    assert main(["train", "--config", str(config), "--train-split", str(manifest_path),
                 "--val-split", str(manifest_path), "--epochs", "2",
                 "--batch-size", "6", "--out", str(run_dir)]) == 0
    lines = [json.loads(l) for l in capsys.readouterr().out.strip().splitlines()]
    train_recs = [l for l in lines if l.get("split") == "train"]
    assert {r["epoch"] for r in train_recs} == {0, 1}
    assert all(set(r) == {"epoch", "split", "loss", "top1"} for r in train_recs)
    assert (run_dir / "best.ckpt").exists()

    assert main(["eval", "--config", str(config), "--checkpoint",
                 str(run_dir / "best.ckpt"), "--split", str(manifest_path)]) == 0
    report = json.loads(capsys.readouterr().out.strip().splitlines()[-1])
    assert report["count"] == 12 and 0.0 <= report["top1"] <= 1.0


def test_preprocess_cache(toy_env, tmp_path):
    _, manifest_path = toy_env
    cache = tmp_path / "cache"
    assert main(["preprocess", "--manifest", str(manifest_path), "--out", str(cache),
                 "--mode", "mutual", "--frames", "8", "--branches", "J,BM"]) == 0
    index = json.loads((cache / "index.json").read_text())
    assert len(index["records"]) == 12 * 2
    rec = index["records"][0]
    arr, tag, meta = read_feature_cache((cache / rec["path"]).read_bytes())
    assert tag == rec["branch"]
    assert arr.shape == (6, 8, 50)
    assert meta["label"] == rec["label"]


def test_ingest_ntu(tmp_path, capsys):
    joints = np.zeros((25, 3), dtype=np.float32)
    joints[0] = (0.25, 0.5, 1.0)
    raw = tmp_path / "S001C002P003R004A005.skeleton"
    raw.write_text(ntu_text([[(1, joints)], [(1, joints)]]))
    out = tmp_path / "canon"
    assert main(["ingest", str(raw), "--format", "ntu", "--out", str(out),
                 "--num-classes", "11"]) == 0
    manifest = DatasetManifest.load(out / "manifest.json")
    entry = manifest.entries[0]
    assert (entry.label, entry.subject_id, entry.camera_id, entry.setup_id) == (4, 3, 2, 1)
    seq = read_canonical((out / f"{entry.sample_id}.2pgc").read_bytes())
    assert seq.data.shape == (3, 2, 2, 25)
    assert seq.data[0, 0, 0, 0] == np.float32(0.25)


def test_ingest_sbu(tmp_path):
    rng = np.random.default_rng(2)
    data = rng.normal(size=(3, 4, 2, 15)).astype(np.float32)
    raw = tmp_path / "s01s02" / "03" / "001"
    raw.mkdir(parents=True)
    (raw / "skeleton_pos.txt").write_text(sbu_text(data))
    out = tmp_path / "canon"
    assert main(["ingest", str(raw / "skeleton_pos.txt"), "--format", "sbu",
                 "--out", str(out), "--num-classes", "8"]) == 0
    manifest = DatasetManifest.load(out / "manifest.json")
    assert manifest.entries[0].label == 2  # category folder "03"
    assert manifest.joint_count == 15


def test_gradcheck_subset(capsys):
    assert main(["gradcheck", "--cases", "sgc"]) == 0
    assert "PASS" in capsys.readouterr().out
