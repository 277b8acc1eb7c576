"""Exit codes and end-to-end command pipeline."""
import os

import numpy as np
import pytest

from sunet.cli import main
from sunet.graph import NetworkGraph
from sunet.io import read_pgm


def run(capsys, *argv):
    rc = main(list(argv))
    out = capsys.readouterr()
    return rc, out.out, out.err


def test_no_command_exits_1(capsys):
    rc, _, _ = run(capsys)
    assert rc == 1


def test_unknown_flag_exits_1(capsys):
    rc, _, err = run(capsys, "analyze", "--preset", "sunet64", "--frobnicate")
    assert rc == 1


def test_unknown_preset_exits_1(capsys):
    rc, _, _ = run(capsys, "analyze", "--preset", "sunet999")
    assert rc == 1


def test_missing_graph_file_exits_2(capsys):
    rc, _, err = run(capsys, "analyze", "--graph", "/no/such/file.graph")
    assert rc == 2
    assert "no such graph file" in err


def test_bad_config_exits_1(capsys):
    rc, _, err = run(capsys, "analyze", "--toy", "0", "--input-hw", "64")
    assert rc == 1
    assert "error:" in err


def test_analyze_report(capsys):
    rc, out, _ = run(capsys, "analyze", "--preset", "sunet64",
                     "--input-hw", "224")
    assert rc == 0
    assert "params total: 6894504" in out
    assert "params ≈ 6.9M" in out
    assert "trace: 112 56 56 28 28 14 14 7 7 1" in out
    assert "layers (conv+tconv+fc): 110" in out


def test_analyze_csv(tmp_path, capsys):
    path = str(tmp_path / "report.csv")
    rc, _, _ = run(capsys, "analyze", "--toy", "8", "--input-hw", "64",
                   "--csv", path)
    assert rc == 0
    lines = open(path).read().strip().split("\n")
    assert lines[0] == "node,kind,out_c,out_h,out_w,params,rf_h,rf_w,jump_h,jump_w"
    assert len(lines) > 100


def test_build_round_trip(tmp_path, capsys):
    path = str(tmp_path / "g.graph")
    rc, out, _ = run(capsys, "build", "--toy", "8", "--input-hw", "64",
                     "--out", path)
    assert rc == 0
    text = open(path).read()
    g = NetworkGraph.parse(text)
    assert g.serialize() == text
    assert g.digest[:12] in out


def test_convert_degridding_layout(tmp_path, capsys):
    path = str(tmp_path / "seg.graph")
    rc, _, _ = run(capsys, "convert", "--preset", "sunet7_128",
                   "--input-hw", "513", "--output-stride", "8",
                   "--degridding", "--classes", "21", "--out", path)
    assert rc == 0
    g = NetworkGraph.parse(open(path).read())
    d1, d2 = g.by_name["deg1.conv"].attrs, g.by_name["deg2.conv"].attrs
    assert d1["d"] == (2, 2) and d1["cout"] == 512
    assert d2["d"] == (1, 1) and d2["cout"] == 512
    assert g.by_name["cls.conv"].attrs["cout"] == 21
    assert g.meta["output_stride"] == "8"


def test_convert_to_stdout(capsys):
    rc, out, _ = run(capsys, "convert", "--toy", "8", "--input-hw", "64")
    assert rc == 0
    assert NetworkGraph.parse(out).meta["kind"] == "segmentation"


def test_gen_data_deterministic(tmp_path, capsys):
    a, b = str(tmp_path / "a"), str(tmp_path / "b")
    for d in (a, b):
        rc, out, _ = run(capsys, "gen-data", "--out", d, "--count", "5",
                         "--canvas", "32", "--seed", "11")
        assert rc == 0
        assert "wrote 5 pairs" in out
    def snapshot(root):
        out = {}
        for base, _, files in os.walk(root):
            for f in files:
                p = os.path.join(base, f)
                out[os.path.relpath(p, root)] = open(p, "rb").read()
        return out

    assert snapshot(a) == snapshot(b)
    rc, _, _ = run(capsys, "gen-data", "--out", str(tmp_path / "c"),
                   "--count", "5", "--canvas", "32", "--seed", "12")
    assert rc == 0
    assert snapshot(a) != snapshot(str(tmp_path / "c"))


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    """gen-data -> build -> convert -> train, shared by the e2e tests."""
    root = tmp_path_factory.mktemp("pipe")
    data = str(root / "data")
    clf = str(root / "clf.graph")
    seg = str(root / "seg.graph")
    out = str(root / "run")
    assert main(["gen-data", "--out", data, "--count", "6",
                 "--canvas", "64", "--classes", "3", "--seed", "5"]) == 0
    assert main(["build", "--toy", "8", "--input-hw", "64",
                 "--out", clf]) == 0
    assert main(["convert", "--graph", clf, "--classes", "3",
                 "--output-stride", "16", "--out", seg]) == 0
    assert main(["train", "--graph", seg,
                 "--data", os.path.join(data, "manifest.json"),
                 "--out", out, "--iters", "3", "--batch-size", "2",
                 "--no-augment", "--seed", "1"]) == 0
    return {"root": root, "data": data, "clf": clf, "seg": seg, "out": out,
            "ckpt": os.path.join(out, "checkpoint.sunc"),
            "manifest": os.path.join(data, "manifest.json")}


def test_train_outputs(pipeline, capsys):
    capsys.readouterr()
    assert os.path.exists(pipeline["ckpt"])
    lines = open(os.path.join(pipeline["out"], "loss.csv")).read().strip()
    assert lines.split("\n")[0] == "iter,lr,loss"
    assert len(lines.split("\n")) == 4


def test_eval_prints_miou(pipeline, tmp_path, capsys):
    csv = str(tmp_path / "m.csv")
    rc, out, _ = run(capsys, "eval", "--graph", pipeline["seg"],
                     "--checkpoint", pipeline["ckpt"],
                     "--data", pipeline["manifest"],
                     "--scales", "1.0", "--csv", csv)
    assert rc == 0
    assert "mIoU:" in out
    rows = open(csv).read().strip().split("\n")
    assert rows[0] == "class,iou"
    assert rows[-1].startswith("miou,")
    float(rows[-1].split(",")[1])


def test_eval_multi_scale_flip(pipeline, capsys):
    rc, out, _ = run(capsys, "eval", "--graph", pipeline["seg"],
                     "--checkpoint", pipeline["ckpt"],
                     "--data", pipeline["manifest"],
                     "--scales", "0.5,1.0", "--flip")
    assert rc == 0
    assert "mIoU:" in out


def test_infer_writes_predictions(pipeline, tmp_path, capsys):
    out_dir = str(tmp_path / "pred")
    rc, out, _ = run(capsys, "infer", "--graph", pipeline["seg"],
                     "--checkpoint", pipeline["ckpt"],
                     "--data", pipeline["manifest"], "--out", out_dir)
    assert rc == 0
    files = sorted(os.listdir(out_dir))
    assert files == [f"pred_{i:05d}.pgm" for i in range(6)]
    pred = read_pgm(os.path.join(out_dir, files[0]))
    assert pred.shape == (64, 64)
    assert pred.max() < 3


def test_dump_activations_levels(pipeline, tmp_path, capsys):
    out_dir = str(tmp_path / "acts")
    rc, out, _ = run(capsys, "dump-activations", "--graph", pipeline["seg"],
                     "--checkpoint", pipeline["ckpt"],
                     "--data", pipeline["manifest"], "--index", "0",
                     "--out", out_dir)
    assert rc == 0
    files = os.listdir(out_dir)
    assert any(f.startswith("level") and f.endswith(".pgm") for f in files)
    assert "prediction.pgm" in files


def test_dump_activations_bad_index(pipeline, capsys):
    rc, _, err = run(capsys, "dump-activations", "--graph", pipeline["seg"],
                     "--data", pipeline["manifest"], "--index", "99",
                     "--out", "/tmp/unused")
    assert rc == 1
    assert "index 99" in err


def test_eval_checkpoint_digest_mismatch(pipeline, capsys):
    rc, _, err = run(capsys, "eval", "--graph", pipeline["clf"],
                     "--checkpoint", pipeline["ckpt"],
                     "--data", pipeline["manifest"])
    assert rc == 1
    assert "bound to graph" in err


def test_data_root_env(pipeline, monkeypatch, capsys):
    monkeypatch.setenv("SUNET_DATA_ROOT", pipeline["data"])
    rc, out, _ = run(capsys, "eval", "--graph", pipeline["seg"],
                     "--checkpoint", pipeline["ckpt"])
    assert rc == 0
    assert "mIoU:" in out


def test_data_root_unset(pipeline, monkeypatch, capsys):
    monkeypatch.delenv("SUNET_DATA_ROOT", raising=False)
    rc, _, err = run(capsys, "eval", "--graph", pipeline["seg"],
                     "--checkpoint", pipeline["ckpt"])
    assert rc == 1
    assert "SUNET_DATA_ROOT" in err


def test_missing_data_manifest_exits_2(pipeline, capsys):
    rc, _, _ = run(capsys, "eval", "--graph", pipeline["seg"],
                   "--checkpoint", pipeline["ckpt"],
                   "--data", "/no/such/manifest.json")
    assert rc == 2
