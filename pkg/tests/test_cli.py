import csv
import json

import numpy as np
import pytest

from mcfbc import metrics
from mcfbc.cli import main
from mcfbc.colorspace import ImageTensor, read_image, rgb_to_ycbcr, quantize

TINY = {"epochs": 2, "lr0": 0.002, "lr_floor": 0.0001, "batch_size": 4,
        "backbone": {"blocks": 2, "channels": [4, 6], "input_size": 16},
        "fbc": {"k": 8}}


@pytest.fixture
def cfg_file(tmp_path):
    p = tmp_path / "cfg.json"
    p.write_text(json.dumps(TINY))
    return p


def test_train_eval_round_trip(toy_dir, cfg_file, tmp_path, capsys):
    out = tmp_path / "run"
    assert main(["train", "--config", str(cfg_file), "--data", str(toy_dir), "--out", str(out)]) == 0
    log = [json.loads(l) for l in (out / "train_log.jsonl").read_text().splitlines()]
    assert [e["epoch"] for e in log] == [0, 1]
    assert {"epoch", "lr", "loss", "train_acc", "valid_acer"} <= set(log[0])

    ev = tmp_path / "ev"
    assert main(["eval", "--ckpt", str(out / "model.fbc"), "--data", str(toy_dir / "manifest.csv"),
                 "--split", "test", "--out", str(ev)]) == 0
    rep = json.loads((ev / "report.json").read_text())
    assert rep["acer"] == (rep["apcer"] + rep["bpcer"]) / 2
    with open(ev / "scores.csv") as fh:
        assert next(csv.reader(fh)) == ["id", "label", "score"]
    _, labels, scores = metrics.read_scores(ev / "scores.csv")
    again = metrics.report(scores, labels, threshold=rep["threshold"])
    assert all(again[k] == rep[k] for k in again)

    out2 = tmp_path / "run2"
    main(["train", "--config", str(cfg_file), "--data", str(toy_dir), "--out", str(out2)])
    assert (out2 / "train_log.jsonl").read_bytes() == (out / "train_log.jsonl").read_bytes()

    assert main(["eval", "--ckpt", str(out / "model.fbc"), "--data", str(toy_dir), "--split", "valid",
                 "--out", str(ev), "--threshold", "eer"]) == 0
    assert json.loads((ev / "report.json").read_text())["threshold_provenance"] == "eer-derived"


def test_unknown_config_key_exit_2(toy_dir, tmp_path):
    p = tmp_path / "bad.json"
    p.write_text(json.dumps(dict(TINY, warmup=5)))
    assert main(["train", "--config", str(p), "--data", str(toy_dir), "--out", str(tmp_path / "o")]) == 2


def test_size_mismatch_exit_2(toy_dir, tmp_path):
    p = tmp_path / "c.json"
    p.write_text(json.dumps({"epochs": 1}))  # default backbone expects 32x32
    assert main(["train", "--config", str(p), "--data", str(toy_dir), "--out", str(tmp_path / "o")]) == 2


def test_data_errors_exit_3(cfg_file, tmp_path):
    assert main(["train", "--config", str(cfg_file), "--data", str(tmp_path / "none.csv"),
                 "--out", str(tmp_path / "o")]) == 3
    assert main(["eval", "--ckpt", str(tmp_path / "none.fbc"), "--data", str(tmp_path),
                 "--out", str(tmp_path / "o")]) == 3


def test_numeric_failure_exit_4(toy_dir, tmp_path):
    p = tmp_path / "hot.json"
    p.write_text(json.dumps(dict(TINY, lr0=1e30, epochs=3)))
    assert main(["train", "--config", str(p), "--data", str(toy_dir), "--out", str(tmp_path / "o")]) == 4


def test_gradcheck_cli(capsys):
    assert main(["gradcheck", "--seed", "0", "--size", "tiny", "--json"]) == 0
    res = json.loads(capsys.readouterr().out)
    assert res["passed"] and "skipped_coordinates" in res
    assert main(["gradcheck", "--size", "tiny", "--corrupt-backward"]) == 1


def test_oracle_cli(capsys):
    assert main(["oracle"]) == 0
    first = capsys.readouterr().out
    assert main(["oracle"]) == 0
    assert [l.split()[:2] for l in capsys.readouterr().out.splitlines()] == \
        [l.split()[:2] for l in first.splitlines()]
    assert main(["oracle", "--json"]) == 0
    res = json.loads(capsys.readouterr().out)
    assert [r["name"] for r in res] == ["scalar_lasso", "bridge_scalar", "bilinear_pool", "eer_sweep"]


def test_color_cli(toy_dir, tmp_path):
    src = next(toy_dir.glob("attack/*.png"))
    dst = tmp_path / "y.png"
    assert main(["color", "--from", "RGB", "--to", "YCbCr", str(src), str(dst)]) == 0
    want = quantize(rgb_to_ycbcr(read_image(src)).data)
    assert np.array_equal(quantize(read_image(dst).data), want)
    assert main(["color", "--from", "RGB", "--to", "RGB", str(src), str(dst)]) == 2
    assert main(["color", "--from", "RGB", "--to", "Lab", str(src), str(dst)]) == 2


def test_synth_split_train_pipeline(tmp_path, cfg_file, capsys):
    ds = tmp_path / "ds"
    assert main(["synth", "--seed", "2", "--n", "10", "--size", "16", str(ds)]) == 0
    assert json.loads(capsys.readouterr().out)["counts"] == {"train": 12, "valid": 4, "test": 4}
    # wipe the split column, then re-split
    rows = (ds / "manifest.csv").read_text().splitlines()
    blank = [rows[0]] + [",".join(r.split(",")[:2] + ["", r.split(",")[3]]) for r in rows[1:]]
    (ds / "manifest.csv").write_text("\n".join(blank) + "\n")
    assert main(["split", "--ratio", "3:1:1", "--seed", "2", str(ds / "manifest.csv")]) == 0
    assert json.loads(capsys.readouterr().out)["counts"] == {"train": 12, "valid": 4, "test": 4}
    assert main(["train", "--config", str(cfg_file), "--data", str(ds), "--out", str(tmp_path / "r")]) == 0
    assert main(["split", "--ratio", "3:1", str(ds / "manifest.csv")]) == 2


def test_threads_env(monkeypatch, capsys):
    monkeypatch.setenv("FBC_THREADS", "x")
    assert main(["oracle"]) == 2
    monkeypatch.setenv("FBC_THREADS", "1")
    assert main(["oracle"]) == 0
