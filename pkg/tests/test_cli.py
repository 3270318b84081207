import json
import subprocess
import sys

import pytest

from laminar.cli import main


def run(capsys, *argv):
    code = main(list(argv))
    out = capsys.readouterr()
    return code, out.out, out.err


def test_train_blobs2_defaults(tmp_path, capsys):
    code, out, _ = run(capsys, "train", "--output-dir", str(tmp_path))
    assert code == 0
    row = (tmp_path / "metrics.csv").read_text().splitlines()
    header, last = row[0].split(","), row[-1].split(",")
    acc = float(last[header.index("accuracy")])
    assert acc >= 0.97
    assert "accuracy" in out
    for name in ("recorder.csv", "metrics.txt", "config.json", "model.zip"):
        assert (tmp_path / name).exists()


def test_same_seed_same_recorder(tmp_path, capsys):
    for d in ("a", "b"):
        assert run(capsys, "train", "--epochs", "2", "--output-dir", str(tmp_path / d))[0] == 0
    assert (tmp_path / "a/recorder.csv").read_bytes() == (tmp_path / "b/recorder.csv").read_bytes()


def test_missing_dataset_exits_3(tmp_path, capsys):
    code, _, err = run(capsys, "train", "--dataset", "nope", "--output-dir", str(tmp_path))
    assert code == 3 and "UnknownDataset" in err


def test_config_errors_exit_2(tmp_path, capsys):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"dataset": "blobs2", "learning_rate": 0.1}))
    code, _, err = run(capsys, "train", str(cfg))
    assert code == 2 and "learning_rate" in err
    assert run(capsys, "train", "--epochs", "0", "--output-dir", str(tmp_path))[0] == 2
    cfg.write_text("{not json")
    assert run(capsys, "train", str(cfg))[0] == 2


def test_config_file_is_read(tmp_path, capsys):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"dataset": "moons", "epochs": 1, "output_dir": str(tmp_path / "o")}))
    assert run(capsys, "train", str(cfg))[0] == 0
    assert json.loads((tmp_path / "o/config.json").read_text())["dataset"] == "moons"


def test_predict_class0_centroid(tmp_path, capsys):
    assert run(capsys, "train", "--output-dir", str(tmp_path))[0] == 0
    item = tmp_path / "item.json"
    item.write_text(json.dumps({"x0": "-2.0", "x1": "0.0"}))
    code, out, _ = run(capsys, "predict", str(tmp_path / "model.zip"), str(item))
    assert code == 0 and out.split("\t")[0] == "0"
    csv = tmp_path / "items.csv"
    csv.write_text("x0,x1\n-2,0\n2,0\n")
    _, out, _ = run(capsys, "predict", str(tmp_path / "model.zip"), str(csv))
    assert [line.split("\t")[0] for line in out.splitlines()] == ["0", "1"]


def test_predict_bad_archive_exits_3(tmp_path, capsys):
    bad = tmp_path / "bad.zip"
    bad.write_bytes(b"not a zip")
    item = tmp_path / "i.json"
    item.write_text("{}")
    code, _, err = run(capsys, "predict", str(bad), str(item))
    assert code == 3 and "ArchiveError" in err


def test_lr_find_band(tmp_path, capsys):
    code, out, _ = run(capsys, "lr-find", "--output-dir", str(tmp_path))
    assert code == 0
    suggestion = float(out.split(":")[1])
    assert 1e-3 <= suggestion <= 1.0
    assert (tmp_path / "lr_find.csv").read_text().startswith("lr,smooth_loss")


def test_show_batch_rows(tmp_path, capsys):
    code, out, _ = run(capsys, "show-batch", "-n", "4", "--output-dir", str(tmp_path))
    assert code == 0
    lines = [l for l in out.splitlines() if l.strip()]
    assert len(lines) == 5  # header + 4 decoded rows


def test_export_info(tmp_path, capsys):
    run(capsys, "train", "--epochs", "1", "--output-dir", str(tmp_path))
    code, out, _ = run(capsys, "export-info", str(tmp_path / "model.zip"))
    info = json.loads(out)
    assert code == 0 and info["format_version"] == 1 and info["loss"] == "cross_entropy"


def test_console_entry_point(tmp_path):
    r = subprocess.run([sys.executable, "-m", "laminar.cli", "train", "--dataset", "nope",
                        "--output-dir", str(tmp_path)], capture_output=True, text=True)
    assert r.returncode == 3
