"""
Command-line tests: gen -> paint -> train -> eval on a couple of scenes,
plus argument errors and the gradient check command.
"""

import sys
import os
sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

import tempfile
from pathlib import Path

import orjson
import pandas as pd
import pytest
import typer
from typer.testing import CliRunner

from semfusion.cli import app, parse_box_range
from semfusion.formats import read_sem

runner = CliRunner()
CONFUSION_FILE = Path(__file__).resolve().parent.parent / "data" / "confusion_car_truck.txt"


def _env(tmp):
    return {"SEMFUSION_DUMP_DIR": str(Path(tmp) / "dump"), "SEMFUSION_PROGRESS": "false",
            "SEMFUSION_LOG_LEVEL": "WARNING"}


def test_parse_box_range():
    assert parse_box_range("2..5") == (2, 5)
    assert parse_box_range(" 3 .. 3 ") == (3, 3)
    with pytest.raises(typer.BadParameter):
        parse_box_range("5..2")
    with pytest.raises(typer.BadParameter):
        parse_box_range("two..five")


def test_gen_paint_train_eval():
    with tempfile.TemporaryDirectory() as tmp:
        env = _env(tmp)
        data = Path(tmp) / "scenes"
        result = runner.invoke(app, ["gen", "--out", str(data), "--scenes", "2", "--seed", "4",
                                     "--boxes", "1..2", "--dilate", "2", "--soft"], env=env)
        assert result.exit_code == 0, result.output
        assert sorted(p.name for p in data.iterdir()) == ["scene_000004", "scene_000005"]

        result = runner.invoke(app, ["paint", "--scene", str(data / "scene_000004")], env=env)
        assert result.exit_code == 0, result.output
        painted = read_sem(data / "scene_000004" / "sem2d_points.sem")
        assert painted.shape[1] == 1 and painted.shape[2] == 4

        ckpt = Path(tmp) / "ckpt"
        result = runner.invoke(app, ["train", "--data", str(data), "--strategy", "sem3d", "--repr", "id",
                                     "--steps", "3", "--out", str(ckpt)], env=env)
        assert result.exit_code == 0, result.output
        assert (ckpt / "config.json").exists() and (ckpt / "head.bin").exists()
        trained = orjson.loads((ckpt / "report.json").read_bytes())
        assert trained["strategy"] == "sem3d" and trained["representation"] == "id"

        csv = Path(tmp) / "out" / "eval.csv"
        result = runner.invoke(app, ["eval", "--ckpt", str(ckpt), "--data", str(data),
                                     "--report", str(csv)], env=env)
        assert result.exit_code == 0, result.output
        row = pd.read_csv(csv)
        assert row.columns.tolist() == ["strategy", "repr", "seed", "acc", "fg_acc", "fp_rate",
                                        "steps", "wall_ms"]
        assert row["strategy"].tolist() == ["sem3d"] and row["steps"].tolist() == [3]
        assert row["acc"].tolist() == pytest.approx([trained["accuracy"]])
        dumps = list((Path(tmp) / "dump").glob("eval_sem3d_id_*.json"))
        assert len(dumps) == 1


def test_gen_rejects_bad_inputs():
    with tempfile.TemporaryDirectory() as tmp:
        env = _env(tmp)
        result = runner.invoke(app, ["gen", "--out", tmp, "--boxes", "5..2"], env=env)
        assert result.exit_code == 2
        bad = Path(tmp) / "confusion.txt"
        bad.write_text("0.5 0.4\n0 1\n", encoding="utf-8")
        result = runner.invoke(app, ["gen", "--out", tmp, "--classes", "2", "--confusion", str(bad)], env=env)
        assert result.exit_code == 1
        assert "invalid configuration" in result.output


def test_gen_confusion_scope():
    with tempfile.TemporaryDirectory() as tmp:
        env = _env(tmp)
        for scope in ("object", "point"):
            out = Path(tmp) / scope
            result = runner.invoke(app, ["gen", "--out", str(out), "--scenes", "1", "--boxes", "1..2",
                                         "--confusion", str(CONFUSION_FILE),
                                         "--confusion-scope", scope], env=env)
            assert result.exit_code == 0, result.output
            assert (out / "scene_000000" / "sem3d.sem").exists()
        result = runner.invoke(app, ["gen", "--out", tmp, "--confusion-scope", "voxel"], env=env)
        assert result.exit_code == 2


def test_missing_checkpoint_is_reported():
    with tempfile.TemporaryDirectory() as tmp:
        result = runner.invoke(app, ["eval", "--ckpt", tmp, "--data", tmp], env=_env(tmp))
        assert result.exit_code == 1
        assert "error" in result.output


def test_gradcheck_command():
    result = runner.invoke(app, ["gradcheck", "--module", "mlp"], env={"SEMFUSION_LOG_LEVEL": "WARNING"})
    assert result.exit_code == 0, result.output
    assert "PASS" in result.output
    result = runner.invoke(app, ["gradcheck", "--module", "lstm"])
    assert result.exit_code == 2


if __name__ == "__main__":
    print("=" * 60)
    print("CLI TESTS")
    print("=" * 60)
    for name, test in list(globals().items()):
        if name.startswith("test_") and callable(test):
            test()
            print(f"PASS {name}")
