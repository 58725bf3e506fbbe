"""
Tests for voxel labels, training, evaluation and checkpoints on a small
scene range so every strategy trains in seconds.
"""

import sys
import os
sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

import tempfile
from pathlib import Path

import numpy as np
import pytest

from semfusion.aaf import aaf_forward, voxel_semantics
from semfusion.dff import DffConfig
from semfusion.errors import DimensionError, FormatError
from semfusion.geometry import PointCloud
from semfusion.model import Strategy, bev_cells, bev_scatter_matrix
from semfusion.pipeline import (
    ExperimentConfig,
    TrainingConfig,
    build_model,
    class_weights,
    evaluate,
    experiment_samples,
    final_loss,
    load_checkpoint,
    prepare_scenes,
    save_checkpoint,
    train,
    voxel_labels,
)
from semfusion.semantics import PaintedPointCloud, Representation, one_hot
from semfusion.synth import CorruptionConfig, SceneParams, generate_samples, standard_corruption
from semfusion.voxelizer import VoxelConfig, voxelize

SMALL_SCENE = SceneParams(range_min=(0.0, -8.0, -2.0), range_max=(16.0, 8.0, 2.0),
                          min_boxes=1, max_boxes=2, image_width=64, image_height=24, focal=32.0)


def small_config(strategy=Strategy.AAF, representation=Representation.SCORE, steps=4):
    return ExperimentConfig(
        strategy=strategy,
        representation=representation,
        scene=SMALL_SCENE,
        corruption=standard_corruption(),
        points_per_voxel=4,
        local_channels=8,
        global_channels=8,
        attention_hidden=8,
        dff=DffConfig(in_channels=4, out_channels=4, block_channels=4),
        training=TrainingConfig(steps=steps, head_hidden=8),
        train_scenes=2,
        eval_scenes=2,
    )


# --- Labels and weights ---

def test_voxel_labels_take_dominant_class_ties_low():
    points = np.array([[0.5, 0.5, 0.0], [0.6, 0.5, 0.0], [2.5, 0.5, 0.0], [2.6, 0.5, 0.0], [2.7, 0.5, 0.0]])
    clean = np.array([2, 1, 3, 3, 0])
    sem = one_hot(clean, 4)
    grid = voxelize(PaintedPointCloud(PointCloud(points), sem, sem),
                    VoxelConfig(range_min=(0, 0, -1), range_max=(4, 4, 1), voxel_size=(1, 1, 2)))
    assert voxel_labels(grid, clean).tolist() == [1, 3]


def test_class_weights_inverse_frequency():
    weights = class_weights(np.array([0, 0, 0, 1]), 3)
    assert weights.tolist() == pytest.approx([4 / 6, 2.0, 0.0])
    assert class_weights(np.array([0, 1, 2]), 3).tolist() == [1.0, 1.0, 1.0]


def test_final_loss_averages_the_tail():
    assert final_loss([]) is None
    assert final_loss([5.0, 1.0]) == 1.0
    assert final_loss(list(range(20))) == pytest.approx(18.5)


def test_bev_scatter_averages_columns():
    points = np.array([[0.5, 0.5, -1.5], [0.5, 0.5, 1.5], [3.5, 1.5, 0.5]])
    sem = one_hot(np.zeros(3, dtype=np.int64), 2)
    grid = voxelize(PaintedPointCloud(PointCloud(points), sem, sem),
                    VoxelConfig(range_min=(0, 0, -2), range_max=(4, 2, 2), voxel_size=(1, 1, 1)))
    assert bev_cells(grid).tolist() == [0, 0, 7]
    matrix = bev_scatter_matrix(grid)
    assert matrix.shape == (8, 3)
    assert matrix[0].tolist() == [0.5, 0.5, 0.0]
    assert matrix[7].tolist() == [0.0, 0.0, 1.0]


# --- Configs ---

def test_seed_layout():
    cfg = small_config().with_seed(3)
    assert cfg.training.seed == 3 and cfg.data_seed == 3
    assert cfg.train_seeds == [30000, 30001]
    assert cfg.eval_seeds == [35000, 35001]
    assert cfg.voxel_config().seed == 3
    assert cfg.data_key() == small_config(Strategy.SEM2D_ONLY).with_seed(3).data_key()
    assert cfg.data_key() != small_config().data_key()


def test_aaf_dff_needs_even_bev_grid():
    odd = SMALL_SCENE.model_copy(update={"range_max": (15.0, 8.0, 2.0)})
    cfg = small_config(Strategy.AAF_DFF).model_copy(update={"scene": odd})
    with pytest.raises(DimensionError):
        build_model(cfg)
    # single-modality heads do not care
    build_model(cfg.model_copy(update={"strategy": Strategy.SEM2D_ONLY}))


# --- Training ---

def test_every_strategy_trains_and_predicts():
    train_samples, eval_samples = experiment_samples(small_config())
    for strategy in Strategy:
        result = train(small_config(strategy, steps=2), train_samples, eval_samples)
        assert len(result.losses) == 2 and all(np.isfinite(result.losses))
        report = result.report
        assert report.strategy == strategy.value and report.steps == 2
        assert 0.0 <= report.accuracy <= 1.0
        assert report.num_voxels == sum(len(s.labels) for s in prepare_scenes(eval_samples, small_config()))


def test_training_is_deterministic_and_checkpoints_reload():
    cfg = small_config(Strategy.AAF_DFF)
    train_samples, eval_samples = experiment_samples(cfg)
    first = train(cfg, train_samples, eval_samples)
    second = train(cfg, train_samples, eval_samples)
    assert first.losses == second.losses
    assert first.report.fingerprint() == second.report.fingerprint()

    with tempfile.TemporaryDirectory() as tmp:
        a = save_checkpoint(first.checkpoint, Path(tmp) / "a")
        b = save_checkpoint(second.checkpoint, Path(tmp) / "b")
        for name in ("config.json", "aaf.bin", "dff.bin", "head.bin"):
            assert (a / name).read_bytes() == (b / name).read_bytes(), name

        loaded = load_checkpoint(a)
        assert loaded.config == cfg
        report = evaluate(loaded, eval_samples)
        assert report.confusion == first.report.confusion
        assert report.accuracy == first.report.accuracy


def _signal_accuracy(scenes, source):
    """Accuracy of the argmax of one voxel-mean semantic source."""
    correct = total = 0
    for scene in scenes:
        sem = voxel_semantics(scene.grid)[source]
        correct += int(np.sum(np.argmax(sem, axis=1) == scene.labels))
        total += len(scene.labels)
    return correct / total


def test_clean_data_reaches_clean_accuracy():
    base = small_config(steps=500).model_copy(update={
        "corruption": CorruptionConfig(), "points_per_voxel": 64, "train_scenes": 4, "eval_scenes": 3,
        "training": TrainingConfig(steps=500, head_hidden=16),
    })
    train_samples, eval_samples = experiment_samples(base)
    scenes = prepare_scenes(eval_samples, base)
    signal = {Strategy.SEM2D_ONLY: _signal_accuracy(scenes, 0),
              Strategy.SEM3D_ONLY: _signal_accuracy(scenes, 1)}
    signal[Strategy.AAF] = max(signal.values())
    for strategy, ceiling in signal.items():
        cfg = base.model_copy(update={"strategy": strategy})
        report = train(cfg, train_samples, eval_samples).report
        assert report.accuracy >= min(0.99, ceiling - 0.01), (strategy, report.accuracy, ceiling)


def _conflict_voxels(scene):
    sem2d, sem3d = voxel_semantics(scene.grid)
    return (scene.labels == 0) & (np.argmax(sem2d, axis=1) != 0) & (np.argmax(sem3d, axis=1) == 0)


def test_attention_leans_on_3d_where_2d_bleeds():
    base = small_config(steps=300).model_copy(update={
        "corruption": CorruptionConfig(dilate_px=4), "train_scenes": 4, "eval_scenes": 4,
    })
    holding = 0
    for seed in range(5):
        cfg = base.with_seed(seed)
        train_samples, eval_samples = experiment_samples(cfg)
        model = train(cfg, train_samples, eval_samples).checkpoint.model
        scores = []
        for scene in prepare_scenes(eval_samples, cfg):
            conflict = _conflict_voxels(scene)
            if conflict.any():
                scores.append(aaf_forward(scene.grid, model.aaf, training=False).attention.data[conflict])
        assert scores, f"seed {seed} has no conflict voxels"
        holding += float(np.concatenate(scores).mean()) < 0.5
    assert holding >= 4


def test_single_modality_checkpoint_has_no_fusion_files():
    cfg = small_config(Strategy.SEM3D_ONLY, steps=2)
    samples, _ = experiment_samples(cfg)
    result = train(cfg, samples)
    with tempfile.TemporaryDirectory() as tmp:
        directory = save_checkpoint(result.checkpoint, tmp)
        assert sorted(p.name for p in directory.iterdir()) == ["config.json", "head.bin"]
        assert load_checkpoint(directory).model.aaf is None


def test_checkpoint_errors():
    with tempfile.TemporaryDirectory() as tmp:
        with pytest.raises(FormatError):
            load_checkpoint(tmp)
        cfg = small_config(Strategy.AAF, steps=1)
        directory = save_checkpoint(train(cfg, *experiment_samples(cfg)).checkpoint, Path(tmp) / "ckpt")
        head = (directory / "head.bin").read_bytes()
        (directory / "head.bin").write_bytes(head + head[4:])
        with pytest.raises(FormatError):
            load_checkpoint(directory)


def test_evaluate_rejects_class_mismatch():
    cfg = small_config(Strategy.SEM2D_ONLY, steps=1)
    checkpoint = train(cfg, *experiment_samples(cfg)).checkpoint
    three_class = generate_samples(SMALL_SCENE.model_copy(update={"num_classes": 3}),
                                   CorruptionConfig(), [0])
    with pytest.raises(DimensionError):
        evaluate(checkpoint, three_class)


if __name__ == "__main__":
    print("=" * 60)
    print("PIPELINE TESTS")
    print("=" * 60)
    for name, test in list(globals().items()):
        if name.startswith("test_") and callable(test):
            test()
            print(f"PASS {name}")
