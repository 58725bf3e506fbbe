"""
Tests for adaptive attention fusion.
"""

import sys
import os
sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from dataclasses import replace

import numpy as np
import pytest

from semfusion.aaf import (
    AafConfig,
    AafParams,
    CombineMode,
    aaf_forward,
    attention_scores,
    fuse_semantics,
    global_feature,
    local_features,
    voxel_semantics,
)
from semfusion.errors import DimensionError
from semfusion.geometry import PointCloud
from semfusion.semantics import PaintedPointCloud
from semfusion.tensor import Tensor, backward
from semfusion.voxelizer import VoxelConfig, voxelize

CLASSES = 3


def _grid(seed=0, points=80, capacity=8):
    rng = np.random.default_rng(seed)
    painted = PaintedPointCloud(
        cloud=PointCloud(rng.uniform(-2.0, 2.0, size=(points, 3))),
        sem2d=rng.dirichlet(np.ones(CLASSES), size=points),
        sem3d=rng.dirichlet(np.ones(CLASSES), size=points),
    )
    return voxelize(painted, VoxelConfig(
        range_min=(-2.0, -2.0, -2.0), range_max=(2.0, 2.0, 2.0),
        voxel_size=(1.0, 1.0, 4.0), points_per_voxel=capacity, seed=seed,
    ))


def _params(seed=0, zero_attention=False, combine=CombineMode.ADD):
    config = AafConfig(num_classes=CLASSES, local_channels=8, global_channels=12,
                       attention_hidden=6, combine=combine, zero_attention=zero_attention)
    return AafParams.init(config, np.random.default_rng(seed))


def test_weights_sum_to_one_and_stay_inside_unit_interval():
    out = aaf_forward(_grid(), _params())
    assert np.all(np.abs(out.weight_2d + out.weight_3d - 1.0) <= 1e-15)
    assert np.all((out.attention.data > 0.0) & (out.attention.data < 1.0))


def test_zero_attention_fuses_half_and_half():
    grid = _grid(1)
    out = aaf_forward(grid, _params(1, zero_attention=True))
    assert np.all(out.attention.data == 0.5)
    sem2d, sem3d = voxel_semantics(grid)
    assert np.allclose(out.fused.data, 0.5 * sem2d + 0.5 * sem3d, rtol=0, atol=1e-15)


def test_voxel_semantics_average_valid_rows():
    grid = _grid(2)
    sem2d, _ = voxel_semantics(grid)
    e = int(np.argmax(grid.valid_counts))
    n = grid.valid_counts[e]
    assert np.allclose(sem2d[e], grid.sem2d_rows[e, :n].mean(axis=0))
    assert np.allclose(sem2d.sum(axis=1), 1.0)


def test_stages_compose_into_forward():
    grid = _grid(6)
    params = _params(6)
    local = local_features(grid, params, training=False)
    assert local.shape == (grid.num_voxels, 8)
    global_feat = global_feature(local, params, training=False)
    assert global_feat.shape == (12,)
    assert np.array_equal(global_feat.data, params.mlp_g(local, training=False).data.max(axis=0))
    scores = attention_scores(local, global_feat, params, training=False)
    out = aaf_forward(grid, params, training=False)
    assert np.array_equal(local.data, out.local_feats.data)
    assert np.array_equal(scores.data, out.attention.data)
    assert np.array_equal(fuse_semantics(grid, scores).data, out.fused.data)


def test_fuse_semantics_extreme_scores():
    grid = _grid(7)
    sem2d, sem3d = voxel_semantics(grid)
    assert np.array_equal(fuse_semantics(grid, Tensor(np.ones(grid.num_voxels))).data, sem2d)
    assert np.array_equal(fuse_semantics(grid, Tensor(np.zeros(grid.num_voxels))).data, sem3d)
    both = fuse_semantics(grid, Tensor(np.ones(grid.num_voxels)), CombineMode.CONCAT).data
    assert np.array_equal(both[:, :CLASSES], sem2d)
    assert np.all(both[:, CLASSES:] == 0.0)


def test_combine_widths():
    grid = _grid(3)
    assert aaf_forward(grid, _params(3)).fused.shape == (grid.num_voxels, CLASSES)
    concat_out = aaf_forward(grid, _params(3, combine=CombineMode.CONCAT))
    assert concat_out.fused.shape == (grid.num_voxels, 2 * CLASSES)
    add_out = aaf_forward(grid, _params(3))
    halves = concat_out.fused.data[:, :CLASSES] + concat_out.fused.data[:, CLASSES:]
    assert np.allclose(halves, add_out.fused.data)


def test_voxel_order_permutation():
    grid = _grid(4)
    params = _params(4)
    perm = np.random.default_rng(5).permutation(grid.num_voxels)
    shuffled = replace(grid, coords=grid.coords[perm], features=grid.features[perm],
                       valid_counts=grid.valid_counts[perm], point_index=grid.point_index[perm])
    a = aaf_forward(grid, params, training=False)
    b = aaf_forward(shuffled, params, training=False)
    assert np.allclose(a.attention.data[perm], b.attention.data, rtol=0, atol=1e-12)
    assert np.allclose(a.fused.data[perm], b.fused.data, rtol=0, atol=1e-12)


def test_point_order_within_voxels():
    grid = _grid(6)
    params = _params(6)
    rng = np.random.default_rng(7)
    features = grid.features.copy()
    capacity = grid.points_per_voxel
    for e, n in enumerate(grid.valid_counts):
        valid = features[e, :n][rng.permutation(n)]
        features[e] = valid[np.arange(capacity) % n]
    shuffled = replace(grid, features=features)
    for training in (False, True):
        a = aaf_forward(grid, params, training=training)
        b = aaf_forward(shuffled, params, training=training)
        assert np.allclose(a.attention.data, b.attention.data, rtol=0, atol=1e-12)
        assert np.allclose(a.fused.data, b.fused.data, rtol=0, atol=1e-12)


def test_padding_rows_do_not_change_outputs():
    # few points so no voxel overflows either capacity
    small = _grid(8, points=8, capacity=4)
    large = _grid(8, points=8, capacity=16)
    assert np.array_equal(small.valid_counts, large.valid_counts)
    for training in (True, False):
        a = aaf_forward(small, _params(8), training=training)
        b = aaf_forward(large, _params(8), training=training)
        assert np.allclose(a.attention.data, b.attention.data, rtol=0, atol=1e-12)
        assert np.allclose(a.fused.data, b.fused.data, rtol=0, atol=1e-12)


def test_empty_grid_and_width_mismatch():
    grid = _grid(9)
    empty = replace(grid, coords=grid.coords[:0], features=grid.features[:0],
                    valid_counts=grid.valid_counts[:0], point_index=grid.point_index[:0])
    with pytest.raises(DimensionError):
        aaf_forward(empty, _params(9))
    wrong = AafParams.init(AafConfig(num_classes=4, local_channels=4, global_channels=4,
                                     attention_hidden=4), np.random.default_rng(0))
    with pytest.raises(DimensionError):
        aaf_forward(grid, wrong)


def _single_voxel_grid(points=5):
    rng = np.random.default_rng(12)
    xyz = np.column_stack([rng.uniform(0.1, 0.9, points), rng.uniform(0.1, 0.9, points),
                           rng.uniform(-1.0, 1.0, points)])
    painted = PaintedPointCloud(cloud=PointCloud(xyz),
                                sem2d=rng.dirichlet(np.ones(CLASSES), size=points),
                                sem3d=rng.dirichlet(np.ones(CLASSES), size=points))
    return voxelize(painted, VoxelConfig(
        range_min=(-2.0, -2.0, -2.0), range_max=(2.0, 2.0, 2.0),
        voxel_size=(1.0, 1.0, 4.0), points_per_voxel=8, seed=0,
    ))


def test_single_voxel_scene_trains():
    grid = _single_voxel_grid()
    assert grid.num_voxels == 1
    params = _params(12)
    local = local_features(grid, params, training=True)
    assert local.shape == (1, 8)
    a = global_feature(local, params, training=True)
    b = global_feature(local, params, training=False)
    assert np.array_equal(a.data, b.data)
    out = aaf_forward(grid, params, training=True)
    assert out.attention.shape == (1,)
    assert np.all(np.isfinite(out.fused.data))
    backward(out.fused.sum() * out.attention.sum())
    assert all(np.all(np.isfinite(p.grad)) for p in params.parameters() if p.grad is not None)


def test_state_arrays_reload():
    grid = _grid(10)
    source = _params(10)
    aaf_forward(grid, source, training=True)
    target = _params(11)
    target.load_state_arrays(iter(source.state_arrays()))
    a = aaf_forward(grid, source, training=False)
    b = aaf_forward(grid, target, training=False)
    assert np.array_equal(a.fused.data, b.fused.data)


if __name__ == "__main__":
    print("=" * 60)
    print("ATTENTION FUSION TESTS")
    print("=" * 60)
    for name, test in list(globals().items()):
        if name.startswith("test_") and callable(test):
            test()
            print(f"PASS {name}")
