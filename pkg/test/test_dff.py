"""
Tests for the deep feature fusion block and channel attention.
"""

import sys
import os
sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

import numpy as np
import pytest

from semfusion.dff import (
    AttentionMode,
    DffConfig,
    DffParams,
    channel_attention,
    dff_branches,
    dff_forward,
)
from semfusion.errors import DimensionError
from semfusion.tensor import Tensor


def _params(seed=0, attention=AttentionMode.MULTI_SCALE):
    config = DffConfig(in_channels=3, out_channels=5, block_channels=4, attention=attention)
    return DffParams.init(config, np.random.default_rng(seed))


def _input(seed=0, batch=2, height=6, width=8):
    return Tensor(np.random.default_rng(seed).normal(size=(batch, 3, height, width)))


def test_output_shape_keeps_spatial_size():
    out = dff_forward(_input(), _params(), training=True)
    assert out.shape == (2, 5, 6, 8)
    long_branch, short_branch = dff_branches(_input(), _params(), training=False)
    assert long_branch.shape == short_branch.shape == (2, 5, 6, 8)


def test_channel_attention_at_zero_beta_is_identity():
    f = Tensor(np.random.default_rng(1).normal(scale=3.0, size=(1, 6, 4, 4)))
    out = channel_attention(f, Tensor(np.array(0.0)))
    assert np.array_equal(out.data, f.data)


def test_channel_attention_mixes_channels():
    x = np.random.default_rng(2).normal(size=(3, 4))
    f = Tensor(x.reshape(1, 3, 2, 2))
    out = channel_attention(f, Tensor(np.array(0.5))).data.reshape(3, 4)
    gram = x @ x.T
    weights = np.exp(gram - gram.max(axis=1, keepdims=True))
    weights /= weights.sum(axis=1, keepdims=True)
    assert np.allclose(out, 0.5 * weights @ x + x, rtol=0, atol=1e-12)


def test_channel_attention_needs_single_map():
    with pytest.raises(DimensionError):
        channel_attention(Tensor(np.ones((2, 3, 2, 2))), Tensor(np.array(0.0)))


def test_attention_modes_agree_at_zero_beta():
    x = _input(3)
    outputs = [dff_forward(x, _params(4, mode), training=False).data for mode in AttentionMode]
    assert np.array_equal(outputs[0], outputs[1])
    assert np.array_equal(outputs[0], outputs[2])


def test_attention_modes_differ_once_beta_moves():
    x = _input(5)
    one_scale = _params(6, AttentionMode.ONE_SCALE)
    multi_scale = _params(6, AttentionMode.MULTI_SCALE)
    one_scale.beta.data = np.array(0.7)
    multi_scale.beta.data = np.array(0.7)
    a = dff_forward(x, one_scale, training=False).data
    b = dff_forward(x, multi_scale, training=False).data
    assert not np.allclose(a, b)


def test_batch_items_attend_independently():
    params = _params(7)
    params.beta.data = np.array(0.4)
    x = _input(8, batch=2)
    both = dff_forward(x, params, training=False).data
    first = dff_forward(Tensor(x.data[:1]), params, training=False).data
    assert np.allclose(both[:1], first, rtol=0, atol=1e-12)


def test_rejects_odd_or_mismatched_input():
    with pytest.raises(DimensionError):
        dff_forward(_input(height=5), _params())
    with pytest.raises(DimensionError):
        dff_forward(Tensor(np.ones((1, 4, 4, 4))), _params())
    with pytest.raises(DimensionError):
        dff_forward(Tensor(np.ones((3, 4, 4))), _params())


def _impulse(size=32, channels=3):
    x = np.zeros((1, channels, size, size))
    x[0, 0, size // 2, size // 2] = 1.0
    return Tensor(x)


def _footprint(f):
    return np.any(f.data[0] != 0.0, axis=0)


def test_long_branch_reaches_wider_than_short():
    for down_kernel in (3, 5):
        config = DffConfig(in_channels=3, out_channels=5, block_channels=4, down_kernel=down_kernel)
        params = DffParams.init(config, np.random.default_rng(11))
        # positive weights keep every reachable cell nonzero through the relus
        for unit in params._units():
            unit.weight.data = np.abs(unit.weight.data) + 0.01
        long_branch, short_branch = dff_branches(_impulse(), params, training=False)
        wide, narrow = _footprint(long_branch), _footprint(short_branch)
        assert narrow.any()
        assert np.all(wide[narrow])
        assert wide.sum() > narrow.sum()
    # six 3x3 convs around the centre
    rows, cols = np.nonzero(narrow)
    assert rows.min() == 16 - 6 and rows.max() == 16 + 6 and cols.min() == 16 - 6


def test_zero_convolutions_give_zero_output():
    for mode in AttentionMode:
        params = _params(12, mode)
        for unit in params._units():
            unit.weight.data = np.zeros_like(unit.weight.data)
        params.beta.data = np.array(0.9)
        for training in (False, True):
            out = dff_forward(_input(13), params, training=training)
            assert out.shape == (2, 5, 6, 8)
            assert np.all(out.data == 0.0)


def test_state_arrays_reload():
    source = _params(9)
    source.beta.data = np.array(0.25)
    dff_forward(_input(10), source, training=True)
    target = _params(11)
    target.load_state_arrays(iter(source.state_arrays()))
    assert float(target.beta.data) == 0.25
    x = _input(12)
    assert np.array_equal(dff_forward(x, source, training=False).data,
                          dff_forward(x, target, training=False).data)
    with pytest.raises(DimensionError):
        target.load_state_arrays(iter(source.state_arrays()[:-1] + [np.ones(2)]))


if __name__ == "__main__":
    print("=" * 60)
    print("DEEP FEATURE FUSION TESTS")
    print("=" * 60)
    for name, test in list(globals().items()):
        if name.startswith("test_") and callable(test):
            test()
            print(f"PASS {name}")
