"""
Tests for the on-disk formats: clouds, semantic maps, parameter containers
and confusion matrices.
"""

import sys
import os
sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

import struct
import tempfile
from pathlib import Path

import numpy as np
import pytest

from semfusion import formats
from semfusion.aaf import AafConfig, AafParams
from semfusion.dff import DffConfig, DffParams
from semfusion.errors import FormatError
from semfusion.geometry import PointCloud


def test_cloud_layout_and_rewrite():
    rng = np.random.default_rng(0)
    cloud = PointCloud(rng.normal(size=(5, 3)), rng.uniform(size=5))
    blob = formats.encode_cloud(cloud)
    assert len(blob) == 5 * 16
    x, y, z, intensity = struct.unpack("<4f", blob[:16])
    assert x == pytest.approx(cloud.points[0, 0], rel=1e-6)
    assert intensity == pytest.approx(cloud.intensity[0], rel=1e-6)
    assert formats.encode_cloud(formats.decode_cloud(blob)) == blob


def test_cloud_rejects_partial_records():
    with pytest.raises(FormatError):
        formats.decode_cloud(b"\x00" * 20)
    assert len(formats.decode_cloud(b"")) == 0


def test_sem_header_and_rewrite():
    scores = np.random.default_rng(1).dirichlet(np.ones(3), size=(4, 6))
    blob = formats.encode_sem(scores)
    assert blob[:4] == b"SEM2"
    assert struct.unpack("<3I", blob[4:16]) == (4, 6, 3)
    decoded = formats.decode_sem(blob)
    assert decoded.shape == (4, 6, 3)
    assert np.allclose(decoded, scores, atol=1e-7)
    assert formats.encode_sem(decoded) == blob


def test_sem_errors():
    with pytest.raises(FormatError):
        formats.decode_sem(b"SEM1" + b"\x00" * 12)
    blob = formats.encode_sem(np.ones((2, 2, 1)))
    with pytest.raises(FormatError):
        formats.decode_sem(blob[:-4])
    with pytest.raises(FormatError):
        formats.encode_sem(np.ones((2, 2)))


def test_parameter_containers_rewrite_byte_identical():
    rng = np.random.default_rng(2)
    aaf = AafParams.init(AafConfig(num_classes=3, local_channels=4, global_channels=5,
                                   attention_hidden=3, zero_attention=False), rng)
    dff = DffParams.init(DffConfig(in_channels=2, out_channels=3, block_channels=4), rng)
    head = [rng.normal(size=(4, 2)), rng.normal(size=2), np.array(1.5)]
    with tempfile.TemporaryDirectory() as tmp:
        for magic, arrays in ((formats.AAF_MAGIC, aaf.state_arrays()),
                              (formats.DFF_MAGIC, dff.state_arrays()),
                              (formats.HEAD_MAGIC, head)):
            path = Path(tmp) / "params.bin"
            formats.write_tensors(path, magic, arrays)
            loaded = formats.read_tensors(path, magic)
            assert len(loaded) == len(arrays)
            for a, b in zip(arrays, loaded):
                assert np.array_equal(np.asarray(a), b)
            again = Path(tmp) / "again.bin"
            formats.write_tensors(again, magic, loaded)
            assert again.read_bytes() == path.read_bytes()


def test_scalar_tensor_has_rank_zero():
    blob = formats.encode_tensors(b"DFF1", [np.array(0.25)])
    assert struct.unpack("<I", blob[4:8]) == (0,)
    assert struct.unpack("<d", blob[8:16]) == (0.25,)
    assert formats.decode_tensors(blob, b"DFF1")[0].shape == ()


def test_tensor_container_errors():
    blob = formats.encode_tensors(b"AAF1", [np.ones((2, 3))])
    with pytest.raises(FormatError):
        formats.decode_tensors(blob, b"DFF1")
    with pytest.raises(FormatError):
        formats.decode_tensors(blob[:-8], b"AAF1")
    with pytest.raises(FormatError):
        formats.decode_tensors(blob[:10], b"AAF1")
    with pytest.raises(FormatError):
        formats.encode_tensors(b"AAF", [])


def test_parse_confusion():
    text = "# car/truck swap\n1 0 0\n0 0.7 0.3  # car\n\n0 0.3 0.7\n"
    assert formats.parse_confusion(text) == ((1.0, 0.0, 0.0), (0.0, 0.7, 0.3), (0.0, 0.3, 0.7))
    with pytest.raises(FormatError) as info:
        formats.parse_confusion("1 0\n0 x\n")
    assert "line 2" in str(info.value)
    with pytest.raises(FormatError):
        formats.parse_confusion("1 0 0\n0 1 0\n")
    with pytest.raises(FormatError):
        formats.parse_confusion("# nothing\n")


def test_read_confusion_file():
    with tempfile.TemporaryDirectory() as tmp:
        path = Path(tmp) / "confusion.txt"
        path.write_text("0.9 0.1\n0.2 0.8\n", encoding="utf-8")
        assert formats.read_confusion(path) == ((0.9, 0.1), (0.2, 0.8))


if __name__ == "__main__":
    print("=" * 60)
    print("FORMAT TESTS")
    print("=" * 60)
    for name, test in list(globals().items()):
        if name.startswith("test_") and callable(test):
            test()
            print(f"PASS {name}")
