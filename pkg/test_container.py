#!/usr/bin/env python3
"""Tests for the UVT1 tensor container."""

import struct

import numpy as np
import pytest

from engine import container
from engine.errors import ContainerError


def sample_tensors():
    rng = np.random.default_rng(0)
    return {
        "texture": rng.random((4, 4, 3)).astype(np.float32),
        "triangles": np.arange(12, dtype=np.int64).reshape(4, 3),
        "mask": np.eye(3, dtype=bool),
        "scalar": np.float32(2.5),
    }


def test_layout_of_a_single_record():
    data = container.encode({"ab": np.array([1, 2], dtype=np.int32)})
    expected = (b"UVT1" + struct.pack("<I", 1) + struct.pack("<I", 2) + b"ab"
                + struct.pack("<II", 1, 2) + struct.pack("<B", 2) + struct.pack("<ii", 1, 2))
    assert data == expected


def test_dtypes_are_canonicalized(tmp_path):
    path = tmp_path / "t.uvt"
    container.save(path, sample_tensors())
    loaded = container.load(path)
    assert list(loaded) == ["texture", "triangles", "mask", "scalar"]
    assert loaded["texture"].dtype == np.float32
    assert loaded["triangles"].dtype == np.int32
    assert loaded["mask"].dtype == np.uint8
    assert loaded["scalar"].shape == ()
    assert np.array_equal(loaded["triangles"], sample_tensors()["triangles"])
    assert not (tmp_path / "t.uvt.tmp").exists()


def test_scalar_record_keeps_rank_zero():
    data = container.encode({"s": np.float32(3.0)})
    expected = (b"UVT1" + struct.pack("<I", 1) + struct.pack("<I", 1) + b"s"
                + struct.pack("<I", 0) + struct.pack("<B", 1) + struct.pack("<f", 3.0))
    assert data == expected
    loaded = container.decode(data)["s"]
    assert loaded.shape == ()
    assert loaded == np.float32(3.0)


def test_float64_is_stored_as_float32():
    value = np.array([0.1, 1 / 3])
    loaded = container.decode(container.encode({"x": value}))["x"]
    assert np.array_equal(loaded, value.astype(np.float32))


def test_bad_magic_and_truncation():
    data = container.encode(sample_tensors())
    with pytest.raises(ContainerError, match="magic"):
        container.decode(b"NOPE" + data[4:])
    with pytest.raises(ContainerError):
        container.decode(data[:-3])
    with pytest.raises(ContainerError, match="trailing"):
        container.decode(data + b"\x00")


def test_unknown_dtype_tag():
    data = bytearray(container.encode({"a": np.zeros(1, dtype=np.float32)}))
    # tag sits right before the 4-byte payload
    data[-5] = 9
    with pytest.raises(ContainerError, match="dtype tag"):
        container.decode(bytes(data))


def test_unsupported_values():
    with pytest.raises(ContainerError, match="int32"):
        container.encode({"big": np.array([2**40])})
    with pytest.raises(ContainerError, match="dtype"):
        container.encode({"text": np.array(["a"])})


def test_missing_file_and_tensor(tmp_path):
    with pytest.raises(ContainerError, match="not found"):
        container.load(tmp_path / "absent.uvt")
    with pytest.raises(ContainerError, match="'weights'"):
        container.pick({}, "weights")


if __name__ == "__main__":
    raise SystemExit(pytest.main([__file__, "-v"]))
