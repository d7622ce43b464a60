"""Tensor file format and checkpoint round-trips."""

from __future__ import annotations

import struct

import numpy as np
import pytest

from mammorisk import storage


def test_round_trip_f32_and_f64(tmp_path):
    rng = np.random.default_rng(0)
    for dtype in (np.float32, np.float64):
        for shape in [(), (5,), (3, 4), (2, 3, 4, 5)]:
            arr = rng.standard_normal(shape).astype(dtype)
            p = tmp_path / "t.vmrt"
            storage.write_tensor(p, arr)
            back = storage.read_tensor(p)
            assert back.dtype == dtype
            assert back.shape == arr.shape
            assert back.tobytes() == arr.tobytes()


def test_header_layout_is_exact(tmp_path):
    arr = np.array([[1.0, 2.0, 3.0]], dtype=np.float32)
    p = tmp_path / "t.vmrt"
    storage.write_tensor(p, arr)
    raw = p.read_bytes()
    assert raw[:4] == b"VMRT"
    assert raw[4] == 1          # version
    assert raw[5] == 0          # float32
    assert raw[6] == 2          # rank
    assert struct.unpack("<2I", raw[7:15]) == (1, 3)
    assert raw[15:] == arr.astype("<f4").tobytes()


def test_write_is_deterministic(tmp_path):
    arr = np.random.default_rng(1).standard_normal((4, 4))
    storage.write_tensor(tmp_path / "a.vmrt", arr)
    storage.write_tensor(tmp_path / "b.vmrt", arr)
    assert (tmp_path / "a.vmrt").read_bytes() == (tmp_path / "b.vmrt").read_bytes()


def test_corrupt_files_rejected(tmp_path):
    arr = np.zeros((2, 2), dtype=np.float64)
    p = tmp_path / "t.vmrt"
    storage.write_tensor(p, arr)
    raw = bytearray(p.read_bytes())

    bad_magic = tmp_path / "bad_magic.vmrt"
    bad_magic.write_bytes(b"XXXX" + bytes(raw[4:]))
    with pytest.raises(storage.TensorFormatError):
        storage.read_tensor(bad_magic)

    bad_version = tmp_path / "bad_version.vmrt"
    raw2 = bytearray(raw)
    raw2[4] = 9
    bad_version.write_bytes(bytes(raw2))
    with pytest.raises(storage.TensorFormatError):
        storage.read_tensor(bad_version)

    truncated = tmp_path / "trunc.vmrt"
    truncated.write_bytes(bytes(raw[:-8]))
    with pytest.raises(storage.TensorFormatError):
        storage.read_tensor(truncated)

    with pytest.raises(TypeError):
        storage.write_tensor(tmp_path / "int.vmrt", np.zeros(3, dtype=np.int64))


def test_checkpoint_round_trip(tmp_path):
    rng = np.random.default_rng(2)
    params = {
        "encoder/conv1/weight": rng.standard_normal((4, 1, 3, 3)).astype(np.float32),
        "head/bias": rng.standard_normal(5),
    }
    meta = {"epoch": 3, "split": {"train": ["s0"], "val": ["s1"], "test": ["s2"]}}
    storage.save_checkpoint(tmp_path / "ckpt", params, meta)
    loaded, got_meta = storage.load_checkpoint(tmp_path / "ckpt")
    assert set(loaded) == set(params)
    for k in params:
        assert loaded[k].tobytes() == params[k].tobytes()
        assert loaded[k].dtype == params[k].dtype
    assert got_meta == meta
