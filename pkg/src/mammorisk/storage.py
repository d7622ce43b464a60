"""Binary tensor files and directory-style checkpoints.

Tensor file layout (little-endian throughout):

    bytes 0-3   magic ``VMRT``
    byte  4     format version (1)
    byte  5     dtype code: 0 = float32, 1 = float64
    byte  6     rank
    then        rank * u32 dims
    then        raw row-major array data

A checkpoint is a directory of one ``.vmrt`` file per parameter plus a
``manifest.json`` describing every entry and carrying arbitrary metadata
(model config, split assignments, training state).
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

MAGIC = b"VMRT"
FORMAT_VERSION = 1

_DTYPE_CODES = {0: np.dtype("<f4"), 1: np.dtype("<f8")}
_CODE_FOR_DTYPE = {np.dtype(np.float32): 0, np.dtype(np.float64): 1}


class TensorFormatError(ValueError):
    """The bytes do not form a valid tensor file."""


def write_tensor(path: str | Path, arr: np.ndarray) -> None:
    arr = np.asarray(arr)
    if not arr.flags.c_contiguous:
        arr = np.ascontiguousarray(arr)
    code = _CODE_FOR_DTYPE.get(arr.dtype)
    if code is None:
        raise TypeError(f"only float32/float64 arrays can be stored, got {arr.dtype}")
    if arr.ndim > 255:
        raise TensorFormatError("rank exceeds format limit")
    header = MAGIC + struct.pack("<BBB", FORMAT_VERSION, code, arr.ndim)
    header += struct.pack(f"<{arr.ndim}I", *arr.shape)
    payload = arr.astype(_DTYPE_CODES[code], copy=False).tobytes(order="C")
    Path(path).write_bytes(header + payload)


def read_tensor(path: str | Path) -> np.ndarray:
    raw = Path(path).read_bytes()
    if len(raw) < 7:
        raise TensorFormatError(f"{path}: truncated header")
    if raw[:4] != MAGIC:
        raise TensorFormatError(f"{path}: bad magic {raw[:4]!r}")
    version, code, rank = struct.unpack("<BBB", raw[4:7])
    if version != FORMAT_VERSION:
        raise TensorFormatError(f"{path}: unsupported format version {version}")
    if code not in _DTYPE_CODES:
        raise TensorFormatError(f"{path}: unknown dtype code {code}")
    dim_end = 7 + 4 * rank
    if len(raw) < dim_end:
        raise TensorFormatError(f"{path}: truncated dims")
    dims = struct.unpack(f"<{rank}I", raw[7:dim_end])
    dtype = _DTYPE_CODES[code]
    expected = int(np.prod(dims, dtype=np.int64)) * dtype.itemsize
    if len(raw) - dim_end != expected:
        raise TensorFormatError(
            f"{path}: payload is {len(raw) - dim_end} bytes, expected {expected}")
    arr = np.frombuffer(raw[dim_end:], dtype=dtype).reshape(dims)
    # native byte order, writable copy (0-d shape preserved)
    return arr.astype(arr.dtype.newbyteorder("="), copy=True)


def save_checkpoint(ckpt_dir: str | Path, params: dict[str, np.ndarray],
                    meta: dict | None = None) -> None:
    ckpt_dir = Path(ckpt_dir)
    ckpt_dir.mkdir(parents=True, exist_ok=True)
    entries = {}
    for name in sorted(params):
        arr = np.asarray(params[name])
        fname = name.replace("/", "__") + ".vmrt"
        write_tensor(ckpt_dir / fname, arr)
        entries[name] = {
            "file": fname,
            "shape": list(arr.shape),
            "dtype": str(arr.dtype),
        }
    manifest = {"version": FORMAT_VERSION, "params": entries, "meta": meta or {}}
    (ckpt_dir / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True))


def load_checkpoint(ckpt_dir: str | Path) -> tuple[dict[str, np.ndarray], dict]:
    ckpt_dir = Path(ckpt_dir)
    manifest = json.loads((ckpt_dir / "manifest.json").read_text())
    if manifest.get("version") != FORMAT_VERSION:
        raise TensorFormatError(f"{ckpt_dir}: unsupported checkpoint version")
    params = {}
    for name, entry in manifest["params"].items():
        arr = read_tensor(ckpt_dir / entry["file"])
        if list(arr.shape) != entry["shape"]:
            raise TensorFormatError(f"{name}: manifest shape {entry['shape']} "
                                    f"does not match file shape {list(arr.shape)}")
        params[name] = arr
    return params, manifest.get("meta", {})
