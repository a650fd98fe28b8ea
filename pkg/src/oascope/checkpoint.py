"""Flat named-tensor checkpoint files.

Layout (all integers little-endian):

    magic   7 bytes  b"OACKPT1"
    count   u32
    per tensor:
        name_len u16, name utf-8
        ndim     u8, dims u32 each
        data     float64 little-endian, row-major
"""

from __future__ import annotations

import struct

import numpy as np

from .tensor import Tensor

MAGIC = b"OACKPT1"


class CheckpointError(ValueError):
    """Malformed or incompatible checkpoint file."""


def save_checkpoint(path, named_tensors: dict) -> None:
    """Write a name -> Tensor/ndarray mapping; insertion order is preserved."""
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", len(named_tensors)))
        for name, t in named_tensors.items():
            arr = np.ascontiguousarray(t.data if isinstance(t, Tensor) else t,
                                       dtype="<f8")
            encoded = name.encode("utf-8")
            fh.write(struct.pack("<H", len(encoded)))
            fh.write(encoded)
            fh.write(struct.pack("<B", arr.ndim))
            for dim in arr.shape:
                fh.write(struct.pack("<I", dim))
            fh.write(arr.tobytes())


def load_checkpoint(path) -> dict:
    """Read a checkpoint back into a name -> float64 ndarray mapping."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:len(MAGIC)] != MAGIC:
        raise CheckpointError(f"{path}: bad magic, expected {MAGIC!r}")
    off = len(MAGIC)

    def take(n, what):
        nonlocal off
        if off + n > len(blob):
            raise CheckpointError(f"{path}: truncated while reading {what} at byte {off}")
        piece = blob[off:off + n]
        off += n
        return piece

    (count,) = struct.unpack("<I", take(4, "tensor count"))
    out = {}
    for _ in range(count):
        (name_len,) = struct.unpack("<H", take(2, "name length"))
        name = take(name_len, "name").decode("utf-8")
        (ndim,) = struct.unpack("<B", take(1, f"{name} ndim"))
        shape = tuple(struct.unpack("<I", take(4, f"{name} dim"))[0] for _ in range(ndim))
        n_items = int(np.prod(shape)) if shape else 1
        data = np.frombuffer(take(8 * n_items, f"{name} data"), dtype="<f8")
        out[name] = data.reshape(shape).astype(np.float64)
    return out


def restore_into(named_tensors: dict, loaded: dict, path="checkpoint") -> None:
    """Copy loaded arrays into existing parameter tensors, checking shapes."""
    missing = set(named_tensors) - set(loaded)
    extra = set(loaded) - set(named_tensors)
    if missing or extra:
        raise CheckpointError(
            f"{path}: parameter names disagree (missing={sorted(missing)[:3]}, "
            f"unexpected={sorted(extra)[:3]})")
    for name, tensor in named_tensors.items():
        arr = loaded[name]
        if arr.shape != tensor.data.shape:
            raise CheckpointError(
                f"{path}: shape mismatch for {name}: {arr.shape} vs {tensor.data.shape}")
        tensor.data[...] = arr
