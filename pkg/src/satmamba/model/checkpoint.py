"""Versioned binary checkpoints.

Layout (all integers little-endian):

    magic  b"SMCK"
    u32    format version (currently 1)
    u32    config length, then that many bytes of canonical config text
    u64    training-step counter
    u32    number of RNG state entries
           per entry: u32 name length | name utf-8 | u64 state
    u32    number of arrays
           per entry: u32 name length | name utf-8 | u8 dtype tag
                      (0 = float32, 1 = float64) | u8 rank |
                      u32 extents[rank] | raw little-endian values

Arrays cover the model parameters plus whatever extra state the caller
stores (optimizer moments, normalization statistics); loading is
bit-exact.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .config import ModelConfig
from .network import ModelParams, init_model

MAGIC = b"SMCK"
VERSION = 1
_DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<f8")}
_TAGS = {np.dtype(np.float32): 0, np.dtype(np.float64): 1}


class CheckpointError(ValueError):
    pass


@dataclass
class Checkpoint:
    version: int
    config: ModelConfig
    step: int
    rng_states: dict
    arrays: dict


def _write_str(fh, s: str):
    raw = s.encode("utf-8")
    fh.write(struct.pack("<I", len(raw)))
    fh.write(raw)


def _read_str(fh) -> str:
    (n,) = struct.unpack("<I", fh.read(4))
    return fh.read(n).decode("utf-8")


def save_checkpoint(path, config: ModelConfig, arrays: dict, step: int = 0,
                    rng_states: dict = None):
    rng_states = rng_states or {}
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", VERSION))
        _write_str(fh, config.to_text())
        fh.write(struct.pack("<Q", int(step)))
        fh.write(struct.pack("<I", len(rng_states)))
        for name, state in rng_states.items():
            _write_str(fh, name)
            fh.write(struct.pack("<Q", int(state) & 0xFFFFFFFFFFFFFFFF))
        fh.write(struct.pack("<I", len(arrays)))
        for name, arr in arrays.items():
            arr = np.asarray(arr)
            if arr.dtype not in _TAGS:
                raise CheckpointError(f"array {name!r} has unsupported dtype {arr.dtype}")
            _write_str(fh, name)
            fh.write(struct.pack("<BB", _TAGS[arr.dtype], arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            fh.write(np.ascontiguousarray(arr).astype(arr.dtype.newbyteorder("<"),
                                                      copy=False).tobytes())


def load_checkpoint(path) -> Checkpoint:
    with open(path, "rb") as fh:
        if fh.read(4) != MAGIC:
            raise CheckpointError(f"{path}: bad magic, not a checkpoint file")
        (version,) = struct.unpack("<I", fh.read(4))
        if version != VERSION:
            raise CheckpointError(f"{path}: unsupported format version {version}")
        config = ModelConfig.from_text(_read_str(fh))
        (step,) = struct.unpack("<Q", fh.read(8))
        (n_rng,) = struct.unpack("<I", fh.read(4))
        rng_states = {}
        for _ in range(n_rng):
            name = _read_str(fh)
            (rng_states[name],) = struct.unpack("<Q", fh.read(8))
        (n_arr,) = struct.unpack("<I", fh.read(4))
        arrays = {}
        for _ in range(n_arr):
            name = _read_str(fh)
            tag, rank = struct.unpack("<BB", fh.read(2))
            shape = struct.unpack(f"<{rank}I", fh.read(4 * rank))
            dtype = _DTYPES.get(tag)
            if dtype is None:
                raise CheckpointError(f"{path}: unknown dtype tag {tag} for {name!r}")
            count = int(np.prod(shape, dtype=np.int64)) if rank else 1
            raw = fh.read(count * dtype.itemsize)
            arrays[name] = np.frombuffer(raw, dtype=dtype).reshape(shape).copy()
    return Checkpoint(version, config, step, rng_states, arrays)


def params_to_arrays(params: ModelParams) -> dict:
    return {name: t.data for name, t in params.named_parameters()}


def params_from_checkpoint(ck: Checkpoint) -> ModelParams:
    """Rebuild live parameters with bit-exact values from a checkpoint."""
    params = init_model(ck.config, seed=0)
    for name, tensor in params.named_parameters():
        if name not in ck.arrays:
            raise CheckpointError(f"checkpoint missing parameter {name!r}")
        arr = ck.arrays[name]
        if tuple(arr.shape) != tuple(tensor.shape):
            raise CheckpointError(f"parameter {name!r}: checkpoint shape "
                                  f"{arr.shape} vs model {tensor.shape}")
        tensor.data = arr.astype(tensor.dtype, copy=True)
    return params
