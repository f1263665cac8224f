"""Fixed 2-D sine-cosine positional encodings.

Half the channels encode the row coordinate, half the column; each half
is the standard [sin | cos] frequency ladder, so position (0, 0) is all
zeros in the sine slots and all ones in the cosine slots.
"""

from __future__ import annotations

import numpy as np


def _sincos_1d(dim: int, positions: np.ndarray) -> np.ndarray:
    half = dim // 2
    omega = 1.0 / (10000.0 ** (np.arange(half, dtype=np.float64) / half))
    angles = positions[:, None] * omega[None, :]
    return np.concatenate([np.sin(angles), np.cos(angles)], axis=1)


def positional_encoding(rows: int, cols: int, dim: int) -> np.ndarray:
    """(rows*cols, dim) table in row-major grid order, values in [-1, 1]."""
    if dim % 4:
        raise ValueError(f"positional encoding dim must be divisible by 4, got {dim}")
    rr, cc = np.meshgrid(np.arange(rows), np.arange(cols), indexing="ij")
    emb_r = _sincos_1d(dim // 2, rr.reshape(-1).astype(np.float64))
    emb_c = _sincos_1d(dim // 2, cc.reshape(-1).astype(np.float64))
    return np.concatenate([emb_r, emb_c], axis=1)
