"""Image <-> token-sequence geometry.

Patchification is an exact layout transform (no interpolation), masking
happens on the patch grid before flattening, and each scan direction is
a permutation over whatever tokens survived the mask. Kept tokens are
always stored in ascending row-major grid order (the canonical order);
directions permute at layer entry and un-permute at layer exit.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .ndgrad import Rng, Tensor, add, scatter
from .ndgrad.tensor import ShapeError

DIRECTIONS = ("row-fwd", "row-bwd", "col-fwd", "col-bwd")


@dataclass
class PatchGrid:
    """Row-major grid of flattened patches: tokens[r * cols + c] holds the
    pixels of block (r, c) laid out as (patch_row, patch_col, channel)."""

    rows: int
    cols: int
    patch_size: int
    channels: int
    tokens: np.ndarray  # (rows*cols, patch_size**2 * channels)


@dataclass
class MaskPlan:
    """Kept/masked index sets for one image; both strictly ascending."""

    kept: np.ndarray
    masked: np.ndarray
    ratio: float
    seed: int

    @property
    def length(self) -> int:
        return self.kept.size + self.masked.size


@dataclass
class Traversal:
    """One scan direction over a (possibly masked) grid.

    perm lists grid indices in visit order; inv_perm maps each kept rank
    (position in canonical ascending order) to its visit position, and
    gather_order is its inverse: canonical positions in visit order.
    """

    direction: str
    perm: np.ndarray
    inv_perm: np.ndarray = field(default=None)
    gather_order: np.ndarray = field(default=None)

    @classmethod
    def over(cls, direction: str, perm: np.ndarray, kept: np.ndarray) -> "Traversal":
        gather_order = np.searchsorted(kept, perm)
        inv_perm = np.argsort(gather_order, kind="stable")
        return cls(direction, np.asarray(perm, dtype=np.int64),
                   inv_perm.astype(np.int64), gather_order.astype(np.int64))


def patchify(image: np.ndarray, patch_size: int) -> PatchGrid:
    """Split a (C, H, W) image into non-overlapping patch tokens."""
    image = np.asarray(image)
    if image.ndim != 3:
        raise ShapeError(f"patchify expects (C, H, W), got {image.shape}")
    c, h, w = image.shape
    p = int(patch_size)
    if h % p or w % p:
        raise ShapeError(f"patchify: H={h}, W={w} not divisible by P={p}")
    rows, cols = h // p, w // p
    tokens = (image.reshape(c, rows, p, cols, p)
              .transpose(1, 3, 2, 4, 0)
              .reshape(rows * cols, p * p * c))
    return PatchGrid(rows, cols, p, c, np.ascontiguousarray(tokens))


def unpatchify(grid: PatchGrid) -> np.ndarray:
    """Exact inverse of patchify."""
    r, co, p, c = grid.rows, grid.cols, grid.patch_size, grid.channels
    if grid.tokens.shape != (r * co, p * p * c):
        raise ShapeError(f"unpatchify: tokens {grid.tokens.shape} inconsistent with "
                         f"grid {r}x{co}, P={p}, C={c}")
    return (grid.tokens.reshape(r, co, p, p, c)
            .transpose(4, 0, 2, 1, 3)
            .reshape(c, r * p, co * p))


def kept_count(length: int, ratio: float) -> int:
    """round(L * (1 - ratio)), half away from zero."""
    return int(np.floor(length * (1.0 - ratio) + 0.5))


def random_mask(length: int, ratio: float, rng: Rng) -> MaskPlan:
    """Uniform without-replacement mask: a random subset of round(L*(1-r))
    grid indices is kept, stored ascending (order preservation)."""
    if not 0.0 <= ratio < 1.0:
        raise ValueError(f"mask ratio must be in [0, 1), got {ratio}")
    n_keep = kept_count(length, ratio)
    kept = np.sort(rng.partial_shuffle(length, n_keep))
    mask = np.ones(length, dtype=bool)
    mask[kept] = False
    masked = np.nonzero(mask)[0].astype(np.int64)
    return MaskPlan(kept=kept, masked=masked, ratio=float(ratio),
                    seed=int(rng.seed))


def traversal_order(rows: int, cols: int, direction: str) -> Traversal:
    """Permutation of 0..rows*cols-1 realizing the named grid traversal."""
    if rows < 1 or cols < 1:
        raise ValueError(f"grid must be at least 1x1, got {rows}x{cols}")
    length = rows * cols
    if direction == "row-fwd":
        perm = np.arange(length, dtype=np.int64)
    elif direction == "row-bwd":
        perm = np.arange(length - 1, -1, -1, dtype=np.int64)
    elif direction == "col-fwd":
        perm = np.arange(length, dtype=np.int64).reshape(rows, cols).T.reshape(-1)
    elif direction == "col-bwd":
        perm = np.arange(length, dtype=np.int64).reshape(rows, cols).T.reshape(-1)[::-1]
    else:
        raise ValueError(f"unknown scan direction {direction!r}; "
                         f"expected one of {DIRECTIONS}")
    return Traversal.over(direction, np.ascontiguousarray(perm),
                          np.arange(length, dtype=np.int64))


def restrict_traversal(trav: Traversal, plan: MaskPlan) -> Traversal:
    """The same direction visiting only kept grid positions, in the order
    they appear under the full-grid traversal."""
    length = plan.length
    if trav.perm.size != length:
        raise ShapeError(f"traversal over {trav.perm.size} cells does not match "
                         f"mask plan over {length}")
    keep_mask = np.zeros(length, dtype=bool)
    keep_mask[plan.kept] = True
    perm = trav.perm[keep_mask[trav.perm]]
    return Traversal.over(trav.direction, perm, plan.kept)


def pad_and_restore(encoded: Tensor, plan: MaskPlan, mask_token: Tensor) -> Tensor:
    """Re-expand encoder output to the full grid: kept rows keep their
    values, masked rows receive the (learnable) mask token."""
    n_kept = plan.kept.size
    if encoded.shape[0] != n_kept:
        raise ShapeError(f"pad_and_restore: {encoded.shape[0]} rows for "
                         f"{n_kept} kept positions")
    length = plan.length
    placed = scatter(encoded, plan.kept, axis=0, size=length)
    if plan.masked.size == 0:
        return placed
    filler = add(Tensor(np.zeros((plan.masked.size, mask_token.shape[-1]),
                                 dtype=mask_token.dtype)), mask_token)
    return add(placed, scatter(filler, plan.masked, axis=0, size=length))
