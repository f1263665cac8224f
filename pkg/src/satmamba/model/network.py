"""Masked-autoencoder assembly: patch embedding, multi-way encoder,
mask-token decoder, and the patch-normalized masked reconstruction loss."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .. import geometry as geo
from ..ndgrad import Rng, Tensor, concat, gather, matmul, mul, rmsnorm
from ..ndgrad.tensor import ShapeError
from ..ssm import MambaBlockParams, init_block, mamba_block_forward
from .config import ConfigError, ModelConfig
from .posenc import positional_encoding

DEFAULT_CHUNK = 64


@dataclass
class ModelParams:
    """All learnable arrays, grouped the way the forward pass uses them.

    enc_layers/dec_layers are [depth][direction] grids of block params,
    direction order matching config.directions.
    """

    config: ModelConfig
    patch_w: Tensor
    patch_b: Tensor
    enc_layers: list
    enc_norm_w: Tensor
    dec_embed_w: Tensor
    dec_embed_b: Tensor
    mask_token: Tensor
    dec_layers: list
    head_w: Tensor
    head_b: Tensor

    def named_parameters(self):
        yield "patch_embed.w", self.patch_w
        yield "patch_embed.b", self.patch_b
        for i, layer in enumerate(self.enc_layers):
            for d, blk in zip(self.config.directions, layer):
                yield from blk.named(f"enc.{i}.{d}")
        yield "enc_norm.w", self.enc_norm_w
        yield "dec_embed.w", self.dec_embed_w
        yield "dec_embed.b", self.dec_embed_b
        yield "mask_token", self.mask_token
        for i, layer in enumerate(self.dec_layers):
            for d, blk in zip(self.config.directions, layer):
                yield from blk.named(f"dec.{i}.{d}")
        yield "head.w", self.head_w
        yield "head.b", self.head_b

    def zero_grad(self):
        for _, p in self.named_parameters():
            p.grad = None


def init_model(config: ModelConfig, seed: int = 0, dtype=np.float32) -> ModelParams:
    """Fresh parameters; every array gets its own derived RNG stream."""
    root = Rng(seed).stream("init")

    def tn(label, shape):
        return Tensor(root.stream(label).trunc_normal(shape, std=0.02, dtype=dtype),
                      requires_grad=True)

    def zeros(shape):
        return Tensor(np.zeros(shape, dtype=dtype), requires_grad=True)

    def make_layers(tag, depth, dim, head_dim):
        layers = []
        for i in range(depth):
            layers.append([
                init_block(dim, config.state_dim, head_dim,
                           root.stream(f"{tag}.{i}.{d}"),
                           expand=config.expand, conv_width=config.conv_width,
                           dtype=dtype)
                for d in config.directions])
        return layers

    return ModelParams(
        config=config,
        patch_w=tn("patch_w", (config.patch_pixels, config.enc_dim)),
        patch_b=zeros(config.enc_dim),
        enc_layers=make_layers("enc", config.enc_depth, config.enc_dim,
                               config.head_dim),
        enc_norm_w=Tensor(np.ones(config.enc_dim, dtype=dtype), requires_grad=True),
        dec_embed_w=tn("dec_embed", (config.enc_dim, config.dec_dim)),
        dec_embed_b=zeros(config.dec_dim),
        mask_token=tn("mask_token", (config.dec_dim,)),
        dec_layers=make_layers("dec", config.dec_depth, config.dec_dim,
                               config.dec_head_dim),
        head_w=tn("head", (config.dec_dim, config.patch_pixels)),
        head_b=zeros(config.patch_pixels),
    )


def multiway_layer_forward(tokens: Tensor, layer_blocks, traversals,
                           chunk_size: int = DEFAULT_CHUNK,
                           use_chunked: bool = True) -> Tensor:
    """Run one block per direction on its permutation of the tokens,
    un-permute, merge by arithmetic mean, add one residual."""
    if len(layer_blocks) != len(traversals):
        raise ShapeError(f"{len(layer_blocks)} blocks for {len(traversals)} traversals")
    n = tokens.shape[0]
    outs = []
    for blk, trav in zip(layer_blocks, traversals):
        if trav.perm.size != n:
            raise ShapeError(f"traversal over {trav.perm.size} tokens does not "
                             f"match sequence of {n}")
        ordered = gather(tokens, trav.gather_order, axis=0)
        res = mamba_block_forward(ordered, blk, chunk_size, use_chunked)
        outs.append(gather(res, trav.inv_perm, axis=0))
    if len(outs) == 1:
        merged = outs[0]
    else:
        stacked = concat([o.reshape((1,) + tuple(o.shape)) for o in outs], axis=0)
        merged = stacked.mean(axes=0)
    return tokens + merged


def _grid_shape(config: ModelConfig, image: np.ndarray):
    c, h, w = image.shape
    if c != config.channels:
        raise ConfigError(f"image has {c} channels, config expects {config.channels}")
    if h % config.patch_size or w % config.patch_size:
        raise ConfigError(f"image {h}x{w} not divisible by patch {config.patch_size}")
    return h // config.patch_size, w // config.patch_size


def encode(image: np.ndarray, seed, config: ModelConfig, params: ModelParams,
           chunk_size: int = DEFAULT_CHUNK, use_chunked: bool = True):
    """Embed, mask, and run the multi-way encoder.

    ``seed`` is an int or an Rng for the mask stream. Returns
    (latent over kept tokens in canonical order, MaskPlan).
    """
    rows, cols = _grid_shape(config, image)
    grid = geo.patchify(image, config.patch_size)
    rng = seed if isinstance(seed, Rng) else Rng(int(seed))
    plan = geo.random_mask(rows * cols, config.mask_ratio, rng)
    if plan.kept.size == 0:
        raise ConfigError(f"mask ratio {config.mask_ratio} leaves no tokens "
                          f"(L={rows * cols})")

    dtype = params.patch_w.dtype
    kept_np = grid.tokens[plan.kept].astype(dtype, copy=False)
    tokens = matmul(Tensor(kept_np), params.patch_w) + params.patch_b
    if config.use_pos_enc:
        pos = positional_encoding(rows, cols, config.enc_dim)[plan.kept]
        tokens = tokens + Tensor(pos.astype(dtype))

    traversals = [geo.restrict_traversal(geo.traversal_order(rows, cols, d), plan)
                  for d in config.directions]
    for layer in params.enc_layers:
        tokens = multiway_layer_forward(tokens, layer, traversals,
                                        chunk_size, use_chunked)
    latent = mul(rmsnorm(tokens), params.enc_norm_w)
    return latent, plan


def decode(latent: Tensor, plan: geo.MaskPlan, config: ModelConfig,
           params: ModelParams, rows: int = None, cols: int = None,
           chunk_size: int = DEFAULT_CHUNK, use_chunked: bool = True) -> Tensor:
    """Project to decoder width, restore the full grid with mask tokens,
    run the multi-way decoder, and predict patch pixels for all L rows."""
    length = plan.length
    if rows is None or cols is None:
        side = int(round(length ** 0.5))
        if side * side != length:
            raise ConfigError(f"non-square grid of {length} tokens: pass rows/cols")
        rows = cols = side
    if latent.shape[0] != plan.kept.size:
        raise ShapeError(f"latent has {latent.shape[0]} rows for "
                         f"{plan.kept.size} kept tokens")

    tokens = matmul(latent, params.dec_embed_w) + params.dec_embed_b
    tokens = geo.pad_and_restore(tokens, plan, params.mask_token)
    if config.use_pos_enc:
        pos = positional_encoding(rows, cols, config.dec_dim)
        tokens = tokens + Tensor(pos.astype(params.mask_token.dtype))

    traversals = [geo.traversal_order(rows, cols, d) for d in config.directions]
    for layer in params.dec_layers:
        tokens = multiway_layer_forward(tokens, layer, traversals,
                                        chunk_size, use_chunked)
    return matmul(tokens, params.head_w) + params.head_b


def normalized_patch_target(image: np.ndarray, patch_size: int,
                            eps: float = 1e-6) -> np.ndarray:
    """Per-patch standardized pixels (the reconstruction target)."""
    tokens = geo.patchify(image, patch_size).tokens
    mu = tokens.mean(axis=1, keepdims=True)
    var = tokens.var(axis=1, ddof=1, keepdims=True)
    return (tokens - mu) / np.sqrt(var + eps)


def mae_loss(pred: Tensor, image: np.ndarray, plan: geo.MaskPlan,
             eps: float = 1e-6) -> Tensor:
    """Mean squared error against per-patch-normalized pixels, averaged
    over masked patches only."""
    if plan.masked.size == 0:
        raise ValueError("mae_loss undefined: no masked patches")
    channels = image.shape[0]
    patch_pixels = pred.shape[1]
    patch = int(round((patch_pixels // channels) ** 0.5))
    if patch * patch * channels != patch_pixels:
        raise ShapeError(f"prediction width {patch_pixels} is not a patch of "
                         f"{channels}-channel pixels")
    target = normalized_patch_target(image, patch, eps)
    if target.shape[0] != pred.shape[0]:
        raise ShapeError(f"prediction has {pred.shape[0]} patches, image has "
                         f"{target.shape[0]}")
    masked_target = Tensor(target[plan.masked].astype(pred.dtype, copy=False))
    diff = gather(pred, plan.masked, axis=0) - masked_target
    return mul(diff, diff).mean()


def forward_loss(image, seed, config, params, chunk_size=DEFAULT_CHUNK,
                 use_chunked=True):
    latent, plan = encode(image, seed, config, params, chunk_size, use_chunked)
    rows, cols = _grid_shape(config, image)
    pred = decode(latent, plan, config, params, rows, cols, chunk_size, use_chunked)
    loss = mae_loss(pred, image, plan)
    return loss, pred, plan
