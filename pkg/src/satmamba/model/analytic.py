"""Analytic parameter counts and forward-FLOP estimates.

Counts are exact (they must match the live parameter arrays); FLOPs use
the multiply-add = 1 convention and model the unmasked full-sequence
forward pass. The transformer reference is analytic only -- no attention
is implemented -- with the standard per-layer cost 12*L*D^2 + 2*L^2*D
and parameter count 12*D^2 + 13*D per block.
"""

from __future__ import annotations

from .config import ModelConfig

# per (head x head_dim x state) element of the scan: discretize, state
# update, and output contraction
SCAN_FLOPS_PER_STATE = 6

VIT_BASE = dict(enc_dim=768, enc_depth=12, dec_dim=512, dec_depth=8)
VIT_LARGE = dict(enc_dim=1024, enc_depth=24, dec_dim=512, dec_depth=8)


def mamba_block_params(dim: int, state_dim: int, head_dim: int,
                       expand: int = 2, conv_width: int = 4) -> int:
    inner = expand * dim
    heads = inner // head_dim
    return (dim                      # norm
            + dim * 2 * inner        # in_proj
            + inner * conv_width + inner
            + inner * heads + heads  # dt
            + 2 * inner * state_dim  # B, C
            + 2 * heads              # a_log, d_skip
            + inner * dim)           # out_proj


def count_params(config: ModelConfig) -> dict:
    """Exact per-component counts for the live architecture."""
    ppc = config.patch_pixels
    n_dir = len(config.directions)
    enc_block = mamba_block_params(config.enc_dim, config.state_dim,
                                   config.head_dim, config.expand,
                                   config.conv_width)
    dec_block = mamba_block_params(config.dec_dim, config.state_dim,
                                   config.dec_head_dim, config.expand,
                                   config.conv_width)
    counts = {
        "patch_embed": ppc * config.enc_dim + config.enc_dim,
        "encoder_block": enc_block,
        "encoder_layer": n_dir * enc_block,
        "encoder": config.enc_depth * n_dir * enc_block + config.enc_dim,
        "decoder_block": dec_block,
        "decoder_layer": n_dir * dec_block,
        "decoder": config.dec_depth * n_dir * dec_block,
        "dec_embed": config.enc_dim * config.dec_dim + config.dec_dim,
        "mask_token": config.dec_dim,
        "head": config.dec_dim * ppc + ppc,
    }
    counts["total"] = (counts["patch_embed"] + counts["encoder"]
                       + counts["dec_embed"] + counts["mask_token"]
                       + counts["decoder"] + counts["head"])
    return counts


def vit_block_params(dim: int) -> int:
    """Standard transformer block: qkv + proj + 4x MLP, norms, biases."""
    return 12 * dim * dim + 13 * dim


def vit_reference_params(enc_dim: int, enc_depth: int, dec_dim: int,
                         dec_depth: int, patch_size: int = 16,
                         channels: int = 3) -> dict:
    ppc = patch_size * patch_size * channels
    counts = {
        "patch_embed": ppc * enc_dim + enc_dim,
        "cls_token": enc_dim,
        "encoder_block": vit_block_params(enc_dim),
        "encoder": enc_depth * vit_block_params(enc_dim) + 2 * enc_dim,
        "dec_embed": enc_dim * dec_dim + dec_dim,
        "mask_token": dec_dim,
        "decoder": dec_depth * vit_block_params(dec_dim) + 2 * dec_dim,
        "head": dec_dim * ppc + ppc,
    }
    counts["total"] = sum(v for k, v in counts.items()
                          if k not in ("encoder_block",))
    return counts


def _mamba_block_flops_per_token(dim: int, state_dim: int, head_dim: int,
                                 expand: int, conv_width: int) -> int:
    inner = expand * dim
    heads = inner // head_dim
    return (dim * 2 * inner                       # in_proj
            + inner * conv_width                  # depthwise conv
            + inner * (heads + 2 * state_dim)     # delta/B/C projections
            + SCAN_FLOPS_PER_STATE * heads * head_dim * state_dim
            + inner                               # gating
            + inner * dim)                        # out_proj


def flops_estimate(config: ModelConfig, height: int, width: int,
                   arch: str = "satmamba") -> int:
    """Forward FLOPs (multiply-add = 1) for the full unmasked sequence."""
    if height % config.patch_size or width % config.patch_size:
        raise ValueError(f"{height}x{width} not divisible by patch "
                         f"{config.patch_size}")
    length = (height // config.patch_size) * (width // config.patch_size)
    ppc = config.patch_pixels
    shared = (length * ppc * config.enc_dim            # patch embed
              + length * config.enc_dim * config.dec_dim
              + length * config.dec_dim * ppc)         # prediction head

    if arch == "satmamba":
        enc = _mamba_block_flops_per_token(config.enc_dim, config.state_dim,
                                           config.head_dim, config.expand,
                                           config.conv_width)
        dec = _mamba_block_flops_per_token(config.dec_dim, config.state_dim,
                                           config.dec_head_dim, config.expand,
                                           config.conv_width)
        n_dir = len(config.directions)
        layers = length * n_dir * (config.enc_depth * enc + config.dec_depth * dec)
        return layers + shared
    if arch == "vit-reference":
        enc = (12 * length * config.enc_dim ** 2
               + 2 * length ** 2 * config.enc_dim) * config.enc_depth
        dec = (12 * length * config.dec_dim ** 2
               + 2 * length ** 2 * config.dec_dim) * config.dec_depth
        return enc + dec + shared
    raise ValueError(f"unknown arch {arch!r}; expected 'satmamba' or 'vit-reference'")
