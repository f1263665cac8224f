"""The gated selective-SSM block used by every layer, one per direction.

Pipeline (residual is added by the caller):

    rmsnorm -> in_proj -> split(stream u | gate g)
    u: depthwise causal conv -> SiLU -> project out delta/B/C -> scan
    output: scan(u) * SiLU(g) -> out_proj

Timescales are shared within a head; B and C are shared across heads.
"""

from __future__ import annotations

from dataclasses import dataclass, fields

import numpy as np

from ..ndgrad import Rng, Tensor, concat, matmul, mul, reshape, rmsnorm, silu, softplus
from ..ndgrad.tensor import ShapeError, slice_axis
from .scan import SsmCoeffs, scan_chunked, scan_sequential

_DELTA_FLOOR = 1e-6


@dataclass
class MambaBlockParams:
    """Learnable weights of one block (one scan direction).

    Weight matrices are laid out (in_features, out_features). in_proj's
    output columns are [stream u | gate g]. Only conv and dt carry biases;
    the projections are bias-free.
    """

    norm_w: Tensor    # (D_e,)
    in_proj: Tensor   # (D_e, 2E)
    conv_w: Tensor    # (E, K) depthwise causal taps, column K-1 is "now"
    conv_b: Tensor    # (E,)
    dt_proj: Tensor   # (E, H)
    dt_bias: Tensor   # (H,)
    b_proj: Tensor    # (E, N)
    c_proj: Tensor    # (E, N)
    a_log: Tensor     # (H,)
    d_skip: Tensor    # (H,)
    out_proj: Tensor  # (E, D_e)

    @property
    def embed_dim(self) -> int:
        return self.in_proj.shape[0]

    @property
    def inner_dim(self) -> int:
        return self.out_proj.shape[0]

    @property
    def n_heads(self) -> int:
        return self.a_log.shape[0]

    @property
    def head_dim(self) -> int:
        return self.inner_dim // self.n_heads

    def named(self, prefix: str):
        for f in fields(self):
            yield f"{prefix}.{f.name}", getattr(self, f.name)


def init_block(embed_dim: int, state_dim: int, head_dim: int, rng: Rng,
               expand: int = 2, conv_width: int = 4,
               dtype=np.float32) -> MambaBlockParams:
    """Conventional SSM initialization: trunc-normal(0.02) projections,
    per-head decay log-magnitudes from uniform[1, 16], unit skip, and
    dt_bias placed so the initial timescale is log-uniform in
    [1e-3, 1e-1]."""
    inner = expand * embed_dim
    if inner % head_dim:
        raise ShapeError(f"inner dim {inner} not divisible by head dim {head_dim}")
    heads = inner // head_dim

    def tn(shape):
        return Tensor(rng.trunc_normal(shape, std=0.02, dtype=dtype),
                      requires_grad=True)

    dt_init = np.exp(rng.uniform((heads,)) * (np.log(0.1) - np.log(0.001))
                     + np.log(0.001))
    dt_bias = np.log(np.expm1(dt_init))  # softplus inverse
    a_init = np.log(rng.uniform((heads,)) * 15.0 + 1.0)

    return MambaBlockParams(
        norm_w=Tensor(np.ones(embed_dim, dtype=dtype), requires_grad=True),
        in_proj=tn((embed_dim, 2 * inner)),
        conv_w=tn((inner, conv_width)),
        conv_b=Tensor(np.zeros(inner, dtype=dtype), requires_grad=True),
        dt_proj=tn((inner, heads)),
        dt_bias=Tensor(dt_bias.astype(dtype), requires_grad=True),
        b_proj=tn((inner, state_dim)),
        c_proj=tn((inner, state_dim)),
        a_log=Tensor(a_init.astype(dtype), requires_grad=True),
        d_skip=Tensor(np.ones(heads, dtype=dtype), requires_grad=True),
        out_proj=tn((inner, embed_dim)),
    )


def causal_conv1d(u: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """Depthwise causal convolution over the sequence axis.

    y[t, e] = b[e] + sum_k w[e, k] * u[t - (K-1) + k, e], zero-padded on
    the left so position t never sees the future.
    """
    length, channels = u.shape
    k_w = w.shape[1]
    padded = concat([Tensor(np.zeros((k_w - 1, channels), dtype=u.dtype)), u],
                    axis=0)
    acc = None
    for k in range(k_w):
        tap = reshape(slice_axis(w, 1, k, k + 1), (channels,))
        term = mul(slice_axis(padded, 0, k, k + length), tap)
        acc = term if acc is None else acc + term
    return acc + b


def mamba_block_forward(tokens: Tensor, params: MambaBlockParams,
                        chunk_size: int = 64, use_chunked: bool = True) -> Tensor:
    """One block over tokens already permuted into this direction's order.

    The caller adds the residual connection.
    """
    if tokens.ndim != 2 or tokens.shape[1] != params.embed_dim:
        raise ShapeError(f"block expects (L, {params.embed_dim}) tokens, "
                         f"got {tokens.shape}")
    length = tokens.shape[0]
    inner = params.inner_dim
    heads = params.n_heads

    normed = mul(rmsnorm(tokens), params.norm_w)
    both = matmul(normed, params.in_proj)
    u = slice_axis(both, 1, 0, inner)
    gate = slice_axis(both, 1, inner, 2 * inner)

    u = silu(causal_conv1d(u, params.conv_w, params.conv_b))
    # the 1e-6 floor keeps delta > 0 even where float32 softplus underflows
    delta = softplus(matmul(u, params.dt_proj) + params.dt_bias) + _DELTA_FLOOR
    coeffs = SsmCoeffs(
        a_log=params.a_log,
        B=matmul(u, params.b_proj),
        C=matmul(u, params.c_proj),
        D=params.d_skip,
        delta=delta,
    )
    xh = reshape(u, (length, heads, params.head_dim))
    if use_chunked:
        y = scan_chunked(xh, coeffs, chunk_size)
    else:
        y = scan_sequential(xh, coeffs)
    y = mul(reshape(y, (length, inner)), silu(gate))
    return matmul(y, params.out_proj)
