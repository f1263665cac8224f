import numpy as np
import pytest

from satmamba.ndgrad import Rng, Tensor, backward, grad_check
from satmamba.ndgrad.tensor import ShapeError
from satmamba.ssm import init_block, mamba_block_forward
from satmamba.ssm.block import causal_conv1d


def tiny_block(dtype=np.float64, seed=5, embed=8, state=4, head=4):
    return init_block(embed, state, head, Rng(seed), dtype=dtype)


def test_causal_conv_matches_direct_convolution():
    rng = Rng(1)
    u = Tensor(rng.normal((10, 3), dtype=np.float64))
    w = Tensor(rng.normal((3, 4), dtype=np.float64))
    b = Tensor(rng.normal((3,), dtype=np.float64))
    y = causal_conv1d(u, w, b)
    up = np.vstack([np.zeros((3, 3)), u.data])
    for t in range(10):
        for e in range(3):
            direct = b.data[e] + sum(w.data[e, k] * up[t + k, e] for k in range(4))
            assert abs(y.data[t, e] - direct) < 1e-12


def test_zero_out_proj_makes_block_zero():
    params = tiny_block()
    params.out_proj.data[:] = 0.0
    tokens = Tensor(Rng(2).normal((7, 8), dtype=np.float64))
    out = mamba_block_forward(tokens, params)
    assert np.all(out.data == 0.0)
    # with the caller-side residual the layer is the identity
    assert np.array_equal((tokens + out).data, tokens.data)


@pytest.mark.parametrize("length", [1, 49, 196])
def test_output_shape_matches_input(length):
    params = tiny_block(dtype=np.float32)
    tokens = Tensor(Rng(3).normal((length, 8), dtype=np.float32))
    out = mamba_block_forward(tokens, params)
    assert out.shape == (length, 8)


def test_wrong_token_dim_rejected():
    params = tiny_block()
    with pytest.raises(ShapeError, match="8"):
        mamba_block_forward(Tensor(np.zeros((5, 9))), params)


@pytest.mark.parametrize("use_chunked", [False, True])
def test_block_grad_check(use_chunked):
    """Finite differences through the whole block at D_e=8, N=4, P_h=4, L=6."""
    params = tiny_block()
    x0 = Rng(7).normal((6, 8))

    def f(x):
        return mamba_block_forward(x, params, chunk_size=3,
                                   use_chunked=use_chunked).sum()

    err = grad_check(f, Tensor(x0, dtype=np.float64), step=1e-5)
    assert err < 1e-4, err


def test_block_parameter_gradients_flow():
    params = tiny_block()
    tokens = Tensor(Rng(11).normal((6, 8), dtype=np.float64))
    out = mamba_block_forward(tokens, params)
    backward((out * out).mean())
    for name, p in params.named("blk"):
        assert p.grad is not None, f"no gradient reached {name}"
        assert np.all(np.isfinite(p.grad)), name


def test_initial_timescales_in_range():
    params = tiny_block(seed=123, embed=32, state=8, head=8)
    delta0 = np.logaddexp(0, params.dt_bias.data)  # softplus
    assert np.all(delta0 >= 0.0009) and np.all(delta0 <= 0.11)
    a_eff = -np.exp(params.a_log.data)
    assert np.all(a_eff < 0) and np.all(a_eff >= -16.5)


def test_chunked_paths_agree_inside_block():
    params = tiny_block(dtype=np.float64, seed=9)
    tokens = Tensor(Rng(10).normal((37, 8), dtype=np.float64))
    y1 = mamba_block_forward(tokens, params, use_chunked=False)
    y2 = mamba_block_forward(tokens, params, chunk_size=8, use_chunked=True)
    assert np.allclose(y1.data, y2.data, rtol=1e-12, atol=1e-13)
