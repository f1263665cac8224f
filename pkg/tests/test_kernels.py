import os
import subprocess
import sys

import numpy as np
import pytest

from satmamba import _kernels
from satmamba.ndgrad import Rng


def _case(L=100, H=3, P=5, N=4, dtype=np.float64, seed=2):
    r = Rng(seed)
    x = np.ascontiguousarray(r.normal((L, H, P), dtype=dtype))
    a_eff = -np.exp(r.uniform((H,), dtype=dtype) + 0.2)
    B = np.ascontiguousarray(r.normal((L, N), dtype=dtype))
    C = np.ascontiguousarray(r.normal((L, N), dtype=dtype))
    D = r.normal((H,), dtype=dtype)
    delta = np.ascontiguousarray(r.uniform((L, H), dtype=dtype) * 0.3 + 0.02)
    return x, a_eff, B, C, D, delta


def test_backend_is_reported():
    assert _kernels.BACKEND in ("compiled", "python")
    assert _kernels.chunk_ref.BACKEND == "python"


def test_chunk_backends_agree_forward():
    x, a, B, C, D, delta = _case()
    y_ref, _ = _kernels.chunk_ref.chunk_fwd(x, a, B, C, D, delta, 16)
    y_act, _ = _kernels.chunk_fwd(x, a, B, C, D, delta, 16)
    assert np.allclose(y_ref, y_act, rtol=1e-12, atol=1e-13)


def test_chunk_backends_agree_backward():
    x, a, B, C, D, delta = _case(L=37)
    g = np.ascontiguousarray(Rng(9).normal(x.shape, dtype=np.float64))
    _, ctx_ref = _kernels.chunk_ref.chunk_fwd(x, a, B, C, D, delta, 8)
    grads_ref = _kernels.chunk_ref.chunk_bwd(x, a, B, C, D, delta, ctx_ref, 8, g)
    _, ctx_act = _kernels.chunk_fwd(x, a, B, C, D, delta, 8)
    grads_act = _kernels.chunk_bwd(x, a, B, C, D, delta, ctx_act, 8, g)
    for ga, gb in zip(grads_ref, grads_act):
        assert np.allclose(ga, gb, rtol=1e-10, atol=1e-12)


def test_sequential_kernel_is_the_numpy_reference():
    assert _kernels.seq_fwd is _kernels.scan_ref.seq_fwd
    assert _kernels.seq_bwd is _kernels.scan_ref.seq_bwd


def test_env_var_forces_python_backend():
    code = ("import satmamba._kernels as k; print(k.BACKEND)")
    env = dict(os.environ, SATMAMBA_PURE_PYTHON="1")
    out = subprocess.run([sys.executable, "-c", code], env=env,
                         capture_output=True, text=True)
    assert out.stdout.strip() == "python"


@pytest.mark.skipif(_kernels.BACKEND != "compiled",
                    reason="compiled extension not built")
def test_compiled_beats_python_fallback():
    import time
    x, a, B, C, D, delta = _case(L=2048, H=8, P=64, N=64, dtype=np.float32)

    def best(fn, n=3):
        fn()
        t = np.inf
        for _ in range(n):
            t0 = time.perf_counter()
            fn()
            t = min(t, time.perf_counter() - t0)
        return t

    t_py = best(lambda: _kernels.chunk_ref.chunk_fwd(x, a, B, C, D, delta, 64))
    t_cy = best(lambda: _kernels.chunk_fwd(x, a, B, C, D, delta, 64))
    assert t_cy < t_py, (t_cy, t_py)
