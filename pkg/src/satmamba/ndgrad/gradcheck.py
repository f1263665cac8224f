"""Finite-difference verification of reverse-mode gradients."""

from __future__ import annotations

import numpy as np

from .tensor import GraphError, Tensor, backward, no_grad


def grad_check(f, x: Tensor, step: float = 1e-5) -> float:
    """Max relative error between the analytic gradient of ``f`` at ``x``
    and central finite differences with the given step.

    ``f`` maps a Tensor to a scalar Tensor and must be deterministic;
    the relative error denominator is max(1, |central difference|).
    Run with float64 inputs to keep the discretization error dominant.
    """
    if step <= 0:
        raise ValueError(f"grad_check step must be positive, got {step}")

    probe = Tensor(x.data.copy(), requires_grad=True)
    out1 = f(probe)
    with no_grad():
        out2 = f(Tensor(x.data.copy()))
    if out1.data.tobytes() != out2.data.tobytes():
        raise GraphError("grad_check: f returned different values on identical inputs")

    backward(out1)
    analytic = probe.grad.reshape(-1).copy()

    flat = x.data.reshape(-1)
    fd = np.empty_like(flat)
    with no_grad():
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            hi = f(Tensor(x.data.copy())).item()
            flat[i] = orig - step
            lo = f(Tensor(x.data.copy())).item()
            flat[i] = orig
            fd[i] = (hi - lo) / (2.0 * step)

    denom = np.maximum(1.0, np.abs(fd))
    return float(np.max(np.abs(analytic - fd) / denom))
