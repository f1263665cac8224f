"""Multi-head selective scan: reference recurrence and chunked fast path.

Per head h with state S of shape (P, N) and per-step coefficients:

    a_t = exp(delta_t * A_h)          (zero-order hold for the decay)
    S   = a_t * S + (delta_t * x_t) outer B_t   (first-order input hold)
    y_t = S @ C_t + D_h * x_t

``scan_sequential`` runs the recurrence one step at a time in plain
numpy; it is the oracle. ``scan_chunked`` produces the same values with
cost still linear in L but a much better constant: the compiled kernel
when available, else batched within-chunk matrix products carrying only
chunk-boundary states. Both record a single autodiff node with a
hand-derived VJP.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .. import _kernels
from ..ndgrad import Tensor, custom_op


class ParameterizationError(ValueError):
    """A coefficient violates its parameterization (e.g. delta <= 0)."""


class StabilityError(FloatingPointError):
    """The scan state went non-finite."""


@dataclass
class SsmCoeffs:
    """Selective-scan coefficients for one sequence.

    a_log: (H,) log-magnitude of the per-head decay; effective A = -exp(a_log)
    B, C:  (L, N) input-dependent state projections, shared across heads
    D:     (H,) skip coefficients
    delta: (L, H) positive per-step, per-head timescales
    """

    a_log: Tensor
    B: Tensor
    C: Tensor
    D: Tensor
    delta: Tensor

    def arrays(self):
        return (self.a_log.data, self.B.data, self.C.data, self.D.data,
                self.delta.data)


def discretize(a, b, delta):
    """Zero-order-hold decay with first-order input coefficient.

    Returns (a_bar, b_bar) = (exp(delta * a), delta * b) as numpy arrays;
    ``a`` is the effective (negative) decay scalar per head.
    """
    a = np.asarray(a)
    b = np.asarray(b)
    delta = np.asarray(delta)
    if np.any(delta <= 0):
        raise ParameterizationError(
            f"discretize: delta must be positive, got min {delta.min()}")
    if not np.all(np.isfinite(a)):
        raise ParameterizationError("discretize: non-finite decay parameter")
    return np.exp(delta * a), delta * b


def _check_scan_inputs(x: Tensor, coeffs: SsmCoeffs):
    if x.ndim != 3:
        raise ValueError(f"scan input must be (L, heads, head_dim), got {x.shape}")
    L, H, _ = x.shape
    if coeffs.B.shape != coeffs.C.shape or coeffs.B.ndim != 2:
        raise ValueError(f"B/C shapes differ: {coeffs.B.shape} vs {coeffs.C.shape}")
    if coeffs.B.shape[0] != L or coeffs.delta.shape != (L, H):
        raise ValueError(
            f"coefficient lengths do not match input: x {x.shape}, "
            f"B {coeffs.B.shape}, delta {coeffs.delta.shape}")
    if coeffs.a_log.shape != (H,) or coeffs.D.shape != (H,):
        raise ValueError(f"per-head parameter shapes must be ({H},), got "
                         f"a_log {coeffs.a_log.shape}, D {coeffs.D.shape}")
    if np.any(coeffs.delta.data <= 0):
        raise ParameterizationError("scan: delta must be positive (softplus upstream?)")


def _raise_if_unstable(y: np.ndarray):
    finite = np.isfinite(y).reshape(y.shape[0], -1).all(axis=1)
    if not finite.all():
        t = int(np.argmin(finite))
        raise StabilityError(f"scan state became non-finite at timestep {t}")


def _wrap(op_name, x, coeffs, y, bwd):
    """Record one graph node covering the whole scan."""

    def vjp(g):
        gx, gA, gB, gC, gD, gdelta = bwd(np.ascontiguousarray(g))
        a_eff = -np.exp(coeffs.a_log.data)
        return gx, gA * a_eff, gB, gC, gD, gdelta

    return custom_op(op_name, y, (x, coeffs.a_log, coeffs.B, coeffs.C,
                                  coeffs.D, coeffs.delta), vjp)


_CKPT_EVERY = 64


def scan_sequential(x: Tensor, coeffs: SsmCoeffs) -> Tensor:
    """Exact one-step-at-a-time recurrence (oracle path), differentiable."""
    _check_scan_inputs(x, coeffs)
    L = x.shape[0]
    if L == 0:
        return Tensor(np.empty_like(x.data))
    a_log, B, C, D, delta = coeffs.arrays()
    a_eff = -np.exp(a_log)
    xd = np.ascontiguousarray(x.data)
    with np.errstate(over="ignore", invalid="ignore"):
        y, ckpts = _kernels.seq_fwd(xd, a_eff, np.ascontiguousarray(B),
                                    np.ascontiguousarray(C), D,
                                    np.ascontiguousarray(delta), _CKPT_EVERY)
    _raise_if_unstable(y)

    def bwd(g):
        return _kernels.seq_bwd(xd, a_eff, B, C, D, delta, ckpts, _CKPT_EVERY, g)

    return _wrap("scan_sequential", x, coeffs, y, bwd)


def scan_chunked(x: Tensor, coeffs: SsmCoeffs, chunk_size: int = 64) -> Tensor:
    """Blockwise scan, mathematically identical to ``scan_sequential``.

    chunk_size=1 degenerates to the sequential recurrence and is
    delegated to it, so the two are bit-identical there.
    """
    if chunk_size < 1:
        raise ValueError(f"chunk_size must be >= 1, got {chunk_size}")
    _check_scan_inputs(x, coeffs)
    if chunk_size == 1:
        return scan_sequential(x, coeffs)
    L = x.shape[0]
    if L == 0:
        return Tensor(np.empty_like(x.data))
    chunk_size = min(int(chunk_size), L)  # no padding past the sequence end

    a_log, B, C, D, delta = coeffs.arrays()
    a_eff = -np.exp(a_log)
    xd = np.ascontiguousarray(x.data)
    B = np.ascontiguousarray(B)
    C = np.ascontiguousarray(C)
    delta = np.ascontiguousarray(delta)
    with np.errstate(over="ignore", invalid="ignore"):
        y, ctx = _kernels.chunk_fwd(xd, a_eff, B, C, D, delta, int(chunk_size))
    _raise_if_unstable(y)

    def bwd(g):
        return _kernels.chunk_bwd(xd, a_eff, B, C, D, delta, ctx,
                                  int(chunk_size), g)

    return _wrap("scan_chunked", x, coeffs, y, bwd)
