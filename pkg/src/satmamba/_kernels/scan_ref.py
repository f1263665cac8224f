"""Numpy sequential selective-scan: the reference recurrence.

Shapes: x (L, H, P), A (H,), B (L, N), C (L, N), D (H,), delta (L, H).
The recurrence per head, with state S of shape (P, N):

    a_t = exp(delta_t * A)
    S   = a_t * S + (delta_t * x_t) outer B_t
    y_t = S @ C_t + D * x_t

This path is the oracle the chunked kernels are tested against, so it
stays a plain one-step-at-a-time loop. Forward stores the entering state
every ``ckpt_every`` steps; backward recomputes states window by window
instead of keeping all L of them.
"""

from __future__ import annotations

import numpy as np


def seq_fwd(x, A, B, C, D, delta, ckpt_every=64):
    L, H, P = x.shape
    N = B.shape[1]
    n_ckpt = (L + ckpt_every - 1) // ckpt_every if L else 0
    y = np.empty_like(x)
    ckpts = np.zeros((n_ckpt, H, P, N), dtype=x.dtype)
    S = np.zeros((H, P, N), dtype=x.dtype)
    for t in range(L):
        if t % ckpt_every == 0:
            ckpts[t // ckpt_every] = S
        a = np.exp(delta[t] * A)                          # (H,)
        u = delta[t][:, None] * x[t]                      # (H, P)
        S = a[:, None, None] * S + u[:, :, None] * B[t]
        y[t] = S @ C[t] + D[:, None] * x[t]
    return y, ckpts


def seq_bwd(x, A, B, C, D, delta, ckpts, ckpt_every, g):
    L, H, P = x.shape
    N = B.shape[1]
    gx = np.empty_like(x)
    gA = np.zeros_like(A)
    gB = np.zeros_like(B)
    gC = np.zeros_like(C)
    gD = np.zeros_like(D)
    gdelta = np.empty_like(delta)
    lam = np.zeros((H, P, N), dtype=x.dtype)

    n_win = (L + ckpt_every - 1) // ckpt_every
    for w in range(n_win - 1, -1, -1):
        start = w * ckpt_every
        stop = min(start + ckpt_every, L)
        # recompute entering states for every step of the window
        states = np.empty((stop - start + 1, H, P, N), dtype=x.dtype)
        states[0] = ckpts[w]
        S = ckpts[w].copy()
        for i, t in enumerate(range(start, stop)):
            a = np.exp(delta[t] * A)
            u = delta[t][:, None] * x[t]
            S = a[:, None, None] * S + u[:, :, None] * B[t]
            states[i + 1] = S
        for t in range(stop - 1, start - 1, -1):
            s_in = states[t - start]
            s_out = states[t - start + 1]
            a = np.exp(delta[t] * A)
            u = delta[t][:, None] * x[t]
            gC[t] += np.einsum("hpn,hp->n", s_out, g[t])
            gD += np.sum(g[t] * x[t], axis=1)
            lam += g[t][:, :, None] * C[t]
            ga = np.einsum("hpn,hpn->h", lam, s_in)
            gu = lam @ B[t]                               # (H, P)
            gB[t] += np.einsum("hpn,hp->n", lam, u)
            gx[t] = D[:, None] * g[t] + delta[t][:, None] * gu
            gdelta[t] = np.sum(x[t] * gu, axis=1) + ga * A * a
            gA += ga * delta[t] * a
            lam *= a[:, None, None]
    return gx, gA, gB, gC, gD, gdelta
