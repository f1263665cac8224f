# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled chunked selective-scan kernels.

Same contract as chunk_ref: x (L,H,P), A (H,), B (L,N), C (L,N), D (H,),
delta (L,H). The recurrence runs straight-line per step (compiled code
needs no matrix batching to hit a good constant); chunk_size sets how
often entering states are checkpointed, which bounds backward memory to
one chunk of recomputed states.
"""

import numpy as np

from libc.math cimport exp

ctypedef fused real:
    float
    double

BACKEND = "compiled"


def chunk_fwd(real[:, :, ::1] x, real[::1] A, real[:, ::1] B, real[:, ::1] C,
              real[::1] D, real[:, ::1] delta, Py_ssize_t chunk_size=64):
    cdef Py_ssize_t L = x.shape[0], H = x.shape[1], P = x.shape[2], N = B.shape[1]
    cdef Py_ssize_t n_ckpt = (L + chunk_size - 1) // chunk_size if L > 0 else 0
    dtype = np.float32 if real is float else np.float64
    y_arr = np.empty((L, H, P), dtype=dtype)
    ck_arr = np.zeros((n_ckpt, H, P, N), dtype=dtype)
    s_arr = np.zeros((H, P, N), dtype=dtype)
    cdef real[:, :, ::1] y = y_arr
    cdef real[:, :, ::1] S = s_arr
    cdef Py_ssize_t t, h, p, n
    cdef real a, u, acc, dsk

    for t in range(L):
        if t % chunk_size == 0:
            ck_arr[t // chunk_size] = s_arr
        for h in range(H):
            a = <real> exp(<double> delta[t, h] * <double> A[h])
            dsk = D[h]
            for p in range(P):
                u = delta[t, h] * x[t, h, p]
                acc = 0
                for n in range(N):
                    S[h, p, n] = a * S[h, p, n] + u * B[t, n]
                    acc += S[h, p, n] * C[t, n]
                y[t, h, p] = acc + dsk * x[t, h, p]
    return y_arr, ck_arr


def chunk_bwd(real[:, :, ::1] x, real[::1] A, real[:, ::1] B, real[:, ::1] C,
              real[::1] D, real[:, ::1] delta, real[:, :, :, ::1] ckpts,
              Py_ssize_t chunk_size, real[:, :, ::1] g):
    cdef Py_ssize_t L = x.shape[0], H = x.shape[1], P = x.shape[2], N = B.shape[1]
    dtype = np.float32 if real is float else np.float64
    gx_arr = np.empty((L, H, P), dtype=dtype)
    gA_arr = np.zeros(H, dtype=dtype)
    gB_arr = np.zeros((L, N), dtype=dtype)
    gC_arr = np.zeros((L, N), dtype=dtype)
    gD_arr = np.zeros(H, dtype=dtype)
    gdelta_arr = np.empty((L, H), dtype=dtype)
    lam_arr = np.zeros((H, P, N), dtype=dtype)
    states_arr = np.empty((chunk_size + 1, H, P, N), dtype=dtype)

    cdef real[:, :, ::1] gx = gx_arr
    cdef real[::1] gA = gA_arr
    cdef real[:, ::1] gB = gB_arr
    cdef real[:, ::1] gC = gC_arr
    cdef real[::1] gD = gD_arr
    cdef real[:, ::1] gdelta = gdelta_arr
    cdef real[:, :, ::1] lam = lam_arr
    cdef real[:, :, :, ::1] states = states_arr

    cdef Py_ssize_t n_win = (L + chunk_size - 1) // chunk_size
    cdef Py_ssize_t w, start, stop, t, h, p, n, i
    cdef real a, u, gt, xt, lv
    cdef double ga, gu, gd_acc, gD_acc

    for w in range(n_win - 1, -1, -1):
        start = w * chunk_size
        stop = start + chunk_size
        if stop > L:
            stop = L
        states_arr[0] = np.asarray(ckpts[w])
        # recompute entering/exiting states across the chunk
        for i in range(stop - start):
            t = start + i
            for h in range(H):
                a = <real> exp(<double> delta[t, h] * <double> A[h])
                for p in range(P):
                    u = delta[t, h] * x[t, h, p]
                    for n in range(N):
                        states[i + 1, h, p, n] = a * states[i, h, p, n] + u * B[t, n]
        for t in range(stop - 1, start - 1, -1):
            i = t - start
            for h in range(H):
                a = <real> exp(<double> delta[t, h] * <double> A[h])
                ga = 0.0
                gd_acc = 0.0
                gD_acc = 0.0
                for p in range(P):
                    gt = g[t, h, p]
                    xt = x[t, h, p]
                    u = delta[t, h] * xt
                    gD_acc += <double> gt * <double> xt
                    gu = 0.0
                    for n in range(N):
                        gC[t, n] += states[i + 1, h, p, n] * gt
                        lv = lam[h, p, n] + gt * C[t, n]
                        lam[h, p, n] = lv
                        ga += <double> lv * <double> states[i, h, p, n]
                        gu += <double> lv * <double> B[t, n]
                        gB[t, n] += lv * u
                    gx[t, h, p] = D[h] * gt + delta[t, h] * <real> gu
                    gd_acc += <double> xt * gu
                gD[h] += <real> gD_acc
                gdelta[t, h] = <real> (gd_acc + ga * <double> A[h] * <double> a)
                gA[h] += <real> (ga * <double> delta[t, h] * <double> a)
                for p in range(P):
                    for n in range(N):
                        lam[h, p, n] = lam[h, p, n] * a
    return gx_arr, gA_arr, gB_arr, gC_arr, gD_arr, gdelta_arr
