"""Circular (wrap-around) convolution kernels compiled with numba.

All kernels are cross-correlations over odd kernels centred on the output
point. Inputs are padded once with periodic halos so the inner loops run
over contiguous memory.
"""
import numpy as np
from numba import njit


@njit(cache=True, nogil=True)
def _pad1d(x, r):
    B, C, n = x.shape
    xp = np.empty((B, C, n + 2 * r))
    xp[:, :, r:r + n] = x
    xp[:, :, :r] = x[:, :, n - r:]
    xp[:, :, r + n:] = x[:, :, :r]
    return xp


@njit(cache=True, nogil=True)
def _pad2d(x, r):
    B, C, n, m = x.shape
    xp = np.empty((B, C, n + 2 * r, m + 2 * r))
    for i in range(n + 2 * r):
        si = (i - r) % n
        for j in range(m + 2 * r):
            sj = (j - r) % m
            xp[:, :, i, j] = x[:, :, si, sj]
    return xp


@njit(cache=True, nogil=True)
def conv1d_forward(x, w, bias):
    B, C, n = x.shape
    O, _, k = w.shape
    xp = _pad1d(x, k // 2)
    out = np.empty((B, O, n))
    for b in range(B):
        for o in range(O):
            for i in range(n):
                out[b, o, i] = bias[o]
            for c in range(C):
                for t in range(k):
                    wv = w[o, c, t]
                    for i in range(n):
                        out[b, o, i] += wv * xp[b, c, i + t]
    return out


@njit(cache=True, nogil=True)
def conv1d_grad_weight(x, gout, k):
    B, C, n = x.shape
    O = gout.shape[1]
    xp = _pad1d(x, k // 2)
    gw = np.zeros((O, C, k))
    for o in range(O):
        for c in range(C):
            for t in range(k):
                acc = 0.0
                for b in range(B):
                    for i in range(n):
                        acc += gout[b, o, i] * xp[b, c, i + t]
                gw[o, c, t] = acc
    return gw


@njit(cache=True, nogil=True)
def conv2d_forward(x, w, bias):
    B, C, n, m = x.shape
    O, _, k, _ = w.shape
    xp = _pad2d(x, k // 2)
    out = np.empty((B, O, n, m))
    for b in range(B):
        for o in range(O):
            for i in range(n):
                for j in range(m):
                    out[b, o, i, j] = bias[o]
            for c in range(C):
                for ty in range(k):
                    for tx in range(k):
                        wv = w[o, c, ty, tx]
                        for i in range(n):
                            for j in range(m):
                                out[b, o, i, j] += wv * xp[b, c, i + ty, j + tx]
    return out


@njit(cache=True, nogil=True)
def conv2d_grad_weight(x, gout, k):
    B, C, n, m = x.shape
    O = gout.shape[1]
    xp = _pad2d(x, k // 2)
    gw = np.zeros((O, C, k, k))
    for o in range(O):
        for c in range(C):
            for ty in range(k):
                for tx in range(k):
                    acc = 0.0
                    for b in range(B):
                        for i in range(n):
                            for j in range(m):
                                acc += gout[b, o, i, j] * xp[b, c, i + ty, j + tx]
                    gw[o, c, ty, tx] = acc
    return gw
