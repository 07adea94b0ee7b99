"""Pure-numpy circular convolution kernels (fallback path).

Same contracts as :mod:`esnet._kernels_numba`; the loop over kernel taps is
explicit and each tap is a vectorized channel contraction.
"""
import numpy as np


def _pad(x, r):
    width = [(0, 0), (0, 0)] + [(r, r)] * (x.ndim - 2)
    return np.pad(x, width, mode="wrap")


def conv1d_forward(x, w, bias):
    n = x.shape[-1]
    k = w.shape[-1]
    xp = _pad(x, k // 2)
    out = np.broadcast_to(bias[None, :, None], (x.shape[0], w.shape[0], n)).copy()
    for t in range(k):
        out += np.einsum("oc,bcn->bon", w[:, :, t], xp[:, :, t:t + n])
    return out


def conv1d_grad_weight(x, gout, k):
    n = x.shape[-1]
    xp = _pad(x, k // 2)
    gw = np.empty((gout.shape[1], x.shape[1], k))
    for t in range(k):
        gw[:, :, t] = np.einsum("bon,bcn->oc", gout, xp[:, :, t:t + n])
    return gw


def conv2d_forward(x, w, bias):
    n, m = x.shape[-2:]
    k = w.shape[-1]
    xp = _pad(x, k // 2)
    out = np.broadcast_to(bias[None, :, None, None], (x.shape[0], w.shape[0], n, m)).copy()
    for ty in range(k):
        for tx in range(k):
            out += np.einsum("oc,bcij->boij", w[:, :, ty, tx], xp[:, :, ty:ty + n, tx:tx + m])
    return out


def conv2d_grad_weight(x, gout, k):
    n, m = x.shape[-2:]
    xp = _pad(x, k // 2)
    gw = np.empty((gout.shape[1], x.shape[1], k, k))
    for ty in range(k):
        for tx in range(k):
            gw[:, :, ty, tx] = np.einsum("boij,bcij->oc", gout, xp[:, :, ty:ty + n, tx:tx + m])
    return gw
