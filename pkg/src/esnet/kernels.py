"""Backend dispatch for the convolution hot loops.

The backend is chosen once at import time from the ``ESNET_BACKEND``
environment variable (``numba`` or ``numpy``). ``numba`` is the default when
it imports cleanly; otherwise the pure-numpy path is used.
"""
import os
import types

import numpy as np

from . import _kernels_numpy

try:
    from . import _kernels_numba
    HAS_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    _kernels_numba = None
    HAS_NUMBA = False

BACKENDS = {"numpy": _kernels_numpy}
if HAS_NUMBA:
    BACKENDS["numba"] = _kernels_numba


def _select(name):
    if name is None:
        return "numba" if HAS_NUMBA else "numpy"
    name = name.strip().lower()
    if name not in ("numba", "numpy"):
        raise ValueError(f"ESNET_BACKEND must be 'numba' or 'numpy', got {name!r}")
    if name == "numba" and not HAS_NUMBA:
        raise ImportError("ESNET_BACKEND=numba requested but numba is not importable")
    return name


BACKEND = _select(os.environ.get("ESNET_BACKEND"))


def get_backend(name=None) -> types.ModuleType:
    return BACKENDS[name or BACKEND]


def _flip_transpose(w):
    # grad wrt input is a correlation with the spatially flipped, channel-swapped kernel
    spatial = tuple(range(2, w.ndim))
    return np.ascontiguousarray(np.flip(w, axis=spatial).swapaxes(0, 1))


def conv_forward(x, w, bias, backend=None):
    impl = get_backend(backend)
    if x.ndim == 3:
        return impl.conv1d_forward(x, w, bias)
    return impl.conv2d_forward(x, w, bias)


def conv_grad_input(gout, w, backend=None):
    wt = _flip_transpose(w)
    return conv_forward(gout, wt, np.zeros(wt.shape[0]), backend)


def conv_grad_weight(x, gout, k, backend=None):
    impl = get_backend(backend)
    if x.ndim == 3:
        return impl.conv1d_grad_weight(x, gout, k)
    return impl.conv2d_grad_weight(x, gout, k)
