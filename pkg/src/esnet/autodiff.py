"""Define-by-run reverse-mode differentiation over float64 numpy arrays.

Only the operations the network needs are provided. Each op records its
parents and a closure mapping the output cotangent to parent cotangents; the
graph is torn down after :meth:`Tensor.backward`.
"""
import contextlib

import numpy as np

from . import kernels

_GRAD_ENABLED = True


@contextlib.contextmanager
def no_grad():
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


def is_grad_enabled() -> bool:
    return _GRAD_ENABLED


class Tensor:
    __slots__ = ("value", "grad", "requires_grad", "_parents", "_vjp", "name")

    def __init__(self, value, requires_grad=False, name=None):
        self.value = np.asarray(value, dtype=np.float64)
        self.grad = None
        self.requires_grad = requires_grad
        self._parents = ()
        self._vjp = None
        self.name = name

    @property
    def shape(self):
        return self.value.shape

    @property
    def size(self):
        return self.value.size

    def __repr__(self):
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{tag}, requires_grad={self.requires_grad})"

    def zero_grad(self):
        self.grad = np.zeros_like(self.value)

    def backward(self):
        if self.size != 1:
            raise ValueError(f"backward needs a scalar, got shape {self.shape}")
        order = _topological(self)
        cot = {id(self): np.ones_like(self.value)}
        for node in reversed(order):
            g = cot.pop(id(node), None)
            if g is None:
                continue
            if node._vjp is None:
                if node.requires_grad:
                    if node.grad is None:
                        node.grad = np.zeros_like(node.value)
                    node.grad += g
                continue
            for parent, pg in zip(node._parents, node._vjp(g)):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                if key in cot:
                    cot[key] = cot[key] + pg
                else:
                    cot[key] = pg
        for node in order:
            if node._vjp is not None:
                node._parents = ()
                node._vjp = None

    # operator sugar
    def __add__(self, other):
        return add(self, _wrap(other, self))

    def __radd__(self, other):
        return add(_wrap(other, self), self)

    def __sub__(self, other):
        return sub(self, _wrap(other, self))

    def __rsub__(self, other):
        return sub(_wrap(other, self), self)

    def __mul__(self, other):
        if np.isscalar(other):
            return scale(self, other)
        return mul(self, _wrap(other, self))

    def __rmul__(self, other):
        return self.__mul__(other)

    def __neg__(self):
        return scale(self, -1.0)


class Parameter(Tensor):
    """Trainable leaf; gradients accumulate into ``grad``."""

    __slots__ = ()

    def __init__(self, value, name=None):
        super().__init__(np.array(value, dtype=np.float64), requires_grad=True, name=name)
        self.zero_grad()


def _wrap(x, like):
    if isinstance(x, Tensor):
        return x
    if np.isscalar(x):
        return Tensor(np.full(like.shape, float(x)))
    return Tensor(x)


def _topological(root):
    order, seen = [], set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in seen:
                stack.append((p, False))
    return order


def _make(value, parents, vjp):
    out = Tensor(value)
    if _GRAD_ENABLED and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._vjp = vjp
    return out


def _same_shape(x, y, op):
    if x.shape != y.shape:
        raise ValueError(f"{op}: shape mismatch {x.shape} vs {y.shape}")


def as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def add(x, y):
    _same_shape(x, y, "add")
    return _make(x.value + y.value, (x, y), lambda g: (g, g))


def sub(x, y):
    _same_shape(x, y, "sub")
    return _make(x.value - y.value, (x, y), lambda g: (g, -g))


def mul(x, y):
    _same_shape(x, y, "mul")
    xv, yv = x.value, y.value
    return _make(xv * yv, (x, y), lambda g: (g * yv, g * xv))


def scale(x, c):
    c = float(c)
    return _make(x.value * c, (x,), lambda g: (g * c,))


def shift(x, c):
    """x + c for a scalar constant c."""
    return _make(x.value + float(c), (x,), lambda g: (g,))


def reciprocal(x):
    r = 1.0 / x.value
    return _make(r, (x,), lambda g: (-g * r * r,))


def tanh(x):
    y = np.tanh(x.value)
    return _make(y, (x,), lambda g: (g * (1.0 - y * y),))


def mean_sq(x):
    xv = x.value
    n = xv.size
    return _make(np.array(np.mean(xv * xv)), (x,), lambda g: (g * (2.0 / n) * xv,))


def linear_map(x, fn):
    """Apply a fixed self-adjoint linear operator ``fn`` (numpy -> numpy)."""
    return _make(fn(x.value), (x,), lambda g: (fn(g),))


def conv_circular(x, w, b):
    """Cross-correlation with periodic padding; output keeps the spatial shape.

    x: (batch, in_ch, *spatial); w: (out_ch, in_ch, k[, k]); b: (out_ch,).
    """
    xv, wv, bv = x.value, w.value, b.value
    spatial = xv.ndim - 2
    if spatial not in (1, 2) or wv.ndim != spatial + 2:
        raise ValueError(f"conv_circular: incompatible input {xv.shape} and kernel {wv.shape}")
    k = wv.shape[-1]
    if k % 2 == 0 or any(s != k for s in wv.shape[2:]):
        raise ValueError(f"conv_circular: kernel must be odd and square, got {wv.shape[2:]}")
    if wv.shape[1] != xv.shape[1]:
        raise ValueError(f"conv_circular: kernel expects {wv.shape[1]} input channels, got {xv.shape[1]}")
    if bv.shape != (wv.shape[0],):
        raise ValueError(f"conv_circular: bias shape {bv.shape} != ({wv.shape[0]},)")
    xv = np.ascontiguousarray(xv)
    out = kernels.conv_forward(xv, wv, bv)

    def vjp(g):
        g = np.ascontiguousarray(g)
        gx = kernels.conv_grad_input(g, wv) if x.requires_grad else None
        gw = kernels.conv_grad_weight(xv, g, k) if w.requires_grad else None
        gb = g.sum(axis=(0,) + tuple(range(2, g.ndim))) if b.requires_grad else None
        return gx, gw, gb

    return _make(out, (x, w, b), vjp)


# Registry used by property tests: name -> (fn, arity)
OPS = {
    "add": (add, 2),
    "sub": (sub, 2),
    "mul": (mul, 2),
    "scale": (lambda x: scale(x, -1.7), 1),
    "shift": (lambda x: shift(x, 0.3), 1),
    "reciprocal": (reciprocal, 1),
    "tanh": (tanh, 1),
    "mean_sq": (mean_sq, 1),
    "conv_circular": (conv_circular, 3),
}


def grad_check(f, inputs, h=1e-5):
    """Compare reverse-mode gradients of scalar ``f(*tensors)`` with central differences.

    ``inputs`` is a list of arrays; returns a dict with the max relative error
    and both gradient lists. Relative error uses max(|a|, |b|, 1e-8) per coordinate
    scaled by the largest gradient magnitude, so exact zeros compare cleanly.
    """
    arrays = [np.array(a, dtype=np.float64) for a in inputs]
    params = [Parameter(a) for a in arrays]
    out = f(*params)
    out.backward()
    analytic = [p.grad.copy() for p in params]

    numeric = []
    with no_grad():
        for a in arrays:
            g = np.zeros_like(a)
            flat = a.reshape(-1)
            gflat = g.reshape(-1)
            for i in range(flat.size):
                orig = flat[i]
                flat[i] = orig + h
                fp = float(f(*[Tensor(b) for b in arrays]).value)
                flat[i] = orig - h
                fm = float(f(*[Tensor(b) for b in arrays]).value)
                flat[i] = orig
                gflat[i] = (fp - fm) / (2 * h)
            numeric.append(g)

    scale_ = max(1e-8, max(float(np.max(np.abs(g))) for g in analytic + numeric))
    worst = 0.0
    for ga, gn in zip(analytic, numeric):
        if ga.size:
            worst = max(worst, float(np.max(np.abs(ga - gn))) / scale_)
    return {"max_rel_err": worst, "analytic": analytic, "numeric": numeric}
