"""Energy-stable block network and its parameter-matched plain baseline.

Each block runs a small circular-conv net on the incoming phase field. For
the ``estable-g`` kind its output g plays the role of 1/H and drives

    U' = g * Ginv(phi),    phi' = phi + 2 g (U' - U)

with one evaluation of g shared by both lines; that sharing is what makes the
discrete energy -1/2|phi|^2 + |U|^2 - C|Omega| drop by exactly
1/2|phi' - phi|^2 + |U' - U|^2 for any weights.
"""
import struct
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Parameter, Tensor
from .spectral import G_INVERSE_KINDS, IDENTITY, Grid, aux_u_init, aux_utilde_init, g_inverse

ESTABLE = "estable-g"
AUX_TILDE = "aux-tilde"
PLAIN = "plain"
KINDS = (ESTABLE, AUX_TILDE, PLAIN)

DEFAULT_CHANNELS = (1, 16, 1, 16, 1)

CHECKPOINT_MAGIC = b"ESNETCK1"
CHECKPOINT_VERSION = 1


@dataclass
class ConvLayer:
    weight: Parameter
    bias: Parameter

    @property
    def fan_in(self):
        w = self.weight.value
        return w.shape[1] * int(np.prod(w.shape[2:]))

    @property
    def fan_out(self):
        w = self.weight.value
        return w.shape[0] * int(np.prod(w.shape[2:]))


@dataclass
class BlockParams:
    convs: list

    def parameters(self):
        for conv in self.convs:
            yield conv.weight
            yield conv.bias

    @property
    def count(self):
        return sum(p.size for p in self.parameters())


def make_block(dims, kernel, channels=DEFAULT_CHANNELS, prefix="block"):
    convs = []
    for i, (cin, cout) in enumerate(zip(channels[:-1], channels[1:])):
        shape = (cout, cin) + (kernel,) * dims
        convs.append(ConvLayer(
            Parameter(np.zeros(shape), name=f"{prefix}.conv{i}.weight"),
            Parameter(np.zeros(cout), name=f"{prefix}.conv{i}.bias"),
        ))
    return BlockParams(convs)


@dataclass
class BlockState:
    phi: Tensor
    u: Tensor = None
    g: Tensor = None  # network output of the block that produced this state


@dataclass
class EStableNet:
    dims: int
    blocks: list
    kind: str = ESTABLE
    kernel: int = 21
    channels: tuple = DEFAULT_CHANNELS
    epsilon: float = 0.01
    C: float = 0.0
    dt: float = 0.0
    g_inverse_kind: str = IDENTITY
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown network kind {self.kind!r}")
        if self.g_inverse_kind not in G_INVERSE_KINDS:
            raise ValueError(f"unknown g_inverse kind {self.g_inverse_kind!r}")
        if not self.blocks:
            raise ValueError("network needs at least one block")

    @classmethod
    def build(cls, dims, n_blocks, kernel, kind=ESTABLE, channels=DEFAULT_CHANNELS,
              epsilon=0.01, C=0.0, t_end=5.0, g_inverse_kind=IDENTITY):
        if kernel % 2 == 0:
            raise ValueError(f"kernel size must be odd, got {kernel}")
        channels = tuple(channels)
        if channels[0] != 1 or channels[-1] != 1:
            raise ValueError(f"block nets map one channel to one channel, got {channels}")
        blocks = [make_block(dims, kernel, channels, prefix=f"block{j}") for j in range(n_blocks)]
        return cls(dims=dims, blocks=blocks, kind=kind, kernel=kernel, channels=channels,
                   epsilon=epsilon, C=C, dt=t_end / n_blocks, g_inverse_kind=g_inverse_kind)

    @property
    def n_blocks(self):
        return len(self.blocks)

    def parameters(self):
        for block in self.blocks:
            yield from block.parameters()

    def parameter_count(self):
        return sum(p.size for p in self.parameters())

    def zero_grad(self):
        for p in self.parameters():
            p.zero_grad()

    def get_values(self):
        return [p.value.copy() for p in self.parameters()]

    def set_values(self, values):
        params = list(self.parameters())
        if len(values) != len(params):
            raise ValueError("parameter list length mismatch")
        for p, v in zip(params, values):
            if v.shape != p.shape:
                raise ValueError(f"{p.name}: shape {v.shape} != {p.shape}")
            p.value = np.array(v, dtype=np.float64)


def block_net_forward(params: BlockParams, phi: Tensor) -> Tensor:
    """conv -> tanh -> conv -> tanh -> conv -> tanh -> conv (no final activation)."""
    if phi.shape[1] != params.convs[0].weight.shape[1]:
        raise ValueError(f"block net expects {params.convs[0].weight.shape[1]} channel(s), got {phi.shape[1]}")
    h = phi
    last = len(params.convs) - 1
    for i, conv in enumerate(params.convs):
        h = ad.conv_circular(h, conv.weight, conv.bias)
        if i < last:
            h = ad.tanh(h)
    return h


def _g_inverse_fn(kind_or_fn, grid):
    if callable(kind_or_fn):
        return kind_or_fn
    if kind_or_fn == IDENTITY:
        return None
    return lambda a: g_inverse(a, grid, kind_or_fn, strict=False)


def estable_block_step(state: BlockState, params: BlockParams, g_inverse_kind=IDENTITY) -> BlockState:
    """``g_inverse_kind`` is an operator name or a callable standing in for a
    learned / approximate inverse mobility."""
    phi, u = state.phi, state.u
    g = block_net_forward(params, phi)
    grid = Grid(phi.value.ndim - 2, phi.shape[-1])
    fn = _g_inverse_fn(g_inverse_kind, grid)
    ginv_phi = phi if fn is None else ad.linear_map(phi, fn)
    u_next = ad.mul(g, ginv_phi)
    phi_next = ad.add(phi, ad.scale(ad.mul(g, ad.sub(u_next, u)), 2.0))
    return BlockState(phi_next, u_next, g)


def auxtilde_block_step(state: BlockState, params: BlockParams, dt: float) -> BlockState:
    """Here the net output is H itself; the multiplier 1/(1 + dt H^2 / 2) lies in (0, 1]."""
    phi, u = state.phi, state.u
    H = block_net_forward(params, phi)
    factor = ad.reciprocal(ad.shift(ad.scale(ad.mul(H, H), 0.5 * dt), 1.0))
    u_next = ad.mul(factor, u)
    phi_next = ad.sub(phi, ad.mul(ad.scale(ad.mul(H, factor), dt), u))
    return BlockState(phi_next, u_next, H)


def plain_block_step(state: BlockState, params: BlockParams) -> BlockState:
    out = block_net_forward(params, state.phi)
    return BlockState(out, state.u, out)


def initial_state(net: EStableNet, phi0) -> BlockState:
    """Wrap a batch of fields (batch, *spatial) or (batch, 1, *spatial) as the block-0 state."""
    phi0 = np.asarray(phi0, dtype=np.float64)
    if phi0.ndim == net.dims + 1:
        phi0 = phi0[:, None]
    if phi0.ndim != net.dims + 2 or phi0.shape[1] != 1:
        raise ValueError(f"expected (batch, [1,] {'n, ' * net.dims}) input, got {phi0.shape}")
    grid = Grid(net.dims, phi0.shape[-1])
    fields = phi0[:, 0]
    if net.kind == ESTABLE:
        u0 = aux_u_init(fields, grid, net.epsilon, net.C)[:, None]
    elif net.kind == AUX_TILDE:
        u0 = aux_utilde_init(fields, grid, net.epsilon, net.C)[:, None]
    else:
        u0 = None
    return BlockState(Tensor(phi0), None if u0 is None else Tensor(u0))


def forward(net: EStableNet, phi0):
    """Run all blocks. Returns (final phi tensor, list of M+1 states)."""
    state = initial_state(net, phi0)
    trace = [state]
    for params in net.blocks:
        if net.kind == ESTABLE:
            state = estable_block_step(state, params, net.g_inverse_kind)
        elif net.kind == AUX_TILDE:
            state = auxtilde_block_step(state, params, net.dt)
        else:
            state = plain_block_step(state, params)
        trace.append(state)
    return state.phi, trace


def predict(net: EStableNet, phi0, batch_size=64):
    """Gradient-free forward returning final fields shaped like the input batch."""
    phi0 = np.asarray(phi0, dtype=np.float64)
    outs = []
    with ad.no_grad():
        for start in range(0, len(phi0), batch_size):
            out, _ = forward(net, phi0[start:start + batch_size])
            outs.append(out.value[:, 0])
    return np.concatenate(outs, axis=0)


XAVIER = "xavier-uniform"
KAIMING = "kaiming-uniform"
# what deep-learning frameworks apply to a fresh conv layer when no scheme is
# requested: kaiming-uniform with negative slope sqrt(5), i.e. bound 1/sqrt(fan_in)
FRAMEWORK_DEFAULT = "framework-default"
INIT_SCHEMES = (XAVIER, KAIMING, FRAMEWORK_DEFAULT)


def init_bounds(layer: ConvLayer, scheme: str):
    """Return (weight bound, bias bound); bias bound 0 means zero biases."""
    if scheme == XAVIER:
        return np.sqrt(6.0 / (layer.fan_in + layer.fan_out)), 0.0
    if scheme == KAIMING:
        return np.sqrt(6.0 / layer.fan_in), 1.0 / np.sqrt(layer.fan_in)
    if scheme == FRAMEWORK_DEFAULT:
        return 1.0 / np.sqrt(layer.fan_in), 1.0 / np.sqrt(layer.fan_in)
    raise ValueError(f"unknown init scheme {scheme!r}; choose from {INIT_SCHEMES}")


def init_params(net: EStableNet, scheme: str = XAVIER, seed: int = 0):
    rng = np.random.default_rng(seed)
    for block in net.blocks:
        for conv in block.convs:
            a, c = init_bounds(conv, scheme)
            conv.weight.value = rng.uniform(-a, a, size=conv.weight.shape)
            if c > 0:
                conv.bias.value = rng.uniform(-c, c, size=conv.bias.shape)
            else:
                conv.bias.value = np.zeros(conv.bias.shape)
            conv.weight.zero_grad()
            conv.bias.zero_grad()
    return net


# checkpoint I/O ------------------------------------------------------------

_KIND_CODES = {ESTABLE: 0, AUX_TILDE: 1, PLAIN: 2}
_HEADER = struct.Struct("<8sIIII")


class CheckpointError(ValueError):
    pass


def save_checkpoint(net: EStableNet, path):
    parts = [_HEADER.pack(CHECKPOINT_MAGIC, CHECKPOINT_VERSION, _KIND_CODES[net.kind],
                          net.n_blocks, net.kernel)]
    parts.append(struct.pack("<I", len(net.channels)))
    parts.append(struct.pack(f"<{len(net.channels)}I", *net.channels))
    parts.append(struct.pack("<Iddd", net.dims, net.epsilon, net.C, net.dt))
    for p in net.parameters():
        parts.append(np.ascontiguousarray(p.value, dtype="<f8").tobytes())
    with open(path, "wb") as fh:
        fh.write(b"".join(parts))


def load_checkpoint(path) -> EStableNet:
    with open(path, "rb") as fh:
        data = fh.read()
    try:
        magic, version, kind_code, n_blocks, kernel = _HEADER.unpack_from(data, 0)
    except struct.error as exc:
        raise CheckpointError(f"{path}: truncated checkpoint header") from exc
    if magic != CHECKPOINT_MAGIC:
        raise CheckpointError(f"{path}: bad magic {magic!r}")
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
    kinds = {v: k for k, v in _KIND_CODES.items()}
    if kind_code not in kinds:
        raise CheckpointError(f"{path}: unknown kind code {kind_code}")
    off = _HEADER.size
    try:
        (nch,) = struct.unpack_from("<I", data, off)
        off += 4
        channels = struct.unpack_from(f"<{nch}I", data, off)
        off += 4 * nch
        dims, eps, C, dt = struct.unpack_from("<Iddd", data, off)
        off += struct.calcsize("<Iddd")
    except struct.error as exc:
        raise CheckpointError(f"{path}: truncated checkpoint header") from exc
    if dims not in (1, 2):
        raise CheckpointError(f"{path}: bad dims {dims}")
    net = EStableNet.build(dims, n_blocks, kernel, kind=kinds[kind_code], channels=channels,
                           epsilon=eps, C=C, t_end=dt * n_blocks)
    net.dt = dt
    for p in net.parameters():
        nbytes = 8 * p.size
        if off + nbytes > len(data):
            raise CheckpointError(f"{path}: truncated parameter data at {p.name}")
        p.value = np.frombuffer(data, dtype="<f8", count=p.size, offset=off).astype(np.float64).reshape(p.shape)
        p.zero_grad()
        off += nbytes
    if off != len(data):
        raise CheckpointError(f"{path}: {len(data) - off} trailing bytes")
    return net
