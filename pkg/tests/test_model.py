import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from esnet import autodiff as ad
from esnet.diagnostics import verify_decay
from esnet.model import (AUX_TILDE, ESTABLE, FRAMEWORK_DEFAULT, KAIMING, PLAIN, XAVIER, CheckpointError, EStableNet, forward,
                         init_bounds, init_params, load_checkpoint, predict, save_checkpoint)
from esnet.spectral import INV_NEG_LAPLACIAN, Grid, aux_u_init, aux_utilde_init

from conftest import band_limited


def constant_output_net(kind, value, dims=1, n_blocks=1, t_end=5.0, kernel=5):
    """All weights zero and a final bias of ``value``: every block net outputs ``value``."""
    net = EStableNet.build(dims, n_blocks, kernel, kind=kind, t_end=t_end)
    for block in net.blocks:
        block.convs[-1].bias.value = np.full(1, float(value))
    return net


def test_parameter_counts():
    assert EStableNet.build(1, 1, 21).parameter_count() == 1378
    assert EStableNet.build(1, 4, 21).parameter_count() == 5512
    assert EStableNet.build(2, 1, 13).parameter_count() == 10850
    assert EStableNet.build(2, 5, 13).parameter_count() == 54250


def test_build_validation():
    with pytest.raises(ValueError):
        EStableNet.build(1, 4, 20)
    with pytest.raises(ValueError):
        EStableNet.build(1, 4, 21, kind="resnet")
    with pytest.raises(ValueError):
        EStableNet.build(1, 4, 21, channels=(2, 16, 1))


def test_zero_output_block_freezes_phi_and_zeroes_u(grid1d, rng):
    net = constant_output_net(ESTABLE, 0.0)
    phi0 = band_limited(grid1d, rng)[None]
    out, trace = forward(net, phi0)
    assert np.array_equal(out.value[0, 0], phi0[0])
    assert not trace[1].u.value.any()


def test_unit_output_block_hand_computed():
    grid = Grid(1, 16)
    net = constant_output_net(ESTABLE, 1.0)
    phi = 0.5
    u0 = math.sqrt(0.5 * phi ** 2 + 0.25 * (phi ** 2 - 1) ** 2)  # = sqrt(0.265625)
    out, trace = forward(net, np.full((1, grid.n), phi))
    assert np.allclose(trace[0].u.value, u0, rtol=1e-15, atol=0)
    assert np.allclose(trace[1].u.value, phi, rtol=0, atol=0)
    assert np.allclose(out.value, phi + 2 * (phi - u0), rtol=1e-15, atol=0)


def test_auxtilde_block_hand_computed():
    grid = Grid(1, 16)
    eps = 0.01
    net = constant_output_net(AUX_TILDE, 2.0, n_blocks=4, t_end=5.0)
    assert net.dt == 1.25
    phi = 0.5
    ut0 = abs(phi ** 2 - 1) / 2  # constant field: no gradient term
    factor = 1.0 / (1.0 + 0.5 * 1.25 * 4.0)
    _, trace = forward(net, np.full((1, grid.n), phi))
    assert np.allclose(trace[0].u.value, ut0, rtol=1e-15, atol=0)
    assert np.allclose(trace[1].u.value, factor * ut0, rtol=1e-15, atol=0)
    assert np.allclose(trace[1].phi.value, phi - 1.25 * 2.0 * factor * ut0, rtol=1e-15, atol=0)


def test_zero_weight_nets(grid1d, rng):
    phi0 = band_limited(grid1d, rng)[None]
    est = EStableNet.build(1, 4, 21)
    out, trace = forward(est, phi0)
    assert all(not s.g.value.any() for s in trace[1:])
    assert np.array_equal(out.value[:, 0], phi0)
    plain = EStableNet.build(1, 4, 21, kind=PLAIN)
    assert not predict(plain, phi0).any()
    plain.blocks[-1].convs[-1].bias.value = np.array([0.25])
    assert np.all(predict(plain, phi0) == 0.25)
    assert plain.parameter_count() == est.parameter_count()
    assert predict(plain, phi0).shape == phi0.shape


def test_auxtilde_zero_and_unit_dt():
    grid = Grid(1, 16)
    phi = np.full((1, grid.n), 0.3)
    ut0 = abs(0.3 ** 2 - 1) / 2
    out, trace = forward(constant_output_net(AUX_TILDE, 0.0, t_end=1.0), phi)
    assert np.array_equal(out.value[:, 0], phi) and np.allclose(trace[1].u.value, ut0, rtol=1e-15)
    out, trace = forward(constant_output_net(AUX_TILDE, 1.0, t_end=1.0), phi)
    assert np.allclose(trace[1].u.value, ut0 / 1.5, rtol=1e-15)
    assert np.allclose(out.value, 0.3 - ut0 * 2 / 3, rtol=1e-15)


def test_plain_forward_is_composition(grid1d, rng):
    net = init_params(EStableNet.build(1, 3, 5, kind=PLAIN), XAVIER, seed=1)
    phi0 = band_limited(grid1d, rng)[None, None]
    out, trace = forward(net, phi0)
    h = ad.Tensor(phi0)
    from esnet.model import block_net_forward
    for block in net.blocks:
        h = block_net_forward(block, h)
    assert np.array_equal(out.value, h.value)
    assert all(s.u is None for s in trace)


@pytest.mark.parametrize("dims, blocks", [(1, 4), (2, 5)])
def test_trace_length(dims, blocks):
    net = EStableNet.build(dims, blocks, 3)
    grid = Grid(dims, 8)
    _, trace = forward(net, np.zeros((2,) + grid.shape))
    assert len(trace) == blocks + 1
    assert trace[-1].phi.shape == (2, 1) + grid.shape


def test_initial_aux_variable_uses_C():
    grid = Grid(1, 16)
    net = EStableNet.build(1, 1, 3, C=0.5)
    _, trace = forward(net, np.zeros((1, grid.n)))
    assert np.allclose(trace[0].u.value, aux_u_init(np.zeros(grid.n), grid, 0.01, 0.5))
    net = EStableNet.build(1, 1, 3, kind=AUX_TILDE, C=0.1)
    _, trace = forward(net, np.ones((1, grid.n)))
    assert np.allclose(trace[0].u.value, aux_utilde_init(np.ones(grid.n), grid, 0.01, 0.1))


def test_predict_matches_forward(grid1d, rng):
    net = init_params(EStableNet.build(1, 2, 7), XAVIER, seed=3)
    phi0 = np.stack([band_limited(grid1d, rng) for _ in range(5)])
    out, _ = forward(net, phi0)
    assert np.array_equal(predict(net, phi0, batch_size=2), out.value[:, 0])


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2 ** 31), scheme=st.sampled_from([XAVIER, KAIMING]),
       g_kind=st.sampled_from(["identity", INV_NEG_LAPLACIAN]), dims=st.sampled_from([1, 2]))
def test_decay_identity_holds_for_initialized_weights(seed, scheme, g_kind, dims):
    rng = np.random.default_rng(seed)
    grid = Grid(dims, 32 if dims == 1 else 16)
    net = init_params(EStableNet.build(dims, 3, 5, g_inverse_kind=g_kind), scheme, seed)
    phi0 = np.stack([band_limited(grid, rng, amplitude=rng.uniform(0.1, 1.0)) for _ in range(3)])
    trace, report = verify_decay(net, phi0)
    assert report.passed, report.summary()
    assert report.max_residual <= 1e-10


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 2 ** 31), gain=st.floats(0.5, 4.0))
def test_decay_identity_is_exact_up_to_roundoff_for_large_weights(seed, gain):
    # amplified weights drive the energy to ~1e5, so compare relative to its size
    rng = np.random.default_rng(seed)
    grid = Grid(1, 32)
    net = init_params(EStableNet.build(1, 3, 5), KAIMING, seed)
    for p in net.parameters():
        p.value = p.value * gain
    phi0 = np.stack([band_limited(grid, rng) for _ in range(3)])
    trace, _ = verify_decay(net, phi0)
    magnitude = np.maximum(1.0, np.abs(trace.discrete_energy))
    assert np.all(trace.identity_residual <= 1e-13 * magnitude)
    assert np.all(np.diff(trace.discrete_energy, axis=1) <= 1e-13 * magnitude[:, 1:])


@settings(max_examples=15, deadline=None)
@given(seed=st.integers(0, 2 ** 31))
def test_auxtilde_energy_never_increases(seed):
    rng = np.random.default_rng(seed)
    grid = Grid(1, 32)
    net = init_params(EStableNet.build(1, 4, 5, kind=AUX_TILDE), XAVIER, seed)
    trace, report = verify_decay(net, np.stack([band_limited(grid, rng) for _ in range(2)]))
    assert report.passed, report.summary()


@pytest.mark.parametrize("kind", [ESTABLE, PLAIN])
def test_shift_equivariance(kind, grid1d, rng):
    net = init_params(EStableNet.build(1, 2, 7, kind=kind), XAVIER, seed=4)
    phi0 = band_limited(grid1d, rng)[None]
    a = predict(net, np.roll(phi0, 17, axis=-1))
    b = np.roll(predict(net, phi0), 17, axis=-1)
    assert np.max(np.abs(a - b)) <= 1e-12


def test_init_bounds_formulas():
    net = EStableNet.build(1, 1, 21)
    first, second = net.blocks[0].convs[:2]
    assert first.fan_in == 21 and first.fan_out == 16 * 21
    assert second.fan_in == 16 * 21 and second.fan_out == 21
    assert init_bounds(first, XAVIER) == (math.sqrt(6 / (21 + 336)), 0.0)
    assert init_bounds(first, KAIMING) == (math.sqrt(6 / 21), 1 / math.sqrt(21))
    assert init_bounds(second, FRAMEWORK_DEFAULT) == (1 / math.sqrt(336), 1 / math.sqrt(336))
    with pytest.raises(ValueError):
        init_bounds(first, "orthogonal")


@pytest.mark.parametrize("scheme", [XAVIER, KAIMING, FRAMEWORK_DEFAULT])
def test_init_distribution(scheme):
    net = init_params(EStableNet.build(2, 10, 13), scheme, seed=11)
    normalized = []
    for block in net.blocks:
        for conv in block.convs:
            a, c = init_bounds(conv, scheme)
            w = conv.weight.value.ravel()
            assert np.all(np.abs(w) <= a)
            normalized.append(w / a)
            if c == 0:
                assert not conv.bias.value.any()
            else:
                assert np.all(np.abs(conv.bias.value) <= c)
    draws = np.concatenate(normalized)
    assert draws.size >= 100_000
    assert abs(np.var(draws) / (1 / 3) - 1) <= 0.05


def test_init_is_deterministic():
    a = init_params(EStableNet.build(1, 2, 5), XAVIER, seed=5).get_values()
    b = init_params(EStableNet.build(1, 2, 5), XAVIER, seed=5).get_values()
    c = init_params(EStableNet.build(1, 2, 5), XAVIER, seed=6).get_values()
    assert all(np.array_equal(x, y) for x, y in zip(a, b))
    assert not all(np.array_equal(x, y) for x, y in zip(a, c))


@pytest.mark.parametrize("kind", [ESTABLE, AUX_TILDE, PLAIN])
def test_checkpoint_round_trip(kind, tmp_path, grid1d, rng):
    net = init_params(EStableNet.build(1, 3, 5, kind=kind, epsilon=0.02, C=0.25, t_end=3.0), KAIMING, seed=2)
    path = tmp_path / "ck.bin"
    save_checkpoint(net, path)
    back = load_checkpoint(path)
    assert (back.kind, back.n_blocks, back.kernel, back.channels) == (kind, 3, 5, net.channels)
    assert (back.epsilon, back.C, back.dt, back.dims) == (0.02, 0.25, 1.0, 1)
    phi0 = band_limited(grid1d, rng)[None]
    assert np.array_equal(predict(back, phi0), predict(net, phi0))


def test_checkpoint_corruption(tmp_path):
    net = EStableNet.build(1, 1, 3)
    path = tmp_path / "ck.bin"
    save_checkpoint(net, path)
    data = path.read_bytes()
    (tmp_path / "short.bin").write_bytes(data[:-8])
    with pytest.raises(CheckpointError, match="truncated|size"):
        load_checkpoint(tmp_path / "short.bin")
    (tmp_path / "magic.bin").write_bytes(b"XXXXXXXX" + data[8:])
    with pytest.raises(CheckpointError, match="magic"):
        load_checkpoint(tmp_path / "magic.bin")
    (tmp_path / "tiny.bin").write_bytes(data[:5])
    with pytest.raises(CheckpointError):
        load_checkpoint(tmp_path / "tiny.bin")


def _block_from(tensors):
    from esnet.model import BlockParams, ConvLayer
    return BlockParams([ConvLayer(w, b) for w, b in zip(tensors[0::2], tensors[1::2])])


@pytest.mark.parametrize("kind", [ESTABLE, AUX_TILDE])
def test_full_block_gradient_matches_central_differences(kind, rng):
    from esnet.autodiff import Tensor, grad_check
    from esnet.model import BlockState, auxtilde_block_step, estable_block_step
    grid = Grid(1, 8)
    net = init_params(EStableNet.build(1, 1, 3, kind=kind, channels=(1, 4, 1, 4, 1)), XAVIER, seed=0)
    phi = band_limited(grid, rng)[None, None]
    u0 = (aux_u_init if kind == ESTABLE else aux_utilde_init)(phi[:, 0], grid, 0.01)[:, None]
    target = rng.standard_normal(phi.shape)

    def loss(*ts):
        state = BlockState(ts[-1], Tensor(u0))
        block = _block_from(ts[:-1])
        if kind == ESTABLE:
            out = estable_block_step(state, block)
        else:
            out = auxtilde_block_step(state, block, 1.25)
        return ad.add(ad.mean_sq(ad.sub(out.phi, Tensor(target))), ad.mean_sq(out.u))

    inputs = [p.value for p in net.parameters()] + [phi]
    assert grad_check(loss, inputs)["max_rel_err"] <= 1e-5
