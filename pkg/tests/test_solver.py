import numpy as np
import pytest
from scipy.integrate import solve_ivp

from esnet.dataset import read_dataset, sample_ic, sample_seed
from esnet.solver import SolverConfig, SolverError, ac_rhs, integrate, write_trajectory
from esnet.spectral import Grid

from conftest import band_limited


def oracle_rhs(phi, n, eps, dealias):
    """Allen-Cahn right-hand side via the complex FFT, written independently of esnet."""
    m = np.fft.fftfreq(n, d=1.0 / n)
    k = np.pi * m
    keep = (np.abs(m) <= n // 3).astype(float) if dealias else np.ones(n)
    ph = np.fft.fft(phi)
    lap = np.fft.ifft(-(k ** 2) * ph).real
    p = np.fft.ifft(ph * keep).real
    cube = np.fft.ifft(np.fft.fft(p ** 3) * keep).real
    return eps ** 2 * lap - cube + phi


def test_rhs_examples(grid1d):
    n = grid1d.n
    for c in (1.0, -1.0, 0.0):
        assert np.max(np.abs(ac_rhs(np.full(n, c), grid1d, 0.01))) <= 1e-14
    half = ac_rhs(np.full(n, 0.5), grid1d, 0.01)
    assert np.allclose(half, 0.375, rtol=0, atol=1e-14)
    s = 0.1 * np.sin(np.pi * grid1d.x)
    want = 0.01 ** 2 * -np.pi ** 2 * s - s ** 3 + s
    for dealias in (True, False):
        assert np.max(np.abs(ac_rhs(s, grid1d, 0.01, dealias) - want)) <= 1e-10


@pytest.mark.parametrize("dealias", [True, False])
def test_rhs_matches_independent_oracle(dealias, grid1d, rng):
    phi = band_limited(grid1d, rng, max_freq=40)
    got = ac_rhs(phi, grid1d, 0.01, dealias)
    assert np.max(np.abs(got - oracle_rhs(phi, grid1d.n, 0.01, dealias))) <= 1e-12


def test_linear_mode_decays_at_heat_rate():
    grid = Grid(1, 64)
    eps, t_end = 0.1, 5.0
    cfg = SolverConfig(epsilon=eps, t_end=t_end)
    phi0 = np.sin(np.pi * grid.x)
    out = integrate(phi0, grid, cfg, reaction=False).final
    exact = np.exp(-(eps * np.pi) ** 2 * t_end) * phi0
    assert np.max(np.abs(out - exact)) <= 10 * cfg.rtol * np.max(np.abs(exact))


@pytest.mark.parametrize("value", [1.0, -1.0])
def test_pure_phases_are_fixed(value, grid1d):
    out = integrate(np.full(grid1d.n, value), grid1d, SolverConfig()).final
    assert np.max(np.abs(out - value)) <= 1e-9


def _crossing_near_zero(phi, x, h):
    i = int(np.argmin(np.abs(x)))
    lo, hi = i - 3, i + 3
    seg, xs = phi[lo:hi], x[lo:hi]
    j = int(np.nonzero((seg[:-1] < 0) & (seg[1:] >= 0))[0][0])
    return xs[j] + h * -seg[j] / (seg[j + 1] - seg[j])


def test_kink_interface_is_stationary(grid1d):
    eps = 0.01
    x = grid1d.x
    w = np.sqrt(2) * eps
    # up-kink at 0, down-kink at +-1, amplitude 0.9 relaxing to the wells
    phi0 = 0.9 * np.tanh(x / w) * np.tanh((1 - np.abs(x)) / w)
    times = tuple(np.linspace(0, 5, 11))
    traj = integrate(phi0, grid1d, SolverConfig(epsilon=eps, snapshot_times=times))
    tight = integrate(phi0, grid1d, SolverConfig(epsilon=eps, rtol=1e-9, atol=1e-11)).final
    x0 = _crossing_near_zero(phi0, x, grid1d.h)
    for state in traj.states:
        assert abs(_crossing_near_zero(state, x, grid1d.h) - x0) <= grid1d.h
    assert abs(_crossing_near_zero(tight, x, grid1d.h) - x0) <= grid1d.h
    assert np.max(np.abs(traj.final - tight)) <= 1e-3


def test_matches_scipy_rk45_oracle():
    grid = Grid(1, 128)
    eps, t_end = 0.02, 1.0
    phi0 = sample_ic(grid, sample_seed(3, 0))
    ours = integrate(phi0, grid, SolverConfig(epsilon=eps, t_end=t_end, rtol=1e-8, atol=1e-10)).final
    ref = solve_ivp(lambda t, y: oracle_rhs(y, grid.n, eps, True), (0.0, t_end), phi0,
                    method="RK45", rtol=1e-8, atol=1e-10).y[:, -1]
    assert np.max(np.abs(ours - ref)) <= 1e-6


def test_halving_tolerances_moves_result_less_than_error_estimate():
    grid = Grid(1, 256)
    for i in range(3):
        phi0 = sample_ic(grid, sample_seed(5, i))
        coarse = integrate(phi0, grid, SolverConfig())
        fine = integrate(phi0, grid, SolverConfig(rtol=0.5e-3, atol=0.5e-6))
        change = np.sqrt(np.mean((coarse.final - fine.final) ** 2))
        assert change < 10 * coarse.error_estimate, (change, coarse.error_estimate)


def test_snapshots_hit_requested_times(grid1d, rng):
    ts = (0.0, 0.1, 0.5, 2.5)
    traj = integrate(band_limited(grid1d, rng), grid1d, SolverConfig(t_end=5.0, snapshot_times=ts))
    assert traj.times == [0.0, 0.1, 0.5, 2.5, 5.0]
    assert len(traj.states) == len(traj.energy) == 5


def test_energy_never_increases_on_random_data(grid1d):
    cfg = SolverConfig(snapshot_times=tuple(np.linspace(0, 5, 51)))
    for i in range(20):
        traj = integrate(sample_ic(grid1d, sample_seed(11, i)), grid1d, cfg)
        assert np.all(np.diff(traj.energy) <= 1e-8), i


@pytest.mark.xfail(strict=True, reason="the 2/3 dealiasing filter is not max-principle preserving; "
                                        "observed overshoot ~1.5e-3 at n=256, eps=0.01")
def test_max_principle_with_default_settings(grid1d):
    worst = 0.0
    for i in range(20):
        out = integrate(sample_ic(grid1d, sample_seed(11, i)), grid1d, SolverConfig()).final
        worst = max(worst, float(np.max(np.abs(out))))
    assert worst <= 1 + 1e-6, worst


def test_max_principle_without_filter_at_tight_tolerance(grid1d):
    cfg = SolverConfig(dealias=False, rtol=1e-8, atol=1e-10)
    for i in range(3):
        out = integrate(sample_ic(grid1d, sample_seed(11, i)), grid1d, cfg).final
        assert np.max(np.abs(out)) <= 1 + 1e-6


def test_solver_errors(grid1d):
    bad = np.zeros(grid1d.n)
    bad[3] = np.nan
    with pytest.raises(SolverError):
        integrate(bad, grid1d, SolverConfig())
    with pytest.raises(SolverError, match="steps"):
        integrate(np.sin(np.pi * grid1d.x), grid1d, SolverConfig(max_steps=3))
    with pytest.raises(ValueError):
        SolverConfig(epsilon=0.0)
    with pytest.raises(ValueError):
        SolverConfig(snapshot_times=(2.0, 1.0))


def test_write_trajectory(tmp_path, grid1d, rng):
    cfg = SolverConfig(t_end=1.0, snapshot_times=(0.5,))
    phi0 = band_limited(grid1d, rng)
    traj = integrate(phi0, grid1d, cfg)
    paths = write_trajectory(traj, phi0, grid1d, cfg, tmp_path / "energy.csv", str(tmp_path / "snap"))
    lines = (tmp_path / "energy.csv").read_text().splitlines()
    assert lines[0] == "t,energy" and len(lines) == 3
    ds = read_dataset(paths[-1])
    assert ds.t_end == 1.0
    assert np.array_equal(ds.phi0[0], phi0) and np.array_equal(ds.phiT[0], traj.final)
