"""Allen-Cahn reference solver: Fourier pseudo-spectral space, Dormand-Prince 5(4) time.

The step controller and error norm follow the usual ode45 conventions:
a step is accepted when

    sqrt(mean((err / (atol + rtol * max(|y_old|, |y_new|)))**2)) <= 1

Snapshot times are hit exactly by clipping the step.
"""
import csv
import math
from dataclasses import dataclass, field

import numpy as np

from .energy import original_energy
from .spectral import Grid

# Dormand-Prince tableau
_C = (0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0, 1.0)
_A = (
    (),
    (1 / 5,),
    (3 / 40, 9 / 40),
    (44 / 45, -56 / 15, 32 / 9),
    (19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729),
    (9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656),
    (35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84),
)
_B = (35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84, 0.0)
# difference between 5th-order and embedded 4th-order weights
_E = (71 / 57600, 0.0, -71 / 16695, 71 / 1920, -17253 / 339200, 22 / 525, -1 / 40)

MIN_STEP = 1e-12
SAFETY = 0.9
MIN_FACTOR = 0.2
MAX_FACTOR = 5.0


class SolverError(RuntimeError):
    pass


@dataclass
class SolverConfig:
    epsilon: float = 0.01
    t_end: float = 5.0
    rtol: float = 1e-3
    atol: float = 1e-6
    dealias: bool = True
    snapshot_times: tuple = ()
    max_steps: int = 1_000_000

    def __post_init__(self):
        if self.epsilon <= 0:
            raise ValueError("epsilon must be positive")
        if self.rtol <= 0 or self.atol <= 0:
            raise ValueError("rtol and atol must be positive")
        if self.t_end < 0:
            raise ValueError("t_end must be nonnegative")
        ts = tuple(float(t) for t in self.snapshot_times)
        if list(ts) != sorted(ts) or any(t < 0 or t > self.t_end for t in ts):
            raise ValueError("snapshot_times must be sorted and inside [0, t_end]")
        self.snapshot_times = ts

    def output_times(self):
        ts = list(self.snapshot_times)
        if not ts or ts[-1] != self.t_end:
            ts.append(self.t_end)
        return ts


@dataclass
class Trajectory:
    times: list = field(default_factory=list)
    states: list = field(default_factory=list)
    energy: list = field(default_factory=list)
    n_steps: int = 0
    n_rejected: int = 0
    last_error: float = 0.0
    error_estimate: float = 0.0  # sum of RMS local error estimates over accepted steps

    @property
    def final(self):
        return self.states[-1]


def ac_rhs(phi, grid: Grid, eps: float, dealias: bool = True, reaction: bool = True):
    """eps^2 Lap(phi) - phi^3 + phi.

    With ``dealias`` the cubic term is formed from the 2/3-filtered field and
    filtered again. ``reaction=False`` drops -phi^3 + phi (pure heat flow, for
    testing the linear part).
    """
    phi_h = grid.fft(phi)
    diffusion = grid.ifft(-(eps ** 2) * grid.k2 * phi_h)
    if not reaction:
        return diffusion
    if dealias:
        mask = grid.dealias_mask
        p = grid.ifft(phi_h * mask)
        cubic = grid.ifft(grid.fft(p * p * p) * mask)
    else:
        cubic = phi * phi * phi
    return diffusion - cubic + phi


def _rms_norm(x, scale):
    return math.sqrt(float(np.mean((x / scale) ** 2)))


def initial_step(f, t0, y0, f0, rtol, atol, order=5):
    """Standard starting-step heuristic (Hairer, Norsett & Wanner, II.4)."""
    scale = atol + rtol * np.abs(y0)
    d0 = _rms_norm(y0, scale)
    d1 = _rms_norm(f0, scale)
    h0 = 1e-6 if d0 < 1e-5 or d1 < 1e-5 else 0.01 * d0 / d1
    y1 = y0 + h0 * f0
    f1 = f(t0 + h0, y1)
    d2 = _rms_norm(f1 - f0, scale) / h0
    if max(d1, d2) <= 1e-15:
        h1 = max(1e-6, h0 * 1e-3)
    else:
        h1 = (0.01 / max(d1, d2)) ** (1.0 / (order + 1))
    return min(100 * h0, h1)


def integrate(phi0, grid: Grid, cfg: SolverConfig, reaction: bool = True) -> Trajectory:
    """Advance ``phi0`` to ``cfg.t_end``, recording states at the output times."""
    y = grid.check(phi0, "phi0").astype(np.float64, copy=True)
    if y.shape != grid.shape:
        raise ValueError("integrate takes a single field")
    if not np.all(np.isfinite(y)):
        raise SolverError("initial state is not finite")

    def f(t, z):
        return ac_rhs(z, grid, cfg.epsilon, cfg.dealias, reaction)

    targets = cfg.output_times()
    traj = Trajectory()
    t = 0.0
    ti = 0
    while ti < len(targets) and targets[ti] <= 0.0:
        traj.times.append(0.0)
        traj.states.append(y.copy())
        traj.energy.append(float(original_energy(y, grid, cfg.epsilon)))
        ti += 1
    if ti == len(targets):
        return traj

    k1 = f(t, y)
    h = initial_step(f, t, y, k1, cfg.rtol, cfg.atol)
    steps = 0
    while ti < len(targets):
        target = targets[ti]
        if h < MIN_STEP:
            raise SolverError(f"step size {h:.3e} below {MIN_STEP:g} at t={t:.6g}: stiffness/instability")
        if steps >= cfg.max_steps:
            raise SolverError(f"exceeded {cfg.max_steps} steps at t={t:.6g}")
        hit = t + h >= target - 1e-12 * max(1.0, abs(target))
        step = target - t if hit else h

        ks = [k1]
        for i in range(1, 7):
            yi = y.copy()
            for a, k in zip(_A[i], ks):
                if a:
                    yi += (step * a) * k
            ks.append(f(t + _C[i] * step, yi))
        y_new = y.copy()
        for b, k in zip(_B, ks):
            if b:
                y_new += (step * b) * k
        err = np.zeros_like(y)
        for e, k in zip(_E, ks):
            if e:
                err += (step * e) * k
        if not np.all(np.isfinite(y_new)):
            raise SolverError(f"non-finite state at t={t:.6g}")
        scale = cfg.atol + cfg.rtol * np.maximum(np.abs(y), np.abs(y_new))
        err_norm = _rms_norm(err, scale)
        steps += 1

        if err_norm <= 1.0:
            t = target if hit else t + step
            y = y_new
            k1 = ks[6]  # FSAL
            traj.n_steps += 1
            traj.last_error = err_norm
            traj.error_estimate += math.sqrt(float(np.mean(err * err)))
            factor = MAX_FACTOR if err_norm == 0 else min(MAX_FACTOR, SAFETY * err_norm ** -0.2)
            if hit:
                traj.times.append(t)
                traj.states.append(y.copy())
                traj.energy.append(float(original_energy(y, grid, cfg.epsilon)))
                ti += 1
                # a clipped step says nothing about the natural size
                h = h if step < h else step * factor
            else:
                h = step * factor
        else:
            traj.n_rejected += 1
            h = step * max(MIN_FACTOR, SAFETY * err_norm ** -0.2)
    return traj


def write_trajectory(traj: Trajectory, phi0, grid: Grid, cfg: SolverConfig, csv_path, snapshot_prefix=None):
    """CSV of (t, energy); optionally one dataset-format file per snapshot
    holding the pair (phi(0), phi(t_k))."""
    with open(csv_path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(("t", "energy"))
        for t, e in zip(traj.times, traj.energy):
            w.writerow((repr(float(t)), repr(float(e))))
    if snapshot_prefix is None:
        return []
    from .dataset import Dataset, write_dataset

    paths = []
    phi_init = np.asarray(phi0, dtype=np.float64)
    for i, (t, state) in enumerate(zip(traj.times, traj.states)):
        ds = Dataset(grid=grid, epsilon=cfg.epsilon, t_end=float(t), base_seed=0,
                     seeds=np.array([i], dtype=np.uint64),
                     phi0=phi_init[None].copy(), phiT=state[None].copy())
        path = f"{snapshot_prefix}{i:04d}.bin"
        write_dataset(path, ds)
        paths.append(path)
    return paths
