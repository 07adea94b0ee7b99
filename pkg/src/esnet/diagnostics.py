"""Per-block energy traces and the exact decay-identity check."""
import csv
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .energy import discrete_energy, discrete_energy_new, original_energy
from .model import AUX_TILDE, ESTABLE, EStableNet, forward
from .spectral import IDENTITY, Grid, g_inverse, inner_product

DECAY_TOL = 1e-10


@dataclass
class EnergyTrace:
    """Arrays of shape (samples, M + 1); column 0 is the input state.

    Increments and residuals in column 0 are zero by convention.
    """

    kind: str
    discrete_energy: np.ndarray
    original_energy: np.ndarray
    phi_increment: np.ndarray
    u_increment: np.ndarray
    identity_residual: np.ndarray
    states: list = field(default=None, repr=False)

    @property
    def n_samples(self):
        return self.discrete_energy.shape[0]

    @property
    def n_blocks(self):
        return self.discrete_energy.shape[1] - 1

    def discrete_monotone(self, tol=DECAY_TOL):
        return np.all(np.diff(self.discrete_energy, axis=1) <= tol, axis=1)

    def original_monotone(self):
        return np.all(np.diff(self.original_energy, axis=1) <= 0.0, axis=1)


@dataclass
class DecayReport:
    passed: bool
    max_residual: float
    failures: list
    original_monotone_fraction: float

    def summary(self):
        status = "PASS" if self.passed else "FAIL"
        lines = [f"decay check: {status}  max identity residual {self.max_residual:.3e}",
                 f"original energy monotone in {100 * self.original_monotone_fraction:.1f}% of samples"]
        lines.extend(self.failures[:20])
        return "\n".join(lines)


def energy_trace(net: EStableNet, phi0, keep_states=False) -> EnergyTrace:
    if net.kind not in (ESTABLE, AUX_TILDE):
        raise ValueError(f"no discrete energy is defined for kind {net.kind!r} (no auxiliary variable)")
    phi0 = np.asarray(phi0, dtype=np.float64)
    grid = Grid(net.dims, phi0.shape[-1])
    with ad.no_grad():
        _, states = forward(net, phi0)
    phis = [s.phi.value[:, 0] for s in states]
    us = [s.u.value[:, 0] for s in states]
    S, M = len(phi0), net.n_blocks
    disc = np.empty((S, M + 1))
    orig = np.empty((S, M + 1))
    dphi = np.zeros((S, M + 1))
    du = np.zeros((S, M + 1))
    for n in range(M + 1):
        if net.kind == ESTABLE:
            disc[:, n] = discrete_energy(phis[n], us[n], grid, net.C, net.g_inverse_kind)
        else:
            disc[:, n] = discrete_energy_new(us[n], grid, net.C)
        orig[:, n] = original_energy(phis[n], grid, net.epsilon)
        if n:
            d = phis[n] - phis[n - 1]
            if net.g_inverse_kind == IDENTITY:
                dphi[:, n] = inner_product(d, d, grid)
            else:
                dphi[:, n] = inner_product(d, g_inverse(d, grid, net.g_inverse_kind, strict=False), grid)
            e = us[n] - us[n - 1]
            du[:, n] = inner_product(e, e, grid)
    resid = np.zeros((S, M + 1))
    if net.kind == ESTABLE:
        resid[:, 1:] = np.abs(np.diff(disc, axis=1) + 0.5 * dphi[:, 1:] + du[:, 1:])
    return EnergyTrace(net.kind, disc, orig, dphi, du, resid,
                       states=list(zip(phis, us)) if keep_states else None)


def verify_decay(net: EStableNet, phi0, tol=DECAY_TOL, keep_states=False):
    """Check discrete-energy monotonicity and, for ``estable-g``, the exact
    identity dE = -1/2 |dphi|^2 - |dU|^2 per block. Returns (trace, report)."""
    trace = energy_trace(net, phi0, keep_states=keep_states)
    failures = []
    steps = np.diff(trace.discrete_energy, axis=1)
    for s, n in zip(*np.nonzero(steps > tol)):
        failures.append(f"sample {s} block {n + 1}: discrete energy rose by {steps[s, n]:.3e}")
    if net.kind == ESTABLE:
        bad = trace.identity_residual > tol
        for s, n in zip(*np.nonzero(bad)):
            failures.append(f"sample {s} block {n}: identity residual {trace.identity_residual[s, n]:.3e}")
    report = DecayReport(
        passed=not failures,
        max_residual=float(trace.identity_residual.max()),
        failures=failures,
        original_monotone_fraction=float(np.mean(trace.original_monotone())),
    )
    return trace, report


TRACE_COLUMNS = ("sample", "block", "discrete_energy", "original_energy", "identity_residual")


def export_trace(trace: EnergyTrace, path, fields_path=None, grid=None):
    """Write the trace as CSV (full float precision). With ``fields_path`` and a
    trace built with ``keep_states=True``, also dump per-block phi values."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(TRACE_COLUMNS)
        for s in range(trace.n_samples):
            for n in range(trace.n_blocks + 1):
                w.writerow([s, n, repr(float(trace.discrete_energy[s, n])),
                            repr(float(trace.original_energy[s, n])),
                            repr(float(trace.identity_residual[s, n]))])
    if fields_path is not None:
        if trace.states is None:
            raise ValueError("field dump requested but the trace holds no states")
        with open(fields_path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(("sample", "block", "point", "phi", "u"))
            for n, (phi, u) in enumerate(trace.states):
                for s in range(phi.shape[0]):
                    for p, (a, b) in enumerate(zip(phi[s].ravel(), u[s].ravel())):
                        w.writerow([s, n, p, repr(float(a)), repr(float(b))])


def read_trace_csv(path):
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    return rows
