"""Energy functionals on (batched) grid fields."""
import numpy as np

from .spectral import IDENTITY, Grid, g_inverse, gradient_sq, inner_product


def discrete_energy(phi, u, grid: Grid, C=0.0, g_inverse_kind=IDENTITY):
    """-1/2 (phi, Ginv phi) + |U|^2 - C |Omega| with quadrature-weighted norms."""
    phi = grid.check(phi, "phi")
    u = grid.check(u, "U")
    if phi.shape != u.shape:
        raise ValueError(f"phi and U shapes differ: {phi.shape} vs {u.shape}")
    ginv_phi = g_inverse(phi, grid, g_inverse_kind, strict=False)
    return -0.5 * inner_product(phi, ginv_phi, grid) + inner_product(u, u, grid) - C * grid.volume


def discrete_energy_new(u_tilde, grid: Grid, C_tilde=0.0):
    u_tilde = grid.check(u_tilde, "U~")
    return inner_product(u_tilde, u_tilde, grid) - C_tilde * grid.volume


def original_energy(phi, grid: Grid, eps):
    """Allen-Cahn free energy: integral of eps^2/2 |grad phi|^2 + (phi^2 - 1)^2 / 4."""
    phi = grid.check(phi, "phi")
    density = 0.5 * eps ** 2 * gradient_sq(phi, grid) + 0.25 * (phi * phi - 1.0) ** 2
    return grid.weight * np.sum(density, axis=grid.axes)
