"""Periodic grids on [-1, 1]^d and Fourier pseudo-spectral operators.

Fields are plain float64 arrays whose trailing ``grid.dims`` axes are the
spatial axes; any leading axes are treated as a batch. Norms and inner
products carry the quadrature weight ``h**dims`` so that discrete sums match
the continuum integrals over the domain.
"""
from dataclasses import dataclass
from functools import cached_property

import numpy as np

IDENTITY = "identity"
INV_NEG_LAPLACIAN = "inverse-neg-laplacian"
G_INVERSE_KINDS = (IDENTITY, INV_NEG_LAPLACIAN)


@dataclass(frozen=True)
class Grid:
    """Uniform periodic grid with ``n`` points per axis on [-1, 1)^dims."""

    dims: int
    n: int

    def __post_init__(self):
        if self.dims not in (1, 2):
            raise ValueError(f"dims must be 1 or 2, got {self.dims}")
        if self.n < 8 or self.n % 2:
            raise ValueError(f"n must be even and >= 8, got {self.n}")

    @property
    def h(self) -> float:
        return 2.0 / self.n

    @property
    def volume(self) -> float:
        return 2.0 ** self.dims

    @property
    def weight(self) -> float:
        return self.h ** self.dims

    @property
    def shape(self) -> tuple:
        return (self.n,) * self.dims

    @property
    def axes(self) -> tuple:
        return tuple(range(-self.dims, 0))

    @cached_property
    def x(self) -> np.ndarray:
        """1D node coordinates x_j = -1 + j*h (the same on every axis)."""
        return -1.0 + self.h * np.arange(self.n)

    def mesh(self):
        if self.dims == 1:
            return (self.x,)
        return tuple(np.meshgrid(self.x, self.x, indexing="ij"))

    @cached_property
    def _k_full(self) -> np.ndarray:
        # k = pi * m for domain length 2
        return np.pi * np.fft.fftfreq(self.n, d=1.0 / self.n)

    @cached_property
    def _k_half(self) -> np.ndarray:
        return np.pi * np.fft.rfftfreq(self.n, d=1.0 / self.n)

    @cached_property
    def wavenumbers(self) -> tuple:
        """Per-axis wavenumbers broadcast to the rfftn coefficient layout."""
        if self.dims == 1:
            return (self._k_half,)
        return (self._k_full[:, None], self._k_half[None, :])

    @cached_property
    def k2(self) -> np.ndarray:
        out = 0.0
        for k in self.wavenumbers:
            out = out + k ** 2
        return np.asarray(out)

    @cached_property
    def _deriv_k(self) -> tuple:
        # Nyquist mode dropped for odd derivatives so real fields stay real
        out = []
        for k in self.wavenumbers:
            kk = k.copy()
            kk[np.isclose(np.abs(kk), np.pi * self.n / 2)] = 0.0
            out.append(kk)
        return tuple(out)

    @cached_property
    def dealias_mask(self) -> np.ndarray:
        """2/3-rule mask: keep modes with |m| <= n/3 on every axis."""
        cut = np.pi * (self.n // 3)
        mask = np.ones(self.k2.shape, dtype=bool)
        for k in self.wavenumbers:
            mask = mask & (np.abs(k) <= cut + 1e-9)
        return mask

    def check(self, u: np.ndarray, name: str = "field") -> np.ndarray:
        u = np.asarray(u, dtype=np.float64)
        if u.shape[u.ndim - self.dims:] != self.shape or u.ndim < self.dims:
            raise ValueError(f"{name} with shape {u.shape} does not live on grid {self.shape}")
        return u

    def fft(self, u):
        return np.fft.rfftn(u, axes=self.axes)

    def ifft(self, uh):
        return np.fft.irfftn(uh, s=self.shape, axes=self.axes)


def inner_product(u, v, grid: Grid):
    """Quadrature-weighted L2 pairing h^d * sum(u*v), reduced over spatial axes."""
    u = grid.check(u, "u")
    v = grid.check(v, "v")
    if u.shape != v.shape:
        raise ValueError(f"shape mismatch: {u.shape} vs {v.shape}")
    return grid.weight * np.sum(u * v, axis=grid.axes)


def norm_sq(u, grid: Grid):
    return inner_product(u, u, grid)


def laplacian(u, grid: Grid):
    u = grid.check(u)
    return grid.ifft(-grid.k2 * grid.fft(u))


def gradient(u, grid: Grid) -> tuple:
    """Spectral first derivatives, one array per axis."""
    u = grid.check(u)
    uh = grid.fft(u)
    return tuple(grid.ifft(1j * k * uh) for k in grid._deriv_k)


def gradient_sq(u, grid: Grid):
    """Pointwise |grad u|^2."""
    return sum(d * d for d in gradient(u, grid))


def g_inverse(u, grid: Grid, kind: str = IDENTITY, strict: bool = True):
    """Apply the inverse mobility operator.

    ``inverse-neg-laplacian`` is only invertible on zero-mean fields. With
    ``strict=False`` the mean is projected out instead of raising, which is
    the pseudo-inverse used inside network blocks.
    """
    u = grid.check(u)
    if kind == IDENTITY:
        return u
    if kind != INV_NEG_LAPLACIAN:
        raise ValueError(f"unknown operator kind {kind!r}")
    if strict:
        mean = np.mean(u, axis=grid.axes)
        scale = max(1.0, float(np.max(np.abs(u))))
        if np.any(np.abs(mean) > 1e-12 * scale):
            raise ValueError(
                f"inverse-neg-laplacian needs zero-mean input, got mean {np.max(np.abs(mean)):.3e}")
    uh = grid.fft(u)
    k2 = grid.k2
    safe = np.where(k2 > 0, k2, 1.0)
    uh = np.where(k2 > 0, uh / safe, 0.0)
    return grid.ifft(uh)


def _double_well(phi):
    return 0.25 * (phi * phi - 1.0) ** 2


def _checked_sqrt(radicand, what):
    low = float(np.min(radicand))
    if low < 0.0:
        raise ValueError(f"{what}: radicand is negative (minimum {low:.6e}); increase the shift constant")
    return np.sqrt(radicand)


def aux_u_radicand(phi, grid: Grid, eps: float, C: float = 0.0):
    phi = grid.check(phi, "phi")
    return 0.5 * phi * phi + 0.5 * eps ** 2 * gradient_sq(phi, grid) + _double_well(phi) + C


def aux_u_init(phi, grid: Grid, eps: float, C: float = 0.0):
    """U = sqrt(phi^2/2 + eps^2/2 |grad phi|^2 + F(phi) + C) for Allen-Cahn (G = 1)."""
    return _checked_sqrt(aux_u_radicand(phi, grid, eps, C), "aux_u_init")


def aux_utilde_init(phi, grid: Grid, eps: float, C_tilde: float = 0.0):
    """Square root of the full energy density plus ``C_tilde``."""
    phi = grid.check(phi, "phi")
    radicand = 0.5 * eps ** 2 * gradient_sq(phi, grid) + _double_well(phi) + C_tilde
    return _checked_sqrt(radicand, "aux_utilde_init")


def h1_apply(phi, grid: Grid, eps: float, C: float = 0.0):
    """(G^-1 phi + D phi + f(phi)) / U(phi) with G = 1, D = -eps^2 Lap, f = phi^3 - phi."""
    phi = grid.check(phi, "phi")
    radicand = aux_u_radicand(phi, grid, eps, C)
    low = float(np.min(radicand))
    if low <= 0.0:
        raise ValueError(f"h1_apply: radicand must be strictly positive (minimum {low:.6e})")
    numerator = phi - eps ** 2 * laplacian(phi, grid) + (phi ** 3 - phi)
    return numerator / np.sqrt(radicand)


def equivalence_residual(phi, grid: Grid, eps: float, C: float = 0.0) -> float:
    """Relative mismatch between the auxiliary-variable right-hand side and
    the Allen-Cahn right-hand side, in the quadrature L2 norm."""
    phi = grid.check(phi, "phi")
    aux_rhs = phi - h1_apply(phi, grid, eps, C) * aux_u_init(phi, grid, eps, C)
    ac = eps ** 2 * laplacian(phi, grid) + phi - phi ** 3
    num = np.sqrt(np.sum(norm_sq(aux_rhs - ac, grid)))
    den = max(1.0, float(np.sqrt(np.sum(norm_sq(ac, grid)))))
    return float(num / den)
