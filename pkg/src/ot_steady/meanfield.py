"""Finite-volume Keller--Segel equation and its explicit Euler timestepper.

Cell-centred densities on ``[-L, L]`` evolve by conservative flux
differences with zero flux through both walls, so the discrete mass
``sum(density) * dx`` is preserved up to rounding.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .krylov import NewtonKrylovOptions, ResidualMap, SolverReport, newton_krylov


def chemotactic_velocity(x):
    """``chi(S(x)) S'(x)`` with ``S = tanh`` and ``chi(S) = 1 + S^2 / 2``."""
    s = np.tanh(x)
    return (1.0 + 0.5 * s * s) * (1.0 - s * s)


@dataclass(frozen=True)
class FvGrid:
    cells: int = 1000
    L: float = 10.0
    D: float = 1.0

    def __post_init__(self):
        if self.cells < 2 or self.L <= 0 or self.D < 0:
            raise ValueError("need cells >= 2, L > 0 and D >= 0")

    @property
    def dx(self) -> float:
        return 2.0 * self.L / self.cells

    @property
    def centers(self) -> np.ndarray:
        return -self.L + (np.arange(self.cells) + 0.5) * self.dx

    @property
    def interfaces(self) -> np.ndarray:
        """Interior interfaces between consecutive cells."""
        return -self.L + np.arange(1, self.cells) * self.dx

    def mass(self, density) -> float:
        return float(np.sum(density) * self.dx)

    def gaussian(self, mean: float = 5.0, std: float = 2.0) -> np.ndarray:
        """Gaussian profile rescaled to unit discrete mass."""
        g = np.exp(-0.5 * ((self.centers - mean) / std) ** 2)
        return g / self.mass(g)


def interface_flux(grid: FvGrid, density) -> np.ndarray:
    """Fluxes at all ``cells + 1`` interfaces; the two wall entries are exactly 0."""
    mu = np.asarray(density, dtype=float)
    b = chemotactic_velocity(grid.interfaces)
    J = np.zeros(grid.cells + 1)
    J[1:-1] = b * 0.5 * (mu[1:] + mu[:-1]) - grid.D * (mu[1:] - mu[:-1]) / grid.dx
    return J


def keller_segel_rhs(grid: FvGrid, density) -> np.ndarray:
    """Rate of change per cell, ``-(J_{i+1/2} - J_{i-1/2}) / dx``."""
    J = interface_flux(grid, density)
    return -(J[1:] - J[:-1]) / grid.dx


def stability_bound(grid: FvGrid) -> float:
    return grid.dx ** 2 / (2.0 * grid.D) if grid.D > 0 else np.inf


def pde_timestepper(grid: FvGrid, density, dt: float, h: float) -> np.ndarray:
    """Explicit Euler over ``round(h / dt)`` steps."""
    bound = stability_bound(grid)
    if not 0 < dt <= bound:
        raise ValueError(f"dt={dt} violates the diffusive stability bound dx^2/(2D)={bound:.6g}")
    n = max(1, int(round(h / dt)))
    mu = np.array(density, dtype=float)
    b = chemotactic_velocity(grid.interfaces) * 0.5
    dif = grid.D / grid.dx
    scale = dt / grid.dx
    J = np.empty(grid.cells - 1)
    tmp = np.empty(grid.cells - 1)
    for _ in range(n):
        # J = b (mu_l + mu_r) - (D/dx)(mu_r - mu_l), interior interfaces only
        np.add(mu[1:], mu[:-1], out=J)
        J *= b
        np.subtract(mu[1:], mu[:-1], out=tmp)
        tmp *= dif
        J -= tmp
        J *= scale
        mu[:-1] -= J
        mu[1:] += J
    return mu


def steady_density(grid: FvGrid) -> np.ndarray:
    """Analytic stationary density at the cell centres, normalized to unit discrete mass."""
    s = np.tanh(grid.centers)
    mu = np.exp((s + s ** 3 / 6.0) / grid.D)
    return mu / grid.mass(mu)


def pde_residual(grid: FvGrid, dt: float, h: float) -> ResidualMap:
    def psi(u):
        return u - pde_timestepper(grid, u, dt, h)

    return ResidualMap(psi, grid.cells, h)


def pde_steady_state(grid: FvGrid, density0=None, dt: float = 1e-4, h: float = 1.0,
                     opts: NewtonKrylovOptions | None = None) -> SolverReport:
    """Newton--Krylov on ``mu - Phi_h(mu)`` over the cell densities."""
    if density0 is None:
        density0 = grid.gaussian()
    opts = opts or NewtonKrylovOptions(eps=1e-7, stop=1e-9)
    return newton_krylov(pde_residual(grid, dt, h), density0, opts)
