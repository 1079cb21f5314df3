"""Distribution-level timesteppers built on the particle models.

Each smoother lifts a smooth state (ICDF curve or gridded joint CDF) to a
deterministic particle ensemble, propagates it, and restricts the result
back to the same representation. The matching residual ``u - Phi_h(u)`` is
exposed as a :class:`~ot_steady.krylov.ResidualMap`.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .errors import DegenerateError
from .krylov import ResidualMap
from .measures import (Cdf2Grid, MonotoneCurve, conditional_rows, empirical_cdf2,
                       empirical_icdf, invert_monotone, marginal_cdf_x, percentile_grid,
                       sample_from_icdf)
from .models import NoiseStream, SdeModel, StepperConfig, propagate
from .transport import ot_map_1d, w2_sq

logger = logging.getLogger(__name__)

N_R = 256
N_PHI = 512


def _into_domain(pts, model: SdeModel):
    # lifted samples of a Newton iterate can leave the box; clamp them back
    return np.clip(pts, model.lower, model.upper)


# --- 1D: quantile functions ---------------------------------------------------

def icdf_timestepper(curve, model: SdeModel, cfg: StepperConfig, N: int,
                     stream: NoiseStream) -> MonotoneCurve:
    """Interpolate, sample at ``N`` midpoints, propagate, and re-extract ``K`` values."""
    if not isinstance(curve, MonotoneCurve):
        curve = MonotoneCurve(curve)
    if N < curve.K:
        raise ValueError(f"need N >= K (N={N}, K={curve.K})")
    x = _into_domain(sample_from_icdf(curve, N), model)
    y = propagate(x, model, cfg, stream)
    return empirical_icdf(y, curve.K)


def icdf_residual(model: SdeModel, cfg: StepperConfig, K: int, N: int,
                  stream: NoiseStream | None = None) -> ResidualMap:
    stream = stream or NoiseStream(cfg.seed)

    def psi(u):
        return u - icdf_timestepper(MonotoneCurve(u), model, cfg, N, stream).values

    return ResidualMap(psi, K, cfg.h)


# --- 2D: gridded joint CDF ------------------------------------------------------

def _fill_rows(rows, valid, fill):
    if valid.all():
        return rows, np.ones(len(rows), dtype=bool)
    if not valid.any():
        raise DegenerateError("every conditional slice is degenerate")
    bad = int((~valid).sum())
    if fill == "skip":
        logger.warning("skipping %d degenerate conditional slices", bad)
        return rows, valid
    if fill != "nearest":
        raise ValueError(f"fill must be 'skip' or 'nearest', got {fill!r}")
    good = np.flatnonzero(valid)
    idx = np.arange(len(rows))
    pos = np.clip(np.searchsorted(good, idx), 0, good.size - 1)
    left = good[np.maximum(pos - 1, 0)]
    right = good[pos]
    nearest = np.where(np.abs(idx - left) <= np.abs(right - idx), left, right)
    logger.debug("replacing %d degenerate slices by their nearest valid neighbour", bad)
    return rows[nearest], np.ones(len(rows), dtype=bool)


def cdf2_sample(cdf: Cdf2Grid, n_x: int, n_y: int, fill: str = "skip") -> np.ndarray:
    """Deterministic Knothe--Rosenblatt sample of ``n_x * n_y`` points.

    ``x`` is drawn from the marginal CDF at midpoints, then ``y`` from the
    conditional CDF at each ``x``. Columns whose conditional law is
    degenerate are dropped (``fill="skip"``) or borrowed from the nearest
    valid column (``fill="nearest"``), which keeps the count fixed.
    """
    if n_x < 1 or n_y < 1:
        raise ValueError("sample sizes must be positive")
    if fill not in ("skip", "nearest"):
        raise ValueError(f"fill must be 'skip' or 'nearest', got {fill!r}")
    xs = invert_monotone(cdf.xgrid, marginal_cdf_x(cdf), percentile_grid(n_x))
    rows, valid = conditional_rows(cdf, xs)
    rows, keep = _fill_rows(rows, valid, fill)
    q = percentile_grid(n_y)
    out = []
    for i in np.flatnonzero(keep):
        ys = invert_monotone(cdf.ygrid, rows[i], q)
        out.append(np.column_stack([np.full(n_y, xs[i]), ys]))
    return np.concatenate(out)


def cdf2_timestepper(cdf: Cdf2Grid, model: SdeModel, cfg: StepperConfig, n_x: int,
                     n_y: int, stream: NoiseStream) -> Cdf2Grid:
    pts = _into_domain(cdf2_sample(cdf, n_x, n_y, fill="nearest"), model)
    return empirical_cdf2(propagate(pts, model, cfg, stream), cdf.xgrid, cdf.ygrid)


def _grid_residual(stepper, template: Cdf2Grid, horizon: float) -> ResidualMap:
    def psi(u):
        return u - stepper(template.with_values(u)).values.ravel()

    return ResidualMap(psi, template.values.size, horizon)


def cdf2_residual(model: SdeModel, cfg: StepperConfig, xgrid, ygrid, n_x: int, n_y: int,
                  stream: NoiseStream | None = None) -> ResidualMap:
    """Residual ``F - Phi_h(F)`` on row-major flattened grid values."""
    stream = stream or NoiseStream(cfg.seed)
    template = Cdf2Grid(xgrid, ygrid, np.zeros((len(xgrid), len(ygrid))), count=n_x * n_y)
    return _grid_residual(
        lambda c: cdf2_timestepper(c, model, cfg, n_x, n_y, stream), template, cfg.h)


# --- densities and polar sampling ---------------------------------------------

@dataclass(frozen=True)
class DensityGrid:
    """Piecewise density on the cells between consecutive edges."""

    xedges: np.ndarray
    yedges: np.ndarray
    density: np.ndarray

    @property
    def centers(self):
        return 0.5 * (self.xedges[1:] + self.xedges[:-1]), 0.5 * (self.yedges[1:] + self.yedges[:-1])

    @property
    def cell_mass(self) -> np.ndarray:
        return self.density * np.outer(np.diff(self.xedges), np.diff(self.yedges))

    @property
    def r_max(self) -> float:
        return 0.5 * float(np.hypot(self.xedges[-1] - self.xedges[0],
                                    self.yedges[-1] - self.yedges[0]))

    @classmethod
    def from_function(cls, f, xedges, yedges) -> "DensityGrid":
        xe = np.asarray(xedges, dtype=float)
        ye = np.asarray(yedges, dtype=float)
        xc, yc = 0.5 * (xe[1:] + xe[:-1]), 0.5 * (ye[1:] + ye[:-1])
        X, Y = np.meshgrid(xc, yc, indexing="ij")
        return cls(xe, ye, np.asarray(f(X, Y), dtype=float))

    def __call__(self, x, y):
        """Bilinear interpolation between cell centres; zero outside the box."""
        xc, yc = self.centers
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        inside = ((x >= self.xedges[0]) & (x <= self.xedges[-1])
                  & (y >= self.yedges[0]) & (y <= self.yedges[-1]))
        val = _bilinear(xc, yc, self.density, x, y)
        return np.where(inside, val, 0.0)


def _bilinear(xc, yc, table, x, y):
    def locate(c, q):
        if c.size == 1:
            z = np.zeros(q.shape, dtype=int)
            return z, z, np.zeros(q.shape)
        q = np.clip(q, c[0], c[-1])
        i = np.clip(np.searchsorted(c, q, side="right") - 1, 0, c.size - 2)
        return i, i + 1, (q - c[i]) / (c[i + 1] - c[i])

    i0, i1, wx = locate(xc, x)
    j0, j1, wy = locate(yc, y)
    return ((1 - wx) * (1 - wy) * table[i0, j0] + wx * (1 - wy) * table[i1, j0]
            + (1 - wx) * wy * table[i0, j1] + wx * wy * table[i1, j1])


def density_from_cdf2(cdf: Cdf2Grid) -> DensityGrid:
    """Mixed second difference of ``F`` on the cells between grid nodes, clamped at 0.

    Cell masses telescope to ``F[-1,-1] - F[0,-1] - F[-1,0] + F[0,0]``,
    which is the top-corner value whenever the lower grid edges carry no
    mass.
    """
    F = cdf.values
    mass = F[1:, 1:] - F[:-1, 1:] - F[1:, :-1] + F[:-1, :-1]
    area = np.outer(np.diff(cdf.xgrid), np.diff(cdf.ygrid))
    return DensityGrid(cdf.xgrid, cdf.ygrid, np.clip(mass, 0.0, None) / area)


def _polar_table(density: DensityGrid, phis, n_r: int):
    r = np.linspace(0.0, density.r_max, n_r)
    P = density(np.cos(phis)[:, None] * r, np.sin(phis)[:, None] * r) * r
    return r, P


def angular_marginal_cdf(density: DensityGrid, thetas=None, n_phi: int = N_PHI,
                         n_r: int = N_R):
    """Angular CDF ``F(theta)`` on ``[0, 2 pi]`` by trapezoid quadrature.

    Returns the table ``(phi, F)`` at ``n_phi + 1`` nodes, or ``F`` at
    ``thetas`` if given.
    """
    if np.any(density.density < 0):
        raise ValueError("density must be nonnegative")
    phis = np.linspace(0.0, 2 * np.pi, n_phi + 1)
    r, P = _polar_table(density, phis, n_r)
    ang = np.trapezoid(P, r, axis=1)
    F = np.concatenate([[0.0], np.cumsum(0.5 * (ang[1:] + ang[:-1]) * np.diff(phis))])
    if not F[-1] > 0:
        raise DegenerateError("density carries no mass")
    F = F / F[-1]
    if thetas is None:
        return phis, F
    return np.interp(np.mod(thetas, 2 * np.pi), phis, F)


def _radial_tables(density: DensityGrid, thetas, n_r: int):
    r, P = _polar_table(density, np.atleast_1d(np.asarray(thetas, dtype=float)), n_r)
    F = np.concatenate([np.zeros((P.shape[0], 1)),
                        np.cumsum(0.5 * (P[:, 1:] + P[:, :-1]) * np.diff(r), axis=1)], axis=1)
    total = F[:, -1].copy()
    scale = max(float(density.cell_mass.sum()), 1e-300)
    valid = total > 1e-12 * scale
    F = F / np.where(valid, total, 1.0)[:, None]
    return r, F, valid


def radial_conditional_cdf(density: DensityGrid, theta: float, n_r: int = N_R):
    """Conditional radial CDF along the ray at angle ``theta``: ``(r, F)``."""
    r, F, valid = _radial_tables(density, [theta], n_r)
    if not valid[0]:
        raise DegenerateError(f"ray at angle {theta} carries no mass")
    return r, F[0]


def sw_sample(cdf_or_density, n_theta: int, n_r: int, fill: str = "skip",
              n_phi: int = N_PHI, n_quad: int = N_R) -> np.ndarray:
    """Angular-then-radial sample of at most ``n_theta * n_r`` points.

    Angles come from the midpoints of the angular CDF; along each angle the
    radii come from the midpoints of the conditional radial CDF.
    """
    if fill not in ("skip", "nearest"):
        raise ValueError(f"fill must be 'skip' or 'nearest', got {fill!r}")
    density = (density_from_cdf2(cdf_or_density) if isinstance(cdf_or_density, Cdf2Grid)
               else cdf_or_density)
    phis, Fth = angular_marginal_cdf(density, n_phi=n_phi, n_r=n_quad)
    thetas = invert_monotone(phis, Fth, percentile_grid(n_theta))
    r, F, valid = _radial_tables(density, thetas, n_quad)
    try:
        F, keep = _fill_rows(F, valid, fill)
    except DegenerateError:
        raise DegenerateError("every ray is degenerate; nothing to sample") from None
    q = percentile_grid(n_r)
    out = []
    for i in np.flatnonzero(keep):
        rho = invert_monotone(r, F[i], q)
        out.append(np.column_stack([rho * np.cos(thetas[i]), rho * np.sin(thetas[i])]))
    return np.concatenate(out)


def sw_timestepper(cdf: Cdf2Grid, model: SdeModel, cfg: StepperConfig, n_theta: int,
                   n_r: int, stream: NoiseStream) -> Cdf2Grid:
    pts = _into_domain(sw_sample(cdf, n_theta, n_r, fill="nearest"), model)
    return empirical_cdf2(propagate(pts, model, cfg, stream), cdf.xgrid, cdf.ygrid)


def sw_residual(model: SdeModel, cfg: StepperConfig, xgrid, ygrid, n_theta: int, n_r: int,
                stream: NoiseStream | None = None) -> ResidualMap:
    stream = stream or NoiseStream(cfg.seed)
    template = Cdf2Grid(xgrid, ygrid, np.zeros((len(xgrid), len(ygrid))),
                        count=n_theta * n_r)
    return _grid_residual(
        lambda c: sw_timestepper(c, model, cfg, n_theta, n_r, stream), template, cfg.h)


def sliced_w2_sq(X, Y, angles) -> float:
    """Mean over ``angles`` of the 1D squared W2 between projected ensembles."""
    X = np.asarray(X, dtype=float).reshape(-1, 2)
    Y = np.asarray(Y, dtype=float).reshape(-1, 2)
    angles = np.atleast_1d(np.asarray(angles, dtype=float))
    if X.shape != Y.shape:
        raise ValueError("ensembles must have equal size")
    if angles.size < 1:
        raise ValueError("need at least one angle")
    total = 0.0
    for a in angles:
        d = np.array([np.cos(a), np.sin(a)])
        px, py = X @ d, Y @ d
        total += w2_sq(px, py, ot_map_1d(px, py))[0]
    return total / angles.size
