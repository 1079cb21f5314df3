"""Euler--Maruyama particle timesteppers with reflecting walls.

The benchmark models are overdamped Langevin systems
``dX = b(X) dt + sqrt(2 D) dW`` on a box ``[a, b]^dim`` with gradient drift
``b = -grad U``, so each carries its potential and the stationary law is
``exp(-U / D) / Z``.
"""
from __future__ import annotations

import logging
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable

import numpy as np

from .measures import invert_monotone, percentile_grid

logger = logging.getLogger(__name__)

# Particles are propagated in fixed-size blocks, each with its own noise
# substream, so results do not depend on how many workers run the blocks.
BLOCK_SIZE = 8192


@dataclass(frozen=True)
class SdeModel:
    name: str
    dim: int
    drift: Callable[[np.ndarray], np.ndarray]
    diffusion: float
    lower: float
    upper: float
    potential: Callable[[np.ndarray], np.ndarray] | None = None
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.dim not in (1, 2):
            raise ValueError(f"dim must be 1 or 2, got {self.dim}")
        if self.diffusion < 0:
            raise ValueError("diffusion coefficient must be nonnegative")
        if not self.lower < self.upper:
            raise ValueError("domain needs lower < upper")

    @cached_property
    def normalization(self) -> float:
        """Trapezoid integral of ``exp(-U/D)`` over the domain."""
        if self.potential is None or self.diffusion <= 0:
            raise ValueError(f"model {self.name!r} has no analytic stationary density")
        if self.dim == 1:
            x = np.linspace(self.lower, self.upper, 4096)
            return float(np.trapezoid(self._unnormalized(x), x))
        g = np.linspace(self.lower, self.upper, 512)
        X, Y = np.meshgrid(g, g, indexing="ij")
        vals = self._unnormalized(np.stack([X, Y], axis=-1))
        return float(np.trapezoid(np.trapezoid(vals, g, axis=1), g))

    def _unnormalized(self, pts):
        return np.exp(-self.potential(pts) / self.diffusion)


@dataclass(frozen=True)
class StepperConfig:
    dt: float
    h: float
    seed: int = 0

    def __post_init__(self):
        if not 0 < self.dt <= self.h:
            raise ValueError(f"need 0 < dt <= h, got dt={self.dt}, h={self.h}")

    @property
    def n_steps(self) -> int:
        n = max(1, int(round(self.h / self.dt)))
        if abs(n * self.dt - self.h) > 1e-12 * self.h:
            logger.warning("h/dt = %g is not an integer; integrating %d steps (h = %g)",
                           self.h / self.dt, n, n * self.dt)
        return n


class NoiseStream:
    """Counter-based source of independent noise substreams.

    Every call to :meth:`next_call` opens a fresh family of substreams keyed
    by ``(seed, call, block)``; a fixed seed and call sequence reproduces
    every trajectory bit for bit.
    """

    def __init__(self, seed: int = 0):
        self.seed = int(seed)
        self.calls = 0

    def next_call(self) -> int:
        c = self.calls
        self.calls += 1
        return c

    def generator(self, call: int, block: int = 0, tag: int = 0) -> np.random.Generator:
        ss = np.random.SeedSequence(self.seed, spawn_key=(tag, call, block))
        return np.random.Generator(np.random.SFC64(ss))

    def auxiliary(self) -> np.random.Generator:
        """Generator for non-propagation randomness (batch partitions, initial draws)."""
        return self.generator(self.next_call(), tag=1)


def reflect(x, a: float, b: float):
    """Fold ``x`` into ``[a, b]`` by mirroring across the violated wall.

    Points already inside are returned unchanged (bitwise).
    """
    if not a < b:
        raise ValueError("reflect needs a < b")
    arr = np.array(x, dtype=float, copy=True)
    out = _reflect_inplace(np.atleast_1d(arr), a, b)
    return out.reshape(arr.shape) if arr.ndim else float(out[0])


def _reflect_inplace(x: np.ndarray, a: float, b: float) -> np.ndarray:
    low = x < a
    if low.any():
        x[low] = 2 * a - x[low]
    high = x > b
    if high.any():
        x[high] = 2 * b - x[high]
    out = (x < a) | (x > b)
    if out.any():
        # several wall crossings in one step: fold with period 2(b - a)
        width = b - a
        y = np.mod(x[out] - a, 2 * width)
        x[out] = a + np.where(y > width, 2 * width - y, y)
    return x


def _worker_count(n_blocks: int) -> int:
    env = os.environ.get("OT_STEADY_THREADS")
    cap = int(env) if env else (os.cpu_count() or 1)
    return max(1, min(cap, n_blocks))


def propagate(ensemble, model: SdeModel, cfg: StepperConfig,
              stream: NoiseStream | None = None) -> np.ndarray:
    """Advance every particle ``round(h / dt)`` Euler--Maruyama steps."""
    x = np.asarray(ensemble, dtype=float)
    if model.dim == 1:
        x = x.ravel()
    elif x.ndim != 2 or x.shape[1] != 2:
        raise ValueError(f"2D model expects an (N, 2) ensemble, got shape {x.shape}")
    if not np.all(np.isfinite(x)):
        raise ValueError("ensemble contains non-finite coordinates")
    if np.any(x < model.lower) or np.any(x > model.upper):
        raise ValueError(f"particles outside the domain [{model.lower}, {model.upper}]")
    if stream is None:
        stream = NoiseStream(cfg.seed)
    call = stream.next_call()
    n_steps = cfg.n_steps
    out = x.copy()
    starts = range(0, out.shape[0], BLOCK_SIZE)

    def run_block(b_start):
        blk = out[b_start:b_start + BLOCK_SIZE]
        rng = stream.generator(call, b_start // BLOCK_SIZE)
        _em_block(blk, model, cfg.dt, n_steps, rng)

    workers = _worker_count(len(starts))
    if workers == 1:
        for s in starts:
            run_block(s)
    else:
        with ThreadPoolExecutor(workers) as pool:
            list(pool.map(run_block, starts))
    return out


def _em_block(x: np.ndarray, model: SdeModel, dt: float, n_steps: int,
              rng: np.random.Generator) -> None:
    scale = np.sqrt(2.0 * model.diffusion * dt)
    noise = np.empty_like(x) if scale > 0 else None
    for _ in range(n_steps):
        x += model.drift(x) * dt
        if noise is not None:
            rng.standard_normal(out=noise)
            noise *= scale
            x += noise
        _reflect_inplace(x, model.lower, model.upper)


# --- benchmark systems ------------------------------------------------------

def make_chemotaxis(D: float = 1.0, L: float = 10.0) -> SdeModel:
    """Bacteria climbing ``S = tanh(x)`` with sensitivity ``chi(S) = 1 + S^2/2``."""

    def drift(x):
        s = np.tanh(x)
        return (1.0 + 0.5 * s * s) * (1.0 - s * s)

    def potential(x):
        # U = -int_{-1}^{S(x)} chi(s) ds
        s = np.tanh(np.asarray(x, dtype=float))
        return -((s + s ** 3 / 6.0) - (-1.0 - 1.0 / 6.0))

    return SdeModel("chemotaxis", 1, drift, D, -L, L, potential, {"D": D, "L": L})


def make_doublewell() -> SdeModel:
    """Bimodal law ``exp(-(x^2 - 1)^2 / 2)`` on ``[-4, 4]``."""

    def drift(x):
        return -2.0 * x * (x * x - 1.0)

    def potential(x):
        x = np.asarray(x, dtype=float)
        return 0.5 * (x * x - 1.0) ** 2

    return SdeModel("doublewell", 1, drift, 1.0, -4.0, 4.0, potential, {})


def make_halfmoon(A: float = 2.0, B: float = 0.5, R: float = 2.0, alpha: float = 1.5,
                  y_s: float = -0.5, L: float = 4.0) -> SdeModel:
    """Ring of radius ``R`` tilted by an exponential wall below ``y_s``."""

    def grad_u(p):
        x, y = p[..., 0], p[..., 1]
        r = np.hypot(x, y)
        with np.errstate(invalid="ignore", divide="ignore"):
            radial = np.where(r > 0, 2.0 * A * (r - R) / r, 0.0)
        g = np.empty_like(p)
        g[..., 0] = radial * x
        g[..., 1] = radial * y - alpha * B * np.exp(-alpha * (y - y_s))
        return g

    def drift(p):
        return -grad_u(p)

    def potential(p):
        p = np.asarray(p, dtype=float)
        r = np.hypot(p[..., 0], p[..., 1])
        return A * (r - R) ** 2 + B * np.exp(-alpha * (p[..., 1] - y_s))

    params = {"A": A, "B": B, "R": R, "alpha": alpha, "y_s": y_s, "L": L}
    return SdeModel("halfmoon", 2, drift, 1.0, -L, L, potential, params)


MODELS = {
    "chemotaxis": make_chemotaxis,
    "doublewell": make_doublewell,
    "halfmoon": make_halfmoon,
}


def make_model(name: str, **params) -> SdeModel:
    try:
        factory = MODELS[name]
    except KeyError:
        raise ValueError(f"unknown model {name!r}; choose from {sorted(MODELS)}") from None
    return factory(**params)


# --- analytic stationary laws ----------------------------------------------

def analytic_density(model: SdeModel, pts):
    """Normalized stationary density ``exp(-U/D) / Z`` at ``pts``."""
    return model._unnormalized(np.asarray(pts, dtype=float)) / model.normalization


def analytic_icdf(model: SdeModel, p, n_grid: int = 200_001):
    """Stationary quantile function of a 1D model, by dense-grid inversion."""
    if model.dim != 1:
        raise ValueError("analytic_icdf is defined for 1D models only")
    x = np.linspace(model.lower, model.upper, n_grid)
    f = model._unnormalized(x)
    F = np.concatenate([[0.0], np.cumsum(0.5 * (f[1:] + f[:-1]) * np.diff(x))])
    return invert_monotone(x, F / F[-1], p)


def oracle_quantiles(model: SdeModel, N: int) -> np.ndarray:
    """Deterministic stationary sample: exact quantiles at the N midpoints."""
    return analytic_icdf(model, percentile_grid(N))


def analytic_cdf2(model: SdeModel, xgrid, ygrid, refine: int = 8) -> np.ndarray:
    """Stationary joint CDF of a 2D model on a grid, by cumulative quadrature."""
    if model.dim != 2:
        raise ValueError("analytic_cdf2 is defined for 2D models only")
    xf = _refined(model.lower, np.asarray(xgrid, dtype=float), refine)
    yf = _refined(model.lower, np.asarray(ygrid, dtype=float), refine)
    X, Y = np.meshgrid(xf, yf, indexing="ij")
    f = model._unnormalized(np.stack([X, Y], axis=-1))
    cx = _cumtrapz(f, xf, axis=0)
    cxy = _cumtrapz(cx, yf, axis=1)
    F = cxy / cxy[-1, -1]
    ix = np.searchsorted(xf, xgrid)
    iy = np.searchsorted(yf, ygrid)
    return np.clip(F[np.ix_(ix, iy)], 0.0, 1.0)


def _refined(lower, grid, refine):
    pts = np.concatenate([[lower], grid]) if grid[0] > lower else grid
    fine = [np.linspace(a, b, refine + 1)[:-1] for a, b in zip(pts[:-1], pts[1:])]
    return np.unique(np.concatenate(fine + [pts[-1:]] + [grid]))


def _cumtrapz(f, x, axis):
    f = np.moveaxis(f, axis, 0)
    inc = 0.5 * (f[1:] + f[:-1]) * np.diff(x)[(slice(None),) + (None,) * (f.ndim - 1)]
    out = np.concatenate([np.zeros_like(f[:1]), np.cumsum(inc, axis=0)])
    return np.moveaxis(out, 0, axis)


def sample_stationary(model: SdeModel, N: int, rng: np.random.Generator) -> np.ndarray:
    """Exact draws from the analytic stationary law (rejection from the box)."""
    if model.dim == 1:
        return analytic_icdf(model, rng.random(N))
    g = np.linspace(model.lower, model.upper, 801)
    X, Y = np.meshgrid(g, g, indexing="ij")
    fmax = model._unnormalized(np.stack([X, Y], axis=-1)).max() * 1.01
    out = np.empty((0, 2))
    while out.shape[0] < N:
        cand = rng.uniform(model.lower, model.upper, size=(2 * N, 2))
        keep = rng.random(2 * N) * fmax < model._unnormalized(cand)
        out = np.concatenate([out, cand[keep]])
    return out[:N]
