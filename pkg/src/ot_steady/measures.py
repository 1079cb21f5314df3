"""Particle ensembles and their (inverse) cumulative distribution functions.

Ensembles are plain float arrays: shape ``(N,)`` in one dimension and
``(N, 2)`` in two. All percentiles follow the midpoint convention
``p_k = (k - 0.5) / K``.
"""
from __future__ import annotations

import csv
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DegenerateError

logger = logging.getLogger(__name__)


def percentile_grid(K: int) -> np.ndarray:
    """Midpoint percentiles ``(k - 0.5) / K`` for ``k = 1..K``."""
    if K < 1:
        raise ValueError(f"percentile grid needs K >= 1, got {K}")
    return (np.arange(1, K + 1) - 0.5) / K


@dataclass(frozen=True)
class MonotoneCurve:
    """ICDF values sampled on the midpoint percentile grid."""

    values: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "values", np.asarray(self.values, dtype=float))

    @property
    def K(self) -> int:
        return self.values.size

    @property
    def grid(self) -> np.ndarray:
        return percentile_grid(self.K)

    def __call__(self, p):
        # piecewise linear, constant outside [p_1, p_K]
        return np.interp(p, self.grid, self.values)


@dataclass(frozen=True)
class Cdf2Grid:
    """Joint CDF ``F(x_i, y_j)`` tabulated on a rectangular grid.

    ``count`` is the size of the ensemble that generated the table, if any;
    it sets the degenerate-conditional threshold.
    """

    xgrid: np.ndarray
    ygrid: np.ndarray
    values: np.ndarray
    count: int | None = None

    def __post_init__(self):
        for name in ("xgrid", "ygrid", "values"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=float))
        if self.values.shape != (self.xgrid.size, self.ygrid.size):
            raise ValueError(
                f"values shape {self.values.shape} does not match grids "
                f"({self.xgrid.size}, {self.ygrid.size})")

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape

    def with_values(self, values) -> "Cdf2Grid":
        return Cdf2Grid(self.xgrid, self.ygrid,
                        np.asarray(values, dtype=float).reshape(self.shape), self.count)


def _check_ascending(grid, name):
    grid = np.asarray(grid, dtype=float)
    if grid.ndim != 1 or grid.size < 1 or np.any(np.diff(grid) <= 0):
        raise ValueError(f"{name} must be a non-empty strictly ascending 1D array")
    return grid


def empirical_icdf(positions, K: int) -> MonotoneCurve:
    """Subsample the sorted ensemble at ranks ``ceil((k - 0.5) N / K)``."""
    x = np.sort(np.asarray(positions, dtype=float).ravel(), kind="stable")
    N = x.size
    if K < 2 or N < K:
        raise ValueError(f"empirical_icdf requires N >= K >= 2 (N={N}, K={K})")
    k = np.arange(1, K + 1)
    # ceil((2k - 1) N / 2K) in exact integer arithmetic, 1-based
    ranks = -((-(2 * k - 1) * N) // (2 * K))
    return MonotoneCurve(x[ranks - 1])


def sample_from_icdf(curve: MonotoneCurve | np.ndarray, N: int) -> np.ndarray:
    """Evaluate the interpolated ICDF at the ``N`` midpoint percentiles."""
    if N < 1:
        raise ValueError(f"need N >= 1 particles, got {N}")
    if not isinstance(curve, MonotoneCurve):
        curve = MonotoneCurve(curve)
    x = curve(percentile_grid(N))
    # Newton iterates need not be monotone; sorting keeps the output an ICDF sample
    return np.sort(x, kind="stable")


def invert_monotone(x, F, p):
    """Piecewise-linear inverse of the nondecreasing table ``F(x)``.

    Returns the smallest ``x`` with ``F(x) = p``: flat segments resolve to
    their left edge and ``p`` outside ``[F[0], F[-1]]`` clamps to the end
    points.
    """
    x = np.asarray(x, dtype=float)
    F = np.asarray(F, dtype=float)
    if x.size == 0 or F.size != x.size:
        raise ValueError("invert_monotone needs a non-empty table of matching sizes")
    p_arr = np.asarray(p, dtype=float)
    idx = np.searchsorted(F, p_arr, side="left")
    n = x.size
    lo = np.clip(idx - 1, 0, n - 1)
    hi = np.clip(idx, 0, n - 1)
    dF = F[hi] - F[lo]
    with np.errstate(invalid="ignore", divide="ignore"):
        lam = np.where(dF > 0, (p_arr - F[lo]) / dF, 1.0)
    out = x[lo] + np.clip(lam, 0.0, 1.0) * (x[hi] - x[lo])
    out = np.where(idx <= 0, x[0], out)
    out = np.where(idx >= n, x[-1], out)
    return out if out.ndim else float(out)


def empirical_cdf2(positions, xgrid, ygrid) -> Cdf2Grid:
    """Fraction of particles in the closed lower-left quadrant of each node."""
    xgrid = _check_ascending(xgrid, "xgrid")
    ygrid = _check_ascending(ygrid, "ygrid")
    pts = np.asarray(positions, dtype=float).reshape(-1, 2)
    N = pts.shape[0]
    if N < 1:
        raise ValueError("empirical_cdf2 needs at least one particle")
    nx, ny = xgrid.size, ygrid.size
    # particle n is counted at node i iff x_i >= X_n, i.e. i >= first such index
    ix = np.searchsorted(xgrid, pts[:, 0], side="left")
    iy = np.searchsorted(ygrid, pts[:, 1], side="left")
    counts = np.bincount(ix * (ny + 1) + iy, minlength=(nx + 1) * (ny + 1))
    counts = counts.reshape(nx + 1, ny + 1).cumsum(axis=0).cumsum(axis=1)
    return Cdf2Grid(xgrid, ygrid, counts[:nx, :ny] / N, count=N)


def marginal_cdf_x(cdf: Cdf2Grid) -> np.ndarray:
    """Top row ``F(x_i, y_max)`` rescaled so the last entry is exactly 1."""
    top = np.clip(cdf.values[:, -1], 0.0, None)
    top = np.maximum.accumulate(top)
    if top[-1] <= 0:
        raise DegenerateError("joint CDF carries no mass")
    return top / top[-1]


def _conditional_threshold(cdf: Cdf2Grid) -> float:
    return 1e-8 / (cdf.count if cdf.count else 1)


def conditional_rows(cdf: Cdf2Grid, xs, delta: float | None = None):
    """Conditional CDFs of ``y`` at each query ``x`` (vectorised).

    Returns ``(rows, valid)`` where ``rows[m]`` is the conditional table over
    ``ygrid`` for ``xs[m]`` and ``valid[m]`` flags a positive marginal density.
    """
    xs = np.atleast_1d(np.asarray(xs, dtype=float))
    if delta is None:
        delta = _conditional_threshold(cdf)
    if cdf.xgrid.size < 2:
        raise ValueError("conditional CDF needs at least two x nodes")
    dFdx = np.gradient(cdf.values, cdf.xgrid, axis=0, edge_order=1)
    i = np.clip(np.searchsorted(cdf.xgrid, xs, side="right") - 1, 0, cdf.xgrid.size - 2)
    x0, x1 = cdf.xgrid[i], cdf.xgrid[i + 1]
    w = np.clip((xs - x0) / (x1 - x0), 0.0, 1.0)[:, None]
    rows = (1.0 - w) * dFdx[i] + w * dFdx[i + 1]
    top = rows[:, -1].copy()
    valid = top > delta
    safe = np.where(valid, top, 1.0)
    rows = np.clip(rows / safe[:, None], 0.0, 1.0)
    rows = np.maximum.accumulate(rows, axis=1)
    return rows, valid


def conditional_cdf_y(cdf: Cdf2Grid, x: float, delta: float | None = None) -> np.ndarray:
    """Conditional CDF ``F(y | x)`` over ``ygrid`` from the x-derivative of ``F``."""
    if not cdf.xgrid[0] <= x <= cdf.xgrid[-1]:
        raise ValueError(f"x={x} outside [{cdf.xgrid[0]}, {cdf.xgrid[-1]}]")
    rows, valid = conditional_rows(cdf, [x], delta)
    if not valid[0]:
        raise DegenerateError(f"marginal density vanishes at x={x}")
    return rows[0]


def histogram(positions, bin_edges) -> np.ndarray:
    """Bin counts; pass a pair of edge arrays for a 2D ensemble."""
    pts = np.asarray(positions, dtype=float)
    if isinstance(bin_edges, (tuple, list)) and len(bin_edges) == 2 and np.ndim(bin_edges[0]) == 1:
        ex = _check_ascending(bin_edges[0], "x edges")
        ey = _check_ascending(bin_edges[1], "y edges")
        counts, _, _ = np.histogram2d(pts[:, 0], pts[:, 1], bins=[ex, ey])
        return counts.astype(np.int64)
    edges = _check_ascending(bin_edges, "bin edges")
    counts, _ = np.histogram(pts.ravel(), bins=edges)
    return counts


# --- CSV export ------------------------------------------------------------

def _fmt(v) -> str:
    return format(float(v), ".17g")


def write_icdf_csv(path, curve: MonotoneCurve) -> None:
    with open(Path(path), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["percentile", "value"])
        for p, v in zip(curve.grid, curve.values):
            w.writerow([_fmt(p), _fmt(v)])


def write_cdf2_csv(path, cdf: Cdf2Grid) -> None:
    with open(Path(path), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["x", "y", "value"])
        for i, x in enumerate(cdf.xgrid):
            for j, y in enumerate(cdf.ygrid):
                w.writerow([_fmt(x), _fmt(y), _fmt(cdf.values[i, j])])


def write_histogram_csv(path, bin_edges, counts) -> None:
    counts = np.asarray(counts)
    with open(Path(path), "w", newline="") as fh:
        w = csv.writer(fh)
        if counts.ndim == 2:
            ex, ey = bin_edges
            w.writerow(["x_left", "x_right", "y_left", "y_right", "count"])
            for i in range(counts.shape[0]):
                for j in range(counts.shape[1]):
                    w.writerow([_fmt(ex[i]), _fmt(ex[i + 1]), _fmt(ey[j]), _fmt(ey[j + 1]),
                                int(counts[i, j])])
        else:
            w.writerow(["bin_left", "bin_right", "count"])
            for i, c in enumerate(counts):
                w.writerow([_fmt(bin_edges[i]), _fmt(bin_edges[i + 1]), int(c)])
