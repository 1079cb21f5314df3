"""Discrete optimal transport between equal-size uniform ensembles.

Plans are permutations: particle ``i`` of ``X`` is sent to particle
``perm[i]`` of ``Y``.
"""
from __future__ import annotations

import csv
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.optimize import linear_sum_assignment

from .models import _worker_count

ASSIGNMENT_CAP = 4096


@dataclass(frozen=True)
class TransportPlan:
    """Permutation plan, optionally block-diagonal.

    ``blocks[i]`` is the batch index of particle ``i`` in ``X``; a blocked
    plan only pairs particles sharing a batch.
    """

    perm: np.ndarray
    blocks: np.ndarray | None = None

    def __post_init__(self):
        perm = np.asarray(self.perm, dtype=np.int64)
        object.__setattr__(self, "perm", perm)
        if np.any(np.sort(perm) != np.arange(perm.size)):
            raise ValueError("plan is not a bijection")
        if self.blocks is not None:
            object.__setattr__(self, "blocks", np.asarray(self.blocks, dtype=np.int64))

    @property
    def size(self) -> int:
        return self.perm.size

    def pushed(self, Y) -> np.ndarray:
        """``Pi Y``: the target paired with each source particle."""
        return np.asarray(Y)[self.perm]


def _check_pair(X, Y):
    X = np.asarray(X, dtype=float)
    Y = np.asarray(Y, dtype=float)
    if X.shape != Y.shape:
        raise ValueError(f"ensemble sizes differ: {X.shape} vs {Y.shape}")
    return X, Y


def ot_map_1d(X, Y) -> TransportPlan:
    """Monotone rearrangement: equal ranks are paired (stable tie-breaking)."""
    X, Y = _check_pair(np.ravel(X), np.ravel(Y))
    perm = np.empty(X.size, dtype=np.int64)
    perm[np.argsort(X, kind="stable")] = np.argsort(Y, kind="stable")
    return TransportPlan(perm)


def w2_sq(X, Y, plan: TransportPlan) -> tuple[float, float]:
    """Return ``(W2^2, F)``: the mean squared pairing cost and ``F = N/2 * W2^2``."""
    X, Y = _check_pair(X, Y)
    d = X - plan.pushed(Y)
    if d.ndim == 1:
        d = d[:, None]
    n = d.shape[0]
    dist = float(np.einsum("ij,ij->", d, d)) / n
    return dist, 0.5 * n * dist


def wasserstein_1d(X, Y) -> float:
    """1D W2 distance between equal-size samples (by sorting)."""
    x = np.sort(np.ravel(X))
    y = np.sort(np.ravel(Y))
    if x.size != y.size:
        raise ValueError("wasserstein_1d expects equal sample sizes")
    return float(np.sqrt(np.mean((x - y) ** 2)))


def _sq_cost(X, Y):
    return ((X[:, None, :] - Y[None, :, :]) ** 2).sum(axis=-1)


def assignment_2d(X, Y, cap: int = ASSIGNMENT_CAP) -> TransportPlan:
    """Exact minimizer of the summed squared distance (shortest augmenting path)."""
    X, Y = _check_pair(X, Y)
    if X.ndim != 2:
        raise ValueError("assignment_2d expects (N, d) arrays")
    if X.shape[0] > cap:
        raise ValueError(f"{X.shape[0]} particles exceed the exact-assignment cap {cap}; "
                         "use batched_coupling")
    _, cols = linear_sum_assignment(_sq_cost(X, Y))
    return TransportPlan(cols)


def batched_coupling(X, Y, B: int, rng: np.random.Generator) -> TransportPlan:
    """Block-diagonal plan from exact assignments within random batches.

    Particles are split into ``ceil(N / B)`` random batches (sampled without
    replacement) and each batch ``X_b`` is matched against its own images
    ``Y_b``; when ``B`` does not divide ``N`` the last batch is smaller and
    solved at its own size.
    """
    X, Y = _check_pair(X, Y)
    if X.ndim == 1:
        X, Y = X[:, None], Y[:, None]
    n = X.shape[0]
    if not 1 <= B <= n:
        raise ValueError(f"batch size must lie in [1, N={n}], got {B}")
    if B > ASSIGNMENT_CAP:
        raise ValueError(f"batch size {B} exceeds the exact-assignment cap {ASSIGNMENT_CAP}")
    src = rng.permutation(n)
    starts = list(range(0, n, B))

    def solve(s):
        xi = yi = src[s:s + B]
        _, cols = linear_sum_assignment(_sq_cost(X[xi], Y[yi]))
        return xi, yi[cols]

    workers = _worker_count(len(starts))
    if workers == 1:
        results = [solve(s) for s in starts]
    else:
        with ThreadPoolExecutor(workers) as pool:
            results = list(pool.map(solve, starts))
    perm = np.empty(n, dtype=np.int64)
    blocks = np.empty(n, dtype=np.int64)
    for b, (xi, yj) in enumerate(results):
        perm[xi] = yj
        blocks[xi] = b
    return TransportPlan(perm, blocks)


def wasserstein_gradient(X, Y, plan: TransportPlan) -> np.ndarray:
    """Truncated gradient ``X - Pi Y`` of ``F`` (the plan is held fixed)."""
    X, Y = _check_pair(X, Y)
    return X - plan.pushed(Y)


def velocity_field(X, Y, plan: TransportPlan, h: float) -> np.ndarray:
    """Finite-difference velocity ``(Pi Y - X) / h``."""
    if h <= 0:
        raise ValueError(f"horizon must be positive, got {h}")
    X, Y = _check_pair(X, Y)
    return (plan.pushed(Y) - X) / h


def write_plan_csv(path, plan: TransportPlan) -> None:
    with open(Path(path), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["i", "sigma_i"])
        for i, j in enumerate(plan.perm):
            w.writerow([i, int(j)])
