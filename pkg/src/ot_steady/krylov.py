"""Matrix-free Newton--Krylov for (possibly noisy) residual maps.

All vector norms are root-mean-square over components, so tolerances do not
depend on the discretization size.
"""
from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from .errors import EvaluationError
from .measures import _fmt

logger = logging.getLogger(__name__)

SQRT_EPS = float(np.sqrt(np.finfo(float).eps))


def rms(v) -> float:
    v = np.asarray(v, dtype=float)
    return float(np.sqrt(np.vdot(v, v) / v.size)) if v.size else 0.0


class ResidualMap:
    """Counting wrapper around ``u -> psi(u)``.

    Parameters
    ----------
    fn : callable
        The residual evaluator on flat float vectors.
    dim : int
        Length of the state vector.
    horizon : float
        In-simulation time consumed per evaluation.
    noise_scale : float, optional
        Estimate of the per-evaluation noise level ``sigma / sqrt(N)``.
    """

    def __init__(self, fn: Callable, dim: int, horizon: float = 0.0,
                 noise_scale: float | None = None):
        self.fn = fn
        self.dim = int(dim)
        self.horizon = float(horizon)
        self.noise_scale = noise_scale
        self.evals = 0

    def __call__(self, u) -> np.ndarray:
        u = np.asarray(u, dtype=float)
        if u.shape != (self.dim,):
            raise ValueError(f"state must have shape ({self.dim},), got {u.shape}")
        self.evals += 1
        r = np.asarray(self.fn(u), dtype=float).reshape(-1)
        if r.shape != (self.dim,):
            raise ValueError(f"residual has shape {r.shape}, expected ({self.dim},)")
        if not np.all(np.isfinite(r)):
            raise EvaluationError(f"non-finite residual at evaluation {self.evals}")
        return r


def fd_jvp(psi: Callable, u, v, eps: float, base=None) -> np.ndarray:
    """Forward-difference Jacobian-vector product along the normalized ``v``.

    ``base`` is ``psi(u)`` if already known, saving one evaluation.
    """
    if eps <= 0:
        raise ValueError("finite-difference step must be positive")
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    nv = rms(v)
    if not nv > 0:
        raise ValueError("JVP direction must be nonzero")
    if base is None:
        base = psi(u)
    return (psi(u + (eps / nv) * v) - base) * (nv / eps)


@dataclass
class GmresResult:
    x: np.ndarray
    converged: bool
    stagnated: bool
    iterations: int
    residual: float  # RMS of A x - b (estimated, or true when verified)


def gmres(apply_A: Callable, b, eta: float = 1e-3, restart: int = 30,
          max_restarts: int = 1, max_matvecs: int | None = None,
          verify: bool = True) -> GmresResult:
    """Restarted GMRES from a zero initial guess.

    Stops once ``||A x - b|| <= eta ||b||``. With ``verify`` the true
    residual of the returned iterate is recomputed (one extra product) and
    decides the ``converged`` flag. A restart cycle that fails to reduce the
    residual sets ``stagnated``.
    """
    b = np.asarray(b, dtype=float).reshape(-1)
    n = b.size
    if not np.all(np.isfinite(b)):
        raise ValueError("right-hand side must be finite")
    if not 0 < eta < 1:
        raise ValueError("GMRES tolerance must lie in (0, 1)")
    if restart < 1 or max_restarts < 1:
        raise ValueError("restart length and restart count must be >= 1")
    x = np.zeros(n)
    bnorm = np.linalg.norm(b)
    if bnorm == 0:
        return GmresResult(x, True, False, 0, 0.0)
    target = eta * bnorm
    budget = restart * max_restarts
    if max_matvecs is not None:
        budget = min(budget, max_matvecs)
    r = b.copy()
    rnorm = bnorm
    total = 0
    stagnated = False
    m = min(restart, n)
    while total < budget and rnorm > target:
        start_norm = rnorm
        V = np.zeros((m + 1, n))
        H = np.zeros((m + 1, m))
        cs = np.zeros(m)
        sn = np.zeros(m)
        g = np.zeros(m + 1)
        g[0] = rnorm
        V[0] = r / rnorm
        j = 0
        while j < m and total < budget:
            w = np.array(apply_A(V[j]), dtype=float).reshape(-1)  # copy: w is modified in place
            total += 1
            # modified Gram-Schmidt, one reorthogonalization pass
            for _ in range(2):
                for i in range(j + 1):
                    c = np.dot(V[i], w)
                    H[i, j] += c
                    w -= c * V[i]
            hnext = np.linalg.norm(w)
            H[j + 1, j] = hnext
            for i in range(j):
                t = cs[i] * H[i, j] + sn[i] * H[i + 1, j]
                H[i + 1, j] = -sn[i] * H[i, j] + cs[i] * H[i + 1, j]
                H[i, j] = t
            denom = np.hypot(H[j, j], H[j + 1, j])
            if denom == 0:
                cs[j], sn[j] = 1.0, 0.0
            else:
                cs[j], sn[j] = H[j, j] / denom, H[j + 1, j] / denom
            H[j, j] = denom
            H[j + 1, j] = 0.0
            g[j + 1] = -sn[j] * g[j]
            g[j] = cs[j] * g[j]
            j += 1
            rnorm = abs(g[j])
            if rnorm <= target or hnext <= 1e-14 * bnorm:
                break
            V[j] = w / hnext
        if j > 0:
            y = _back_substitute(H[:j, :j], g[:j])
            x = x + V[:j].T @ y
        if rnorm <= target or total >= budget:
            break
        if rnorm >= start_norm * (1 - 1e-12) or hnext <= 1e-14 * bnorm:
            stagnated = rnorm > target
            break
        # restart from the true residual
        r = b - np.asarray(apply_A(x), dtype=float).reshape(-1)
        total += 1
        rnorm = np.linalg.norm(r)
    if verify:
        rnorm = np.linalg.norm(b - np.asarray(apply_A(x), dtype=float).reshape(-1))
    converged = bool(rnorm <= target)
    return GmresResult(x, converged, stagnated and not converged, total,
                       float(rnorm / np.sqrt(n)))


def _back_substitute(R, g):
    if np.any(np.diag(R) == 0):
        return np.linalg.lstsq(R, g, rcond=None)[0]
    k = R.shape[0]
    y = np.zeros(k)
    for i in range(k - 1, -1, -1):
        y[i] = (g[i] - R[i, i + 1:] @ y[i + 1:]) / R[i, i]
    return y


@dataclass(frozen=True)
class NewtonKrylovOptions:
    eps: float = SQRT_EPS
    eta: float = 1e-3
    restart: int = 30
    max_restarts: int = 1
    max_iters: int = 50
    stop: float = 1e-8
    eval_budget: int = 100_000

    def __post_init__(self):
        if not self.eps > 0:
            raise ValueError("eps must be positive")
        if not 0 < self.eta < 1:
            raise ValueError("eta must lie in (0, 1)")
        if min(self.restart, self.max_restarts, self.max_iters, self.eval_budget) < 1:
            raise ValueError("restart, max_restarts, max_iters and eval_budget must be >= 1")
        if self.stop < 0:
            raise ValueError("stop must be nonnegative")


@dataclass
class SolverReport:
    u: np.ndarray
    residual_norms: list = field(default_factory=list)
    evals: list = field(default_factory=list)  # cumulative evaluations at each residual
    horizon: float = 0.0
    converged: bool = False
    status: str = "running"
    message: str = ""

    @property
    def iterations(self) -> int:
        return max(0, len(self.residual_norms) - 1)

    @property
    def total_evals(self) -> int:
        return self.evals[-1] if self.evals else 0

    @property
    def sim_time(self) -> float:
        return self.total_evals * self.horizon

    @property
    def final_residual(self) -> float:
        return self.residual_norms[-1] if self.residual_norms else float("nan")

    def write_csv(self, path) -> None:
        with open(Path(path), "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["iter", "residual", "evals"])
            for k, (r, e) in enumerate(zip(self.residual_norms, self.evals)):
                w.writerow([k, _fmt(r), e])


def newton_krylov(psi: ResidualMap, u0, opts: NewtonKrylovOptions | None = None,
                  callback: Callable | None = None) -> SolverReport:
    """Inexact Newton with GMRES over finite-difference JVPs; no line search.

    Stops when the RMS residual reaches ``opts.stop``, after ``max_iters``
    steps, or when the evaluation budget cannot fund another step. A
    non-finite residual ends the run with ``status == "error"``.
    """
    opts = opts or NewtonKrylovOptions()
    if not isinstance(psi, ResidualMap):
        psi = ResidualMap(psi, np.size(u0))
    u = np.array(u0, dtype=float).reshape(-1)
    report = SolverReport(u.copy(), horizon=psi.horizon)
    start = psi.evals
    try:
        r = psi(u)
        while True:
            nr = rms(r)
            report.residual_norms.append(nr)
            report.evals.append(psi.evals - start)
            report.u = u.copy()
            if callback is not None:
                callback(report)
            logger.info("newton %d: residual %.3e, evals %d", report.iterations, nr,
                        psi.evals - start)
            if nr <= opts.stop:
                report.converged, report.status = True, "converged"
                break
            if report.iterations >= opts.max_iters:
                report.status = "max_iters"
                break
            # keep one evaluation in reserve for the next residual
            room = opts.eval_budget - (psi.evals - start) - 1
            if room < 1:
                report.status = "budget"
                break
            base = r

            def jvp(v, u=u, base=base):
                return fd_jvp(psi, u, v, opts.eps, base=base)

            res = gmres(jvp, -r, opts.eta, opts.restart, opts.max_restarts,
                        max_matvecs=room, verify=False)
            if res.stagnated:
                logger.info("GMRES stagnated at relative residual %.3e",
                            res.residual / max(nr, 1e-300))
            u = u + res.x
            r = psi(u)
    except EvaluationError as exc:
        report.status, report.message = "error", str(exc)
        logger.error("Newton-Krylov aborted: %s", exc)
    return report


def recommend_eps(sigma: float, N: int) -> float:
    """Finite-difference step balancing bias and noise: ``N^{-1/4}`` or ``sqrt(eps_mach)``."""
    if sigma < 0 or N < 1:
        raise ValueError("need sigma >= 0 and N >= 1")
    if sigma == 0:
        return SQRT_EPS
    return float(N) ** -0.25


def min_horizon(lam1: float, lam2: float, eta: float = 0.1) -> float:
    """Shortest horizon damping the second mode by ``eta`` relative to the first."""
    if not lam2 < lam1 < 0:
        raise ValueError(f"need lam2 < lam1 < 0, got lam1={lam1}, lam2={lam2}")
    if not 0 < eta <= 1:
        raise ValueError("signal-to-noise factor must lie in (0, 1]")
    return float(np.log(eta) / (lam2 - lam1))


def residual_spectrum_check(lams, h: float, eps: float = 1e-6) -> float:
    """Max deviation of FD-estimated eigenvalues from the exact flow relations.

    For ``du/dt = diag(lams) u`` the flow map has eigenvalues ``exp(h lam)``
    and the residual ``u - phi_h(u)`` has ``1 - exp(h lam)``. Both are
    estimated with :func:`fd_jvp` on basis vectors; the larger deviation is
    returned.
    """
    lams = np.atleast_1d(np.asarray(lams, dtype=float))
    decay = np.exp(h * lams)

    def flow(u):
        return decay * u

    def psi(u):
        return u - flow(u)

    u0 = np.linspace(0.5, 1.5, lams.size)
    dev = 0.0
    for i in range(lams.size):
        e = np.zeros(lams.size)
        e[i] = 1.0
        mu_psi = fd_jvp(psi, u0, e, eps)[i]
        mu_flow = fd_jvp(flow, u0, e, eps)[i]
        dev = max(dev, abs(mu_psi - (1 - decay[i])), abs(mu_flow - decay[i]))
    return float(dev)


# --- step-size study ---------------------------------------------------------

class NoisyQuadratic:
    """Synthetic residual ``u + u^2/2 + noise`` with noise std ``sigma / sqrt(N)``.

    Its exact Jacobian is ``diag(1 + u)``.
    """

    def __init__(self, dim: int, sigma: float, N: int, seed: int = 0):
        self.dim = dim
        self.noise = sigma / np.sqrt(N) if N else 0.0
        self.rng = np.random.default_rng(seed)

    def __call__(self, u):
        u = np.asarray(u, dtype=float)
        out = u + 0.5 * u * u
        if self.noise:
            out = out + self.noise * self.rng.standard_normal(u.shape)
        return out

    def jacobian_vector(self, u, v):
        return (1 + np.asarray(u)) * np.asarray(v)


def jvp_error_sweep(psi: Callable, u, v, eps_list, repeats: int, reference=None):
    """RMS error of :func:`fd_jvp` against ``reference`` for each step size.

    When ``reference`` is None it is estimated by averaging 100 JVPs at the
    largest-but-one step in ``eps_list`` (useful for stochastic maps without
    an analytic Jacobian). Returns an array of rows ``(eps, mean, std)``.
    """
    eps_list = [float(e) for e in eps_list]
    if len(eps_list) < 2:
        raise ValueError("need at least two step sizes")
    if repeats < 2:
        raise ValueError("need at least two repeats")
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    if reference is None:
        e_ref = sorted(eps_list)[-2]
        reference = np.mean([fd_jvp(psi, u, v, e_ref) for _ in range(100)], axis=0)
    rows = []
    for eps in eps_list:
        errs = [rms(fd_jvp(psi, u, v, eps) - reference) for _ in range(repeats)]
        rows.append((eps, float(np.mean(errs)), float(np.std(errs, ddof=1))))
    return np.array(rows)
