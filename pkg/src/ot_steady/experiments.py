"""Experiment presets and runners shared by the CLI and the acceptance suite."""
from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import norm, truncnorm

from .krylov import (NewtonKrylovOptions, NoisyQuadratic, SolverReport, jvp_error_sweep,
                     newton_krylov, rms)
from .measures import (Cdf2Grid, MonotoneCurve, percentile_grid, sample_from_icdf)
from .meanfield import FvGrid, pde_steady_state, steady_density
from .models import (NoiseStream, SdeModel, StepperConfig, analytic_cdf2, make_model)
from .smoothers import (cdf2_residual, cdf2_sample, sw_residual, sw_sample)
from .wadam import FlowTrace, StepDecay, run_wasserstein_adam

logger = logging.getLogger(__name__)

MODEL_PARAMS = {
    "chemotaxis": ("D", "L"),
    "doublewell": (),
    "halfmoon": ("A", "B", "R", "alpha", "y_s", "L"),
}

# Each preset is a flat mapping of config keys, loaded by ``--preset standard``.
PRESETS: dict[str, dict[str, dict]] = {
    "wadam": {
        "chemotaxis": {"N": 100_000, "epochs": 300, "lr": 0.1, "decay": 0.1, "period": 100,
                       "dt": 1e-2, "h": 1.0},
        "halfmoon": {"N": 4096, "batch": 128, "epochs": 100, "lr": 0.01, "decay": 0.1,
                     "period": 100, "dt": 1e-3, "h": 0.1},
        "doublewell": {"N": 10_000, "epochs": 200, "lr": 0.1, "decay": 0.1, "period": 100,
                       "dt": 1e-3, "h": 0.1},
    },
    "nk-icdf": {
        "doublewell": {"K": 100, "N": 100_000, "eps": 1e-2, "h": 0.1, "dt": 1e-3,
                       "eta": 0.1, "restart": 3, "max_iters": 20, "stop": 1e-2,
                       "eval_budget": 120},
        "chemotaxis": {"K": 100, "N": 100_000, "eps": 1e-1, "h": 1.0, "dt": 1e-2,
                       "eta": 0.1, "restart": 10, "max_iters": 30, "stop": 1e-2,
                       "eval_budget": 150},
    },
    "nk-cdf2d": {
        "halfmoon": {"grid": 100, "nx": 100, "ny": 100, "h": 1.0, "dt": 1e-3, "eps": 0.1,
                     "eta": 0.1, "restart": 10, "max_iters": 25, "stop": 0.0,
                     "eval_budget": 400},
    },
    "nk-sliced": {
        "halfmoon": {"grid": 100, "n_theta": 100, "n_r": 100, "h": 1.0, "dt": 1e-3,
                     "eps": 0.1, "eta": 0.1, "restart": 10, "max_iters": 25, "stop": 0.0,
                     "eval_budget": 400},
    },
    "nk-pde": {
        "chemotaxis": {"cells": 1000, "dt": 1e-4, "h": 1.0, "eps": 1e-7, "eta": 1e-3,
                       "restart": 30, "max_iters": 15, "stop": 1e-9, "eval_budget": 2000},
    },
}


def build_model(cfg: dict) -> SdeModel:
    name = cfg["model"]
    params = {k: cfg[k] for k in MODEL_PARAMS.get(name, ()) if cfg.get(k) is not None}
    return make_model(name, **params)


def stepper_config(cfg: dict) -> StepperConfig:
    return StepperConfig(float(cfg["dt"]), float(cfg["h"]), int(cfg.get("seed", 0)))


def nk_options(cfg: dict) -> NewtonKrylovOptions:
    keys = ("eps", "eta", "restart", "max_restarts", "max_iters", "stop", "eval_budget")
    return NewtonKrylovOptions(**{k: cfg[k] for k in keys if cfg.get(k) is not None})


# --- initial states -------------------------------------------------------------

def _truncated_normal(model: SdeModel, mean: float, std: float):
    a, b = (model.lower - mean) / std, (model.upper - mean) / std
    return truncnorm(a, b, loc=mean, scale=std)


def initial_law(model: SdeModel):
    """Starting law per model: N(5, 2) truncated for chemotaxis, N(0, 1) otherwise."""
    if model.name == "chemotaxis":
        return _truncated_normal(model, 5.0, 2.0)
    return _truncated_normal(model, 0.0, 1.0)


def initial_ensemble(model: SdeModel, N: int, rng: np.random.Generator) -> np.ndarray:
    law = initial_law(model)
    if model.dim == 1:
        return law.rvs(size=N, random_state=rng)
    return law.rvs(size=(N, 2), random_state=rng)


def initial_icdf(model: SdeModel, K: int) -> MonotoneCurve:
    return MonotoneCurve(initial_law(model).ppf(percentile_grid(K)))


def initial_cdf2(xgrid, ygrid) -> np.ndarray:
    """Standard bivariate Gaussian CDF on the grid."""
    return np.outer(norm.cdf(xgrid), norm.cdf(ygrid))


def square_grid(model: SdeModel, n: int) -> np.ndarray:
    return np.linspace(model.lower, model.upper, n)


# --- runners ----------------------------------------------------------------------

@dataclass
class RunResult:
    status: str
    summary: str
    report: SolverReport | None = None
    trace: FlowTrace | None = None
    state: object = None
    ensemble: np.ndarray | None = None
    extras: dict = field(default_factory=dict)


def run_wadam(cfg: dict) -> RunResult:
    model = build_model(cfg)
    scfg = stepper_config(cfg)
    stream = NoiseStream(scfg.seed)
    X0 = initial_ensemble(model, int(cfg["N"]), stream.auxiliary())
    sched = StepDecay(float(cfg["lr"]), float(cfg["decay"]), int(cfg["period"]))
    t0 = time.perf_counter()
    X, trace = run_wasserstein_adam(model, scfg, X0, int(cfg["epochs"]), sched,
                                    batch=cfg.get("batch"), stream=stream,
                                    repeats=int(cfg.get("repeats") or 1))
    wall = time.perf_counter() - t0
    summary = (f"wadam {model.name}: loss {trace.loss[0]:.4e} -> {trace.loss[-1]:.4e}, "
               f"evals {len(trace.loss) * int(cfg.get('repeats') or 1)}, "
               f"sim time {trace.sim_time[-1]:g}, wall {wall:.1f}s")
    return RunResult("converged", summary, trace=trace, ensemble=X,
                     extras={"model": model, "X0": X0})


def _nk_summary(name, rep: SolverReport, wall):
    return (f"{name}: {rep.status}, residual {rep.residual_norms[0]:.4e} -> "
            f"{rep.final_residual:.4e} in {rep.iterations} iterations, "
            f"evals {rep.total_evals}, sim time {rep.sim_time:g}, wall {wall:.1f}s")


def run_nk_icdf(cfg: dict) -> RunResult:
    from .smoothers import icdf_residual
    model = build_model(cfg)
    if model.dim != 1:
        raise ValueError("nk-icdf needs a 1D model")
    scfg = stepper_config(cfg)
    K, N = int(cfg["K"]), int(cfg["N"])
    psi = icdf_residual(model, scfg, K, N, NoiseStream(scfg.seed))
    u0 = initial_icdf(model, K).values
    t0 = time.perf_counter()
    rep = newton_krylov(psi, u0, nk_options(cfg))
    wall = time.perf_counter() - t0
    curve = MonotoneCurve(np.sort(rep.u))
    return RunResult(rep.status, _nk_summary(f"nk-icdf {model.name}", rep, wall), report=rep,
                     state=curve, ensemble=sample_from_icdf(curve, N),
                     extras={"model": model, "u0": u0})


def _grid_setup(cfg):
    model = build_model(cfg)
    if model.dim != 2:
        raise ValueError("2D Newton-Krylov needs a 2D model")
    g = square_grid(model, int(cfg["grid"]))
    return model, stepper_config(cfg), g


def run_nk_cdf2d(cfg: dict) -> RunResult:
    model, scfg, g = _grid_setup(cfg)
    nx, ny = int(cfg["nx"]), int(cfg["ny"])
    psi = cdf2_residual(model, scfg, g, g, nx, ny, NoiseStream(scfg.seed))
    t0 = time.perf_counter()
    rep = newton_krylov(psi, initial_cdf2(g, g).ravel(), nk_options(cfg))
    wall = time.perf_counter() - t0
    cdf = Cdf2Grid(g, g, rep.u.reshape(g.size, g.size), count=nx * ny)
    return RunResult(rep.status, _nk_summary(f"nk-cdf2d {model.name}", rep, wall),
                     report=rep, state=cdf,
                     ensemble=np.clip(cdf2_sample(cdf, nx, ny, fill="nearest"),
                                      model.lower, model.upper),
                     extras={"model": model})


def run_nk_sliced(cfg: dict) -> RunResult:
    model, scfg, g = _grid_setup(cfg)
    nt, nr = int(cfg["n_theta"]), int(cfg["n_r"])
    psi = sw_residual(model, scfg, g, g, nt, nr, NoiseStream(scfg.seed))
    t0 = time.perf_counter()
    rep = newton_krylov(psi, initial_cdf2(g, g).ravel(), nk_options(cfg))
    wall = time.perf_counter() - t0
    cdf = Cdf2Grid(g, g, rep.u.reshape(g.size, g.size), count=nt * nr)
    return RunResult(rep.status, _nk_summary(f"nk-sliced {model.name}", rep, wall),
                     report=rep, state=cdf,
                     ensemble=np.clip(sw_sample(cdf, nt, nr, fill="nearest"),
                                      model.lower, model.upper),
                     extras={"model": model})


def run_nk_pde(cfg: dict) -> RunResult:
    grid = FvGrid(int(cfg["cells"]), float(cfg.get("L") or 10.0), float(cfg.get("D") or 1.0))
    t0 = time.perf_counter()
    rep = pde_steady_state(grid, grid.gaussian(), float(cfg["dt"]), float(cfg["h"]),
                           nk_options(cfg))
    wall = time.perf_counter() - t0
    exact = steady_density(grid)
    err = float(np.max(np.abs(rep.u - exact)) / np.max(exact))
    summary = _nk_summary("nk-pde chemotaxis", rep, wall) + f", rel Linf to analytic {err:.3e}"
    return RunResult(rep.status, summary, report=rep, state=rep.u,
                     extras={"grid": grid, "exact": exact, "rel_linf": err})


def noise_floor(residual, state, repeats: int = 10) -> float:
    """Mean RMS residual at a (stationary) state over independent evaluations."""
    state = np.asarray(state, dtype=float).ravel()
    return float(np.mean([rms(residual(state)) for _ in range(repeats)]))


def oracle_cdf2_state(model: SdeModel, grid) -> np.ndarray:
    return analytic_cdf2(model, grid, grid)


def run_eps_sweep(cfg: dict) -> RunResult:
    """FD-JVP error versus step size on the synthetic noisy quadratic."""
    dim, N = int(cfg["dim"]), int(cfg["N"])
    psi = NoisyQuadratic(dim, float(cfg["sigma"]), N, int(cfg.get("seed", 0)))
    rng = np.random.default_rng(int(cfg.get("seed", 0)) + 1)
    u = rng.standard_normal(dim)
    v = rng.standard_normal(dim)
    eps_list = [float(e) for e in cfg["eps"]]
    ref = psi.jacobian_vector(u, v)
    rows = jvp_error_sweep(psi, u, v, eps_list, int(cfg["repeats"]), reference=ref)
    best = rows[np.argmin(rows[:, 1]), 0]
    summary = f"eps-sweep N={N}: best eps {best:.3g} (N^-1/4 = {N ** -0.25:.3g})"
    return RunResult("converged", summary, extras={"rows": rows, "best": best})


def log_eps_grid(lo: float = 1e-8, hi: float = 1.0, per_decade: int = 4) -> list[float]:
    n = int(round(np.log10(hi / lo) * per_decade)) + 1
    return list(np.logspace(np.log10(lo), np.log10(hi), n))
