"""Command-line experiment harness.

Every subcommand resolves its configuration in three layers: built-in
defaults (including the model preset), an optional ``key = value`` config
file, and explicit flags. The resolved values are written to
``manifest.txt`` next to the CSV outputs.
"""
from __future__ import annotations

import argparse
import logging
import platform
import sys
from pathlib import Path

import numpy as np
import scipy

from . import __version__
from . import experiments as ex
from .errors import DegenerateError, EvaluationError
from .measures import (histogram, percentile_grid, write_cdf2_csv, write_histogram_csv,
                       write_icdf_csv, _fmt)
from .models import analytic_density, analytic_icdf

EXIT_OK, EXIT_ERROR, EXIT_BUDGET, EXIT_USAGE = 0, 1, 2, 64

_MODEL_KEYS = {"D": float, "L": float, "A": float, "B": float, "R": float, "alpha": float,
               "y_s": float}
_STEPPER_KEYS = {"dt": float, "h": float, "seed": int}
_NK_KEYS = {"eps": float, "eta": float, "restart": int, "max_restarts": int,
            "max_iters": int, "stop": float, "eval_budget": int}


def _floats(text) -> list[float]:
    if isinstance(text, (list, tuple)):
        return [float(t) for t in text]
    return [float(t) for t in str(text).split(",") if t.strip()]


# key -> type per subcommand; ``model`` is a string everywhere it appears
SCHEMA: dict[str, dict] = {
    "wadam": {"model": str, "N": int, "epochs": int, "lr": float, "decay": float,
              "period": int, "batch": int, "repeats": int, **_STEPPER_KEYS, **_MODEL_KEYS},
    "nk-icdf": {"model": str, "K": int, "N": int, **_STEPPER_KEYS, **_NK_KEYS, **_MODEL_KEYS},
    "nk-cdf2d": {"model": str, "grid": int, "nx": int, "ny": int, **_STEPPER_KEYS,
                 **_NK_KEYS, **_MODEL_KEYS},
    "nk-sliced": {"model": str, "grid": int, "n_theta": int, "n_r": int, **_STEPPER_KEYS,
                  **_NK_KEYS, **_MODEL_KEYS},
    "nk-pde": {"model": str, "cells": int, "D": float, "L": float, "dt": float, "h": float,
               **_NK_KEYS},
    "oracle": {"model": str, "points": int, "K": int, **_MODEL_KEYS},
    "eps-sweep": {"model": str, "N": int, "sigma": float, "dim": int, "repeats": int,
                  "eps": _floats, "seed": int, "K": int, "h": float, "dt": float},
}

DEFAULTS: dict[str, dict] = {
    "wadam": {"seed": 0, "repeats": 1, "batch": None},
    "nk-icdf": {"seed": 0, "max_restarts": 1},
    "nk-cdf2d": {"seed": 0, "max_restarts": 1},
    "nk-sliced": {"seed": 0, "max_restarts": 1},
    "nk-pde": {"model": "chemotaxis", "max_restarts": 1},
    "oracle": {"points": None, "K": 100},
    "eps-sweep": {"model": "synthetic", "N": 10_000, "sigma": 1.0, "dim": 50, "repeats": 20,
                  "eps": ex.log_eps_grid(), "seed": 0, "K": 100, "h": 0.1, "dt": 1e-3},
}

REQUIRES_MODEL = {"wadam", "nk-icdf", "nk-cdf2d", "nk-sliced", "oracle"}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}\n{self.format_usage()}")


def read_config_file(path) -> dict:
    """Parse flat ``key = value`` lines; ``#`` starts a comment."""
    out = {}
    for n, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{n}: expected 'key = value'")
        k, v = (s.strip() for s in line.split("=", 1))
        out[k] = v
    return out


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="ot-steady", description="Steady states of particle timesteppers.")
    p.add_argument("--version", action="version", version=__version__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)
    for cmd, keys in SCHEMA.items():
        sp = sub.add_parser(cmd)
        sp.add_argument("--config", help="key = value file; flags override it")
        sp.add_argument("--out", default=None, help="output directory")
        sp.add_argument("--preset", default="standard", choices=["standard", "none"])
        for k in keys:
            sp.add_argument(f"--{k.replace('_', '-')}", dest=k, default=None)
    return p


def resolve_config(cmd: str, args: argparse.Namespace) -> dict:
    schema = SCHEMA[cmd]
    cfg = dict(DEFAULTS.get(cmd, {}))
    file_cfg = read_config_file(args.config) if args.config else {}
    unknown = sorted(set(file_cfg) - set(schema))
    if unknown:
        raise UsageError(f"unknown config keys for {cmd}: {', '.join(unknown)}")
    flags = {k: getattr(args, k) for k in schema if getattr(args, k) is not None}
    model = flags.get("model", file_cfg.get("model", cfg.get("model")))
    if cmd in REQUIRES_MODEL and model is None:
        raise UsageError(f"{cmd}: --model is required\n{build_parser().format_usage()}")
    if args.preset == "standard" and model in ex.PRESETS.get(cmd, {}):
        cfg.update(ex.PRESETS[cmd][model])
    cfg.update(file_cfg)
    cfg.update(flags)
    for k, v in list(cfg.items()):
        if v is None or k not in schema:
            continue
        try:
            cfg[k] = schema[k](v) if schema[k] is _floats or not isinstance(v, schema[k]) else v
        except (TypeError, ValueError):
            raise UsageError(f"{cmd}: bad value for {k}: {v!r}") from None
    return cfg


def write_manifest(out: Path, cmd: str, cfg: dict) -> None:
    lines = [f"command = {cmd}"]
    for k in sorted(cfg):
        v = cfg[k]
        if isinstance(v, list):
            v = ",".join(_fmt(x) for x in v)
        lines.append(f"{k} = {v}")
    lines += [f"version.ot_steady = {__version__}", f"version.python = {platform.python_version()}",
              f"version.numpy = {np.__version__}", f"version.scipy = {scipy.__version__}"]
    (out / "manifest.txt").write_text("\n".join(lines) + "\n")


def _hist_csv(out: Path, pts, model) -> None:
    if model.dim == 1:
        edges = np.linspace(model.lower, model.upper, 101)
    else:
        e = np.linspace(model.lower, model.upper, 51)
        edges = (e, e)
    write_histogram_csv(out / "histogram.csv", edges, histogram(pts, edges))


def _exit_for(status: str) -> int:
    if status == "converged":
        return EXIT_OK
    if status in ("budget", "max_iters"):
        return EXIT_BUDGET
    return EXIT_ERROR


def _cmd_wadam(cfg, out):
    res = ex.run_wadam(cfg)
    res.trace.write_csv(out / "trace.csv")
    _hist_csv(out, res.ensemble, res.extras["model"])
    return res


def _cmd_nk_icdf(cfg, out):
    res = ex.run_nk_icdf(cfg)
    res.report.write_csv(out / "report.csv")
    write_icdf_csv(out / "icdf.csv", res.state)
    _hist_csv(out, res.ensemble, res.extras["model"])
    return res


def _cmd_nk_grid(runner):
    def run(cfg, out):
        res = runner(cfg)
        res.report.write_csv(out / "report.csv")
        write_cdf2_csv(out / "cdf2.csv", res.state)
        _hist_csv(out, res.ensemble, res.extras["model"])
        return res
    return run


def _cmd_nk_pde(cfg, out):
    if cfg.get("model") != "chemotaxis":
        raise UsageError("nk-pde supports only --model chemotaxis")
    res = ex.run_nk_pde(cfg)
    res.report.write_csv(out / "report.csv")
    grid = res.extras["grid"]
    with open(out / "density.csv", "w") as fh:
        fh.write("x,density,analytic\n")
        for x, u, a in zip(grid.centers, res.state, res.extras["exact"]):
            fh.write(f"{_fmt(x)},{_fmt(u)},{_fmt(a)}\n")
    return res


def _cmd_oracle(cfg, out):
    model = ex.build_model(cfg)
    if model.dim == 1:
        n = cfg.get("points") or 4096
        x = np.linspace(model.lower, model.upper, n)
        dens = analytic_density(model, x)
        with open(out / "density.csv", "w") as fh:
            fh.write("x,density\n")
            for xi, di in zip(x, dens):
                fh.write(f"{_fmt(xi)},{_fmt(di)}\n")
        K = int(cfg["K"])
        from .measures import MonotoneCurve
        write_icdf_csv(out / "icdf.csv", MonotoneCurve(analytic_icdf(model, percentile_grid(K))))
    else:
        n = cfg.get("points") or 200
        g = np.linspace(model.lower, model.upper, n)
        X, Y = np.meshgrid(g, g, indexing="ij")
        dens = analytic_density(model, np.stack([X, Y], axis=-1))
        with open(out / "density.csv", "w") as fh:
            fh.write("x,y,density\n")
            for i in range(n):
                for j in range(n):
                    fh.write(f"{_fmt(g[i])},{_fmt(g[j])},{_fmt(dens[i, j])}\n")
    return ex.RunResult("converged", f"oracle {model.name}: wrote density.csv")


def _cmd_eps_sweep(cfg, out):
    if len(cfg["eps"]) < 2:
        raise ValueError("eps-sweep needs at least two eps values")
    if cfg["repeats"] < 2:
        raise ValueError("eps-sweep needs repeats >= 2")
    if cfg["model"] == "synthetic":
        res = ex.run_eps_sweep(cfg)
    else:
        res = _model_eps_sweep(cfg)
    with open(out / "eps_sweep.csv", "w") as fh:
        fh.write("eps,error_mean,error_std\n")
        for e, m, s in res.extras["rows"]:
            fh.write(f"{_fmt(e)},{_fmt(m)},{_fmt(s)}\n")
    return res


def _model_eps_sweep(cfg):
    # stochastic ICDF residual at the stationary curve; reference is a
    # 100-repeat averaged JVP
    from .krylov import jvp_error_sweep
    from .models import NoiseStream, StepperConfig
    from .smoothers import icdf_residual
    model = ex.build_model(cfg)
    if model.dim != 1:
        raise UsageError("eps-sweep on a model supports 1D models only")
    K, N = int(cfg["K"]), int(cfg["N"])
    psi = icdf_residual(model, StepperConfig(cfg["dt"], cfg["h"], cfg["seed"]), K, N,
                        NoiseStream(cfg["seed"]))
    u = analytic_icdf(model, percentile_grid(K))
    v = np.sin(np.linspace(0, np.pi, K))
    rows = jvp_error_sweep(psi, u, v, cfg["eps"], int(cfg["repeats"]))
    best = rows[np.argmin(rows[:, 1]), 0]
    return ex.RunResult("converged", f"eps-sweep {model.name} N={N}: best eps {best:.3g}",
                        extras={"rows": rows})


COMMANDS = {
    "wadam": _cmd_wadam,
    "nk-icdf": _cmd_nk_icdf,
    "nk-cdf2d": _cmd_nk_grid(ex.run_nk_cdf2d),
    "nk-sliced": _cmd_nk_grid(ex.run_nk_sliced),
    "nk-pde": _cmd_nk_pde,
    "oracle": _cmd_oracle,
    "eps-sweep": _cmd_eps_sweep,
}


def run(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            raise UsageError(parser.format_usage())
        cfg = resolve_config(args.command, args)
    except UsageError as exc:
        print(str(exc).rstrip(), file=sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    out = Path(args.out or Path("runs") / args.command)
    try:
        out.mkdir(parents=True, exist_ok=True)
        write_manifest(out, args.command, cfg)
        res = COMMANDS[args.command](cfg, out)
    except UsageError as exc:
        print(str(exc).rstrip(), file=sys.stderr)
        return EXIT_USAGE
    except (ValueError, DegenerateError, EvaluationError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    print(res.summary)
    return _exit_for(res.status)


def main() -> None:
    sys.exit(run())
