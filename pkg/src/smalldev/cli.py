"""Command line front end.

    smalldev <command> -c CONFIG [-o OUTDIR] [options]

Commands: validate, eigen, principal, v0, mc, compare, rarefy.  Artifacts
are written atomically into OUTDIR.  Exit status: 0 success, 1 invalid
input or configuration, 2 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import os
import sys
import tempfile
import warnings
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from ._accel import configure_threads
from .asymptotics import principal_term, v0_value
from .config import Config, ConfigError, load
from .exprdsl import ExprError
from .mc import SimulationError, compare, estimate_survival
from .model import ModelError, sigma0, validate
from .rarefaction import SeedingError, run as rarefy_run
from .spectral import (NonConvergence, SpectralError, UnsupportedProblem,
                       analytic_eigensystem, fd_eigensystem)

EXIT_OK, EXIT_INVALID, EXIT_NUMERIC = 0, 1, 2


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_INVALID, f"{self.prog}: error: {message}\n")


# ------------------------------------------------------------------ output

def _clean(obj):
    if isinstance(obj, dict):
        return {k: _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else None
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def _atomic_write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent)
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        try:
            os.unlink(tmp)
        except FileNotFoundError:
            pass
        raise


def write_json(path: Path, obj) -> None:
    _atomic_write(path, json.dumps(_clean(obj), indent=2, allow_nan=False) + "\n")


def write_csv(path: Path, header, rows) -> None:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in row])
    _atomic_write(path, buf.getvalue())


# ------------------------------------------------------------------ helpers

def build_eigensystem(cfg: Config, k: int | None = None, method: str | None = None,
                      grid: int | None = None):
    s = cfg.solver
    k = k or s.k
    method = method or s.method
    s0 = sigma0(cfg.model)
    if method == "analytic":
        return analytic_eigensystem(cfg.domain, s0, k)
    return fd_eigensystem(cfg.domain, s0, grid or s.grid, k, group_tol=s.group_tol)


def _floats(text: str) -> list[float]:
    try:
        vals = [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None
    if not vals:
        raise argparse.ArgumentTypeError("empty list")
    return vals


def _positive_int(text: str) -> int:
    try:
        v = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected an integer, got {text!r}") from None
    if v < 1:
        raise argparse.ArgumentTypeError("must be >= 1")
    return v


# ---------------------------------------------------------------- commands

def cmd_validate(cfg: Config, args, out: Path) -> int:
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        rep = validate(cfg.model, cfg.domain, args.samples or cfg.validate_samples)
    write_json(out / "validate.json", rep.to_dict())
    print(f"mu_ell={rep.mu_ell!r} passed={rep.passed}")
    for w in rep.warnings:
        print(f"warning: {w}", file=sys.stderr)
    return EXIT_OK if rep.passed else EXIT_INVALID


def cmd_eigen(cfg: Config, args, out: Path) -> int:
    eig = build_eigensystem(cfg, args.k, args.method, args.grid)
    pairs = []
    for n, lam in enumerate(eig.lambdas):
        pairs.append({
            "index": n + 1,
            "lambda": float(lam),
            "multiplicity_group": eig.group_of(n) + 1,
            "c_coefficient": float(eig.c[n]),
        })
    write_json(out / "eigen.json", {"provenance": eig.tag(), "pairs": pairs})
    print(f"{len(pairs)} eigenpairs, lambda1={float(eig.lambdas[0])!r}")
    return EXIT_OK


def _principal_for(cfg, eig, eps, T=None):
    return principal_term(eig, cfg.model, T, eps, cfg.principal.z, n_panels=cfg.solver.panels)


def cmd_principal(cfg: Config, args, out: Path) -> int:
    eig = build_eigensystem(cfg)
    eps = args.eps[0] if args.eps else cfg.principal.eps
    pt = _principal_for(cfg, eig, eps)
    write_json(out / "principal.json", pt.to_dict())
    print(f"value={pt.value!r}")
    sweep = args.sweep or list(cfg.principal.sweep)
    if sweep:
        rows = []
        for e in sweep:
            p = _principal_for(cfg, eig, e)
            rows.append((e, p.lambda1, p.exponent, p.mu_integral, p.F_z, p.value))
        write_csv(out / "principal_sweep.csv",
                  ("eps", "lambda1", "exponent", "mu_integral", "F_z", "value"), rows)
    return EXIT_OK


def cmd_v0(cfg: Config, args, out: Path) -> int:
    N = args.N or cfg.principal.N
    eig = build_eigensystem(cfg, k=max(cfg.solver.k, N))
    eps = args.eps[0] if args.eps else cfg.principal.eps
    res = v0_value(eig, cfg.model, None, eps, cfg.principal.z, N, n_panels=cfg.solver.panels)
    write_json(out / "v0.json", res.to_dict())
    print(f"value={res.value!r} tail_bound={res.tail_bound!r}")
    return EXIT_OK


def _mc_config(cfg, args):
    mcc = cfg.mc
    return replace(
        mcc,
        dt=args.dt or mcc.dt,
        n_paths=args.n_paths or mcc.n_paths,
        seed=mcc.seed if args.seed is None else args.seed,
        exit_correction=args.exit_correction or mcc.exit_correction,
    )


def _estimate(cfg, mcc, eps, T):
    x0 = eps * np.asarray(cfg.principal.z)
    return estimate_survival(cfg.model, cfg.domain, eps, x0, T, mcc.dt, mcc.n_paths, mcc.seed,
                             exit_correction=mcc.exit_correction, batch_size=mcc.batch_size)


def cmd_mc(cfg: Config, args, out: Path) -> int:
    mcc = _mc_config(cfg, args)
    eps = args.eps[0] if args.eps else cfg.principal.eps
    est = _estimate(cfg, mcc, eps, cfg.model.horizon)
    write_json(out / "mc.json", est.to_dict())
    print(f"p_hat={est.p_hat!r} ci=[{est.ci_low!r}, {est.ci_high!r}]")
    return EXIT_OK


def cmd_compare(cfg: Config, args, out: Path) -> int:
    mcc = _mc_config(cfg, args)
    eig = build_eigensystem(cfg)
    eps_list = args.eps or [cfg.principal.eps]
    T0 = cfg.model.horizon
    rows = []
    for eps in eps_list:
        T = T0 * eps**2 if args.scale_T else T0
        row = compare(_principal_for(cfg, eig, eps, T), _estimate(cfg, mcc, eps, T))
        rows.append(tuple(getattr(row, f) for f in row.FIELDS))
        print(f"eps={eps!r} ratio={row.ratio!r}")
    write_csv(out / "compare.csv", row.FIELDS, rows)
    return EXIT_OK


def cmd_rarefy(cfg: Config, args, out: Path) -> int:
    rc = cfg.rarefaction
    sm = rc.measure
    if args.mode or args.normalization:
        sm = replace(sm, mode=args.mode or sm.mode, normalization=args.normalization or sm.normalization)
    eig = build_eigensystem(cfg)
    res = rarefy_run(sm, cfg.model, cfg.domain, eig, args.eps[0] if args.eps else rc.eps,
                     None, args.dt or rc.dt, args.reps or rc.reps,
                     rc.seed if args.seed is None else args.seed,
                     exit_correction=args.exit_correction or cfg.mc.exit_correction)
    write_json(out / "rarefy.json", res.to_dict())
    if args.histogram:
        write_csv(out / "rarefy_hist.csv", ("count", "frequency", "poisson_pmf"), res.histogram())
    print(f"a_T={res.a_T!r} mean={res.mean!r} var={res.variance!r} tv={res.tv!r}")
    return EXIT_OK


COMMANDS = {
    "validate": cmd_validate,
    "eigen": cmd_eigen,
    "principal": cmd_principal,
    "v0": cmd_v0,
    "mc": cmd_mc,
    "compare": cmd_compare,
    "rarefy": cmd_rarefy,
}


def make_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="smalldev", description=__doc__.split("\n\n")[0])
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name in COMMANDS:
        s = sub.add_parser(name)
        s.add_argument("-c", "--config", required=True, type=Path)
        s.add_argument("-o", "--out", type=Path, default=Path("."))
        s.add_argument("--threads", type=_positive_int)
        if name == "validate":
            s.add_argument("--samples", type=_positive_int)
        if name == "eigen":
            s.add_argument("--k", type=_positive_int)
            s.add_argument("--method", choices=("analytic", "fd"))
            s.add_argument("--grid", type=_positive_int)
        if name in ("principal", "v0", "mc", "compare", "rarefy"):
            s.add_argument("--eps", type=_floats, help="comma-separated for compare")
        if name == "principal":
            s.add_argument("--sweep", type=_floats)
        if name == "v0":
            s.add_argument("--N", type=_positive_int)
        if name in ("mc", "compare", "rarefy"):
            s.add_argument("--dt", type=float)
            s.add_argument("--seed", type=int)
            s.add_argument("--exit-correction", choices=("bridge", "none"))
        if name in ("mc", "compare"):
            s.add_argument("--n-paths", type=_positive_int)
        if name == "compare":
            s.add_argument("--scale-T", action="store_true",
                           help="use T * eps^2 so that T / eps^2 stays fixed")
        if name == "rarefy":
            s.add_argument("--reps", type=_positive_int)
            s.add_argument("--mode", choices=("deterministic", "poisson"))
            s.add_argument("--normalization", choices=("consistent", "paper"))
            s.add_argument("--histogram", action="store_true")
    return p


def main(argv=None) -> int:
    args = make_parser().parse_args(argv)
    try:
        cfg = load(args.config)
        configure_threads(args.threads)
        return COMMANDS[args.command](cfg, args, args.out)
    except (NonConvergence, SimulationError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ConfigError, ExprError, ModelError, SeedingError, UnsupportedProblem,
            SpectralError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
