"""Experiment configuration: one TOML file fully determines a run.

Example::

    [model]
    dim = 1
    drift = ["0"]
    diffusion = [["1"]]     # columns b_k, each with dim components
    T = 1.0

    [domain]
    shape = "box"           # or "ball" with radius = ...
    lo = [0.0]
    hi = [1.0]

    [solver]
    method = "analytic"     # or "fd"
    k = 50

    [principal]
    eps = 1.0
    z = [0.5]

    [mc]
    dt = 1e-4
    n_paths = 100000
    seed = 1

    [rarefaction]
    density = "lebesgue"
    mode = "poisson"
    eps = 0.7
    reps = 1000
"""

from __future__ import annotations

import math
import sys
from dataclasses import dataclass, field
from pathlib import Path

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from . import exprdsl
from .exprdsl import ExprError
from .model import Ball, Box, DiffusionModel, Domain, ModelError
from .rarefaction import MODES, NORMALIZATIONS, SeedMeasure


class ConfigError(ValueError):
    pass


_SECTIONS = {
    "model": {"dim", "drift", "diffusion", "T"},
    "domain": {"shape", "lo", "hi", "radius"},
    "solver": {"method", "grid", "k", "group_tol", "panels", "time_reversed"},
    "principal": {"eps", "z", "N", "sweep"},
    "mc": {"dt", "n_paths", "seed", "exit_correction", "batch_size"},
    "rarefaction": {"density", "mode", "normalization", "sampling", "reps", "eps", "dt",
                    "seed", "cap"},
    "validate": {"samples"},
}


@dataclass(frozen=True)
class SolverConfig:
    method: str = "analytic"
    grid: int = 64
    k: int = 50
    group_tol: float | None = None
    panels: int = 256
    time_reversed: bool = False


@dataclass(frozen=True)
class PrincipalConfig:
    eps: float = 1.0
    z: tuple[float, ...] = ()
    N: int = 25
    sweep: tuple[float, ...] = ()


@dataclass(frozen=True)
class MCConfig:
    dt: float = 1e-4
    n_paths: int = 100_000
    seed: int = 1
    exit_correction: str = "bridge"
    batch_size: int = 1 << 20


@dataclass(frozen=True)
class RarefactionConfig:
    measure: SeedMeasure = field(default_factory=SeedMeasure)
    reps: int = 1000
    eps: float = 0.7
    dt: float = 1e-4
    seed: int = 1


@dataclass(frozen=True)
class Config:
    model: DiffusionModel
    domain: Domain
    solver: SolverConfig
    principal: PrincipalConfig
    mc: MCConfig
    rarefaction: RarefactionConfig
    validate_samples: int = 17
    source: str = ""


def _get(table, key, kind, default=None, *, section):
    if key not in table:
        if default is None:
            raise ConfigError(f"[{section}] missing required key {key!r}")
        return default
    val = table[key]
    if kind is float:
        if isinstance(val, bool) or not isinstance(val, (int, float)):
            raise ConfigError(f"[{section}] {key} must be a number")
        val = float(val)
        if not math.isfinite(val):
            raise ConfigError(f"[{section}] {key} must be finite")
        return val
    if kind is int:
        if isinstance(val, bool) or not isinstance(val, int):
            raise ConfigError(f"[{section}] {key} must be an integer")
        return val
    if not isinstance(val, kind):
        raise ConfigError(f"[{section}] {key} has the wrong type")
    return val


def _floats(table, key, section, default=None) -> tuple[float, ...]:
    vals = _get(table, key, list, default, section=section)
    try:
        out = tuple(float(v) for v in vals)
    except (TypeError, ValueError):
        raise ConfigError(f"[{section}] {key} must be a list of numbers") from None
    if not all(map(math.isfinite, out)):
        raise ConfigError(f"[{section}] {key} must be finite")
    return out


def _positive(v, name):
    if not v > 0:
        raise ConfigError(f"{name} must be positive")
    return v


def from_dict(raw: dict, source: str = "") -> Config:
    for name, table in raw.items():
        if name not in _SECTIONS:
            raise ConfigError(f"unknown section [{name}]")
        if not isinstance(table, dict):
            raise ConfigError(f"[{name}] must be a table")
        extra = set(table) - _SECTIONS[name]
        if extra:
            raise ConfigError(f"[{name}] unknown keys: {', '.join(sorted(extra))}")
    if "model" not in raw or "domain" not in raw:
        raise ConfigError("config needs [model] and [domain] sections")

    mt = raw["model"]
    dim = _get(mt, "dim", int, section="model")
    if dim < 1:
        raise ConfigError("[model] dim must be positive")
    drift = _get(mt, "drift", list, section="model")
    diff = _get(mt, "diffusion", list, section="model")
    T = _positive(_get(mt, "T", float, section="model"), "[model] T")
    try:
        if not all(isinstance(s, str) for s in drift):
            raise ConfigError("[model] drift must be a list of strings")
        if not all(isinstance(c, list) and all(isinstance(s, str) for s in c) for c in diff):
            raise ConfigError("[model] diffusion must be a list of string lists")
        drift_e = tuple(exprdsl.parse(s, dim) for s in drift)
        diff_e = tuple(tuple(exprdsl.parse(s, dim) for s in c) for c in diff)
        model = DiffusionModel(dim, drift_e, diff_e, T)
    except (ExprError, ModelError) as exc:
        raise ConfigError(f"[model] {exc}") from exc

    dt_ = raw["domain"]
    shape = _get(dt_, "shape", str, "box", section="domain")
    try:
        if shape == "box":
            domain = Box(_floats(dt_, "lo", "domain"), _floats(dt_, "hi", "domain"))
        elif shape == "ball":
            domain = Ball(_get(dt_, "radius", float, section="domain"), dim)
        else:
            raise ConfigError(f"[domain] shape must be 'box' or 'ball', got {shape!r}")
    except ModelError as exc:
        raise ConfigError(f"[domain] {exc}") from exc
    if domain.dim != dim:
        raise ConfigError(f"[domain] dimension {domain.dim} != model dimension {dim}")

    st = raw.get("solver", {})
    group_tol = st.get("group_tol")
    solver = SolverConfig(
        method=_get(st, "method", str, "analytic", section="solver"),
        grid=_get(st, "grid", int, 64, section="solver"),
        k=_get(st, "k", int, 50, section="solver"),
        group_tol=None if group_tol is None else _get(st, "group_tol", float, section="solver"),
        panels=_get(st, "panels", int, 256, section="solver"),
        time_reversed=_get(st, "time_reversed", bool, False, section="solver"),
    )
    if solver.method not in ("analytic", "fd"):
        raise ConfigError("[solver] method must be 'analytic' or 'fd'")
    if solver.k < 1 or solver.grid < 8 or solver.panels < 2 or solver.panels % 2:
        raise ConfigError("[solver] needs k >= 1, grid >= 8 and an even panels >= 2")

    pt = raw.get("principal", {})
    default_z = _default_point(domain)
    principal = PrincipalConfig(
        eps=_positive(_get(pt, "eps", float, 1.0, section="principal"), "[principal] eps"),
        z=_floats(pt, "z", "principal", list(default_z)),
        N=_get(pt, "N", int, 25, section="principal"),
        sweep=_floats(pt, "sweep", "principal", []),
    )
    if len(principal.z) != dim:
        raise ConfigError(f"[principal] z must have {dim} coordinates")
    if not domain.contains([principal.z])[0]:
        raise ConfigError("[principal] z must lie inside D")
    if principal.N < 1 or any(e <= 0 for e in principal.sweep):
        raise ConfigError("[principal] N must be >= 1 and sweep values positive")

    ct = raw.get("mc", {})
    mcc = MCConfig(
        dt=_positive(_get(ct, "dt", float, 1e-4, section="mc"), "[mc] dt"),
        n_paths=_get(ct, "n_paths", int, 100_000, section="mc"),
        seed=_get(ct, "seed", int, 1, section="mc"),
        exit_correction=_get(ct, "exit_correction", str, "bridge", section="mc"),
        batch_size=_get(ct, "batch_size", int, 1 << 20, section="mc"),
    )
    if mcc.n_paths < 100 or mcc.batch_size < 1:
        raise ConfigError("[mc] n_paths must be >= 100")
    if mcc.exit_correction not in ("bridge", "none"):
        raise ConfigError("[mc] exit_correction must be 'bridge' or 'none'")
    if mcc.dt > T:
        raise ConfigError("[mc] dt must not exceed T")

    rt = raw.get("rarefaction", {})
    mode = _get(rt, "mode", str, "poisson", section="rarefaction")
    norm = _get(rt, "normalization", str, "consistent", section="rarefaction")
    if mode not in MODES or norm not in NORMALIZATIONS:
        raise ConfigError(f"[rarefaction] mode in {MODES}, normalization in {NORMALIZATIONS}")
    try:
        measure = SeedMeasure.from_text(
            _get(rt, "density", str, "lebesgue", section="rarefaction"), dim,
            mode=mode, normalization=norm,
            sampling=_get(rt, "sampling", str, "iid", section="rarefaction"),
            cap=_get(rt, "cap", int, 50_000_000, section="rarefaction"),
        )
    except (ExprError, ValueError) as exc:
        raise ConfigError(f"[rarefaction] {exc}") from exc
    rare = RarefactionConfig(
        measure=measure,
        reps=_get(rt, "reps", int, 1000, section="rarefaction"),
        eps=_positive(_get(rt, "eps", float, 0.7, section="rarefaction"), "[rarefaction] eps"),
        dt=_positive(_get(rt, "dt", float, 1e-4, section="rarefaction"), "[rarefaction] dt"),
        seed=_get(rt, "seed", int, 1, section="rarefaction"),
    )
    if rare.reps < 100:
        raise ConfigError("[rarefaction] reps must be >= 100")

    samples = _get(raw.get("validate", {}), "samples", int, 17, section="validate")
    if samples < 1:
        raise ConfigError("[validate] samples must be >= 1")
    return Config(model, domain, solver, principal, mcc, rare, samples, source)


def _default_point(dom: Domain) -> tuple[float, ...]:
    if isinstance(dom, Box):
        return tuple(0.5 * (a + b) for a, b in zip(dom.lo, dom.hi))
    return (0.0,) * dom.dim


def load(path) -> Config:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from exc
    except UnicodeDecodeError as exc:
        raise ConfigError(f"{path} is not UTF-8: {exc}") from exc
    try:
        raw = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    return from_dict(raw, text)
