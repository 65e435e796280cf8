"""Diffusion model dξ = a(t, ξ) dt + Σ_k b_k(ξ) dw_k and the domain D."""

from __future__ import annotations

import itertools
import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from . import exprdsl
from .exprdsl import Expr


class ModelError(ValueError):
    """Invalid model or domain definition."""


class EllipticityError(ModelError):
    pass


# ---------------------------------------------------------------- domains

@dataclass(frozen=True)
class Box:
    lo: tuple[float, ...]
    hi: tuple[float, ...]

    def __post_init__(self):
        lo = tuple(float(v) for v in np.atleast_1d(self.lo))
        hi = tuple(float(v) for v in np.atleast_1d(self.hi))
        if len(lo) != len(hi) or not lo:
            raise ModelError("box bounds must be non-empty and of equal length")
        if any(not (a < b) for a, b in zip(lo, hi)):
            raise ModelError(f"box needs lo < hi on every axis, got {lo}, {hi}")
        if not all(map(math.isfinite, lo + hi)):
            raise ModelError("box bounds must be finite")
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)

    @property
    def dim(self) -> int:
        return len(self.lo)

    @property
    def lengths(self) -> np.ndarray:
        return np.asarray(self.hi) - np.asarray(self.lo)

    @property
    def volume(self) -> float:
        return float(np.prod(self.lengths))

    def contains_origin(self) -> bool:
        return all(a < 0.0 < b for a, b in zip(self.lo, self.hi))

    def contains(self, points) -> np.ndarray:
        """Open-set membership for points of shape ``(n, d)``."""
        p = np.atleast_2d(np.asarray(points, dtype=float))
        return np.all((p > np.asarray(self.lo)) & (p < np.asarray(self.hi)), axis=1)

    def scaled(self, eps: float) -> "Box":
        return Box(tuple(v * eps for v in self.lo), tuple(v * eps for v in self.hi))

    def to_dict(self) -> dict:
        return {"shape": "box", "lo": list(self.lo), "hi": list(self.hi)}


@dataclass(frozen=True)
class Ball:
    radius: float
    dim: int = 2

    def __post_init__(self):
        if not (self.radius > 0 and math.isfinite(self.radius)):
            raise ModelError(f"ball radius must be positive, got {self.radius}")
        if int(self.dim) < 1:
            raise ModelError("ball dimension must be >= 1")
        object.__setattr__(self, "radius", float(self.radius))
        object.__setattr__(self, "dim", int(self.dim))

    @property
    def volume(self) -> float:
        d = self.dim
        return math.pi ** (d / 2) / math.gamma(d / 2 + 1) * self.radius**d

    def contains_origin(self) -> bool:
        return True

    def contains(self, points) -> np.ndarray:
        p = np.atleast_2d(np.asarray(points, dtype=float))
        return np.sum(p * p, axis=1) < self.radius**2

    def scaled(self, eps: float) -> "Ball":
        return Ball(self.radius * eps, self.dim)

    def to_dict(self) -> dict:
        return {"shape": "ball", "radius": self.radius, "dim": self.dim}


Domain = Box | Ball


def scale_domain(dom: Domain, eps: float) -> Domain:
    """The domain εD."""
    if not eps > 0:
        raise ModelError(f"eps must be positive, got {eps}")
    return dom.scaled(eps)


def lattice(dom: Domain, n: int) -> np.ndarray:
    """``n`` points per axis on the closure of ``dom`` (clipped to the ball)."""
    if isinstance(dom, Box):
        axes = [np.linspace(a, b, n) for a, b in zip(dom.lo, dom.hi)]
    else:
        axes = [np.linspace(-dom.radius, dom.radius, n)] * dom.dim
    pts = np.array(list(itertools.product(*axes)), dtype=float).reshape(-1, len(axes))
    if isinstance(dom, Ball):
        pts = pts[np.sum(pts**2, axis=1) <= dom.radius**2 * (1 + 1e-12)]
    return pts


# ------------------------------------------------------------------ model

def _as_exprs(items, dim) -> tuple[Expr, ...]:
    return tuple(exprdsl.parse(s, dim) if isinstance(s, str) else s for s in items)


@dataclass(frozen=True)
class DiffusionModel:
    """Drift ``a(t, x)``, diffusion columns ``b_k(x)`` and horizon ``T``.

    ``diffusion[k][i]`` is component ``i`` of column ``b_k``; the matrix
    ``B(x)`` has these vectors as its columns.
    """

    dim: int
    drift: tuple[Expr, ...]
    diffusion: tuple[tuple[Expr, ...], ...]
    horizon: float = 1.0

    def __post_init__(self):
        d = int(self.dim)
        if d < 1:
            raise ModelError("dimension must be positive")
        drift = _as_exprs(self.drift, d)
        cols = tuple(_as_exprs(c, d) for c in self.diffusion)
        if len(drift) != d:
            raise ModelError(f"drift needs {d} components, got {len(drift)}")
        if len(cols) != d or any(len(c) != d for c in cols):
            raise ModelError(f"diffusion needs {d} columns of {d} components")
        for e in drift + sum(cols, ()):
            if exprdsl.max_index(e) > d:
                raise ModelError(f"{e} uses a variable beyond dimension {d}")
        for c in cols:
            for e in c:
                if "t" in exprdsl.variables(e):
                    raise ModelError(f"diffusion coefficient {e} depends on t")
        if not (self.horizon > 0 and math.isfinite(self.horizon)):
            raise ModelError("horizon T must be positive")
        object.__setattr__(self, "dim", d)
        object.__setattr__(self, "drift", drift)
        object.__setattr__(self, "diffusion", cols)
        object.__setattr__(self, "horizon", float(self.horizon))

    @classmethod
    def from_strings(cls, drift, diffusion, horizon=1.0):
        return cls(len(drift), tuple(drift), tuple(tuple(c) for c in diffusion), horizon)

    def drift_at(self, t: float, x) -> np.ndarray:
        return np.array([exprdsl.evaluate(e, t, x) for e in self.drift])

    def b_matrix(self, x) -> np.ndarray:
        d = self.dim
        B = np.empty((d, d))
        for k, col in enumerate(self.diffusion):
            for i, e in enumerate(col):
                B[i, k] = exprdsl.evaluate(e, 0.0, x)
        return B

    def drift_is_constant_in_x(self) -> bool:
        return all(exprdsl.max_index(e) == 0 for e in self.drift)

    def to_dict(self) -> dict:
        return {
            "dim": self.dim,
            "drift": [str(e) for e in self.drift],
            "diffusion": [[str(e) for e in c] for c in self.diffusion],
            "T": self.horizon,
        }


def sigma_at(m: DiffusionModel, x) -> np.ndarray:
    """σ(x) = B(x) B(x)ᵀ, symmetric bit for bit."""
    x = np.asarray(x, dtype=float)
    B = m.b_matrix(x)
    d = m.dim
    s = np.empty((d, d))
    for i in range(d):
        for j in range(i, d):
            v = math.fsum(B[i, k] * B[j, k] for k in range(d))
            s[i, j] = s[j, i] = v
    return s


def sigma0(m: DiffusionModel) -> np.ndarray:
    return sigma_at(m, np.zeros(m.dim))


@dataclass
class ValidationReport:
    mu_ell: float
    sigma0: np.ndarray
    drift_jacobian_sup: np.ndarray      # sup |∂a_i/∂z_j|
    diffusion_jacobian_sup: np.ndarray  # sup |∂b_k^i/∂z_j|, indexed [k, i, j]
    drift_time_sup: np.ndarray          # sup |∂a_i(T-t, z)/∂t|
    samples: int
    elliptic: bool
    derivatives_bounded: bool
    contains_origin: bool
    warnings: list[str] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return self.elliptic and self.derivatives_bounded

    def to_dict(self) -> dict:
        return {
            "passed": self.passed,
            "mu_ell": self.mu_ell,
            "sigma0": self.sigma0.tolist(),
            "elliptic": self.elliptic,
            "derivatives_bounded": self.derivatives_bounded,
            "contains_origin": self.contains_origin,
            "samples": self.samples,
            "drift_jacobian_sup": self.drift_jacobian_sup.tolist(),
            "diffusion_jacobian_sup": self.diffusion_jacobian_sup.tolist(),
            "drift_time_sup": self.drift_time_sup.tolist(),
            "warnings": list(self.warnings),
        }


WARN_SUP = 1e6


def _sup(e: Expr, ts, pts) -> float:
    vals = exprdsl.vectorized(e)(ts, pts)
    if not np.all(np.isfinite(vals)):
        return math.inf
    return float(np.max(np.abs(vals), initial=0.0))


def validate(m: DiffusionModel, dom: Domain, samples: int = 17) -> ValidationReport:
    """Check ellipticity at 0 and sample derivative bounds over [0, T] x D.

    Raises :class:`EllipticityError` when λ_min(σ(0)) <= 0.
    """
    if samples < 1:
        raise ModelError("samples must be >= 1")
    if dom.dim != m.dim:
        raise ModelError(f"domain dimension {dom.dim} != model dimension {m.dim}")
    s0 = sigma0(m)
    mu_ell = float(np.linalg.eigvalsh(s0)[0])
    # roundoff level relative to the largest entry counts as degenerate
    tiny = 64 * np.finfo(float).eps * max(1.0, float(np.max(np.abs(s0))))
    if not mu_ell > tiny:
        raise EllipticityError(
            f"sigma(0) is not positive definite: min eigenvalue {mu_ell:.3g}"
        )
    d = m.dim
    space = lattice(dom, samples)
    times = np.linspace(0.0, m.horizon, samples)
    ts = np.repeat(times, len(space))
    pts = np.tile(space, (len(times), 1))
    names = [f"x{j + 1}" for j in range(d)]

    drift_jac = np.array(
        [[_sup(exprdsl.partial(a, v), ts, pts) for v in names] for a in m.drift]
    )
    diff_jac = np.array(
        [[[_sup(exprdsl.partial(b, v), ts, pts) for v in names] for b in col]
         for col in m.diffusion]
    )
    # ∂/∂t of a(T - t, z) is -(∂_t a)(T - t, z); sup over t in [0, T] is the same set
    drift_t = np.array([_sup(exprdsl.partial(a, "t"), ts, pts) for a in m.drift])

    notes = []
    allsup = np.concatenate([drift_jac.ravel(), diff_jac.ravel(), drift_t.ravel()])
    bounded = bool(np.all(np.isfinite(allsup)))
    if not bounded:
        notes.append("non-finite derivative on the sampling lattice")
    elif np.max(allsup, initial=0.0) > WARN_SUP:
        notes.append(f"sampled derivative sup {np.max(allsup):.3g} exceeds {WARN_SUP:g}")
    origin = dom.contains_origin()
    if not origin:
        notes.append("0 is not an interior point of D; coefficients are frozen at x = 0")
    for n in notes:
        warnings.warn(n, stacklevel=2)
    return ValidationReport(
        mu_ell=mu_ell,
        sigma0=s0,
        drift_jacobian_sup=drift_jac,
        diffusion_jacobian_sup=diff_jac,
        drift_time_sup=drift_t,
        samples=samples,
        elliptic=True,
        derivatives_bounded=bounded,
        contains_origin=origin,
        warnings=notes,
    )
