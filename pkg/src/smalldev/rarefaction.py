"""Survivor counts of many absorbed diffusions started in εD.

Particles are seeded from a measure ν on D, scaled by ε, with the count
normalised by g(ε).  The number still inside εD at time T is compared with
Poisson(a(T)), a(T) = exp(∫_0^T μ) ∫_D F dν and F = Σ_m c_1m f_1m.

Normalisation modes:

``consistent`` (default)
    g(ε) = exp(-λ1 T / ε²), the decay rate of the single-particle survival
    probability; the expected survivor count tends to a(T).
``paper``
    g(ε) = exp(-λ1 T / (2 ε²)), the half-rate variant.  With it the expected
    survivor count goes to 0 as ε -> 0.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import stats
from scipy.stats import qmc

from . import exprdsl
from .asymptotics import mu_integral
from .exprdsl import Expr
from .mc import simulate_paths
from .model import Ball, Box, DiffusionModel, Domain, ModelError, lattice, scale_domain
from .spectral import EigenSystem, domain_quadrature, first_level

NORMALIZATIONS = ("consistent", "paper")
MODES = ("deterministic", "poisson")
DEFAULT_CAP = 50_000_000


class SeedingError(ValueError):
    pass


@dataclass(frozen=True)
class SeedMeasure:
    """ν on D (density in x1..xd, ``None`` for Lebesgue) and the seeding rule."""

    mode: str = "poisson"
    density: Expr | None = None
    normalization: str = "consistent"
    sampling: str = "iid"
    cap: int = DEFAULT_CAP

    def __post_init__(self):
        if self.mode not in MODES:
            raise SeedingError(f"mode must be one of {MODES}")
        if self.normalization not in NORMALIZATIONS:
            raise SeedingError(f"normalization must be one of {NORMALIZATIONS}")
        if self.sampling not in ("iid", "stratified"):
            raise SeedingError("sampling must be 'iid' or 'stratified'")
        if self.density is not None and "t" in exprdsl.variables(self.density):
            raise SeedingError("the seed density cannot depend on t")

    @classmethod
    def from_text(cls, density: str, dim: int, **kw) -> "SeedMeasure":
        dens = None if density.strip().lower() == "lebesgue" else exprdsl.parse(density, dim)
        return cls(density=dens, **kw)

    def density_at(self, z) -> np.ndarray:
        z = np.atleast_2d(z)
        if self.density is None:
            return np.ones(len(z))
        return exprdsl.vectorized(self.density)(0.0, z)

    def total(self, dom: Domain) -> float:
        """ν(D)."""
        if self.density is None:
            return dom.volume
        pts, w = domain_quadrature(dom)
        vals = self.density_at(pts)
        _check_density(vals)
        return float(w @ vals)


def _check_density(vals):
    if not np.all(np.isfinite(vals)):
        raise SeedingError("seed density is not finite on D")
    if np.any(vals < 0):
        raise SeedingError("seed density is negative somewhere on D")


def g_factor(eps: float, T: float, lam1: float, normalization: str = "consistent") -> float:
    if normalization == "consistent":
        return math.exp(-lam1 * T / eps**2)
    if normalization == "paper":
        return math.exp(-lam1 * T / (2 * eps**2))
    raise SeedingError(f"normalization must be one of {NORMALIZATIONS}")


def a_of_T(eig: EigenSystem, m: DiffusionModel, sm: SeedMeasure, T: float | None = None) -> float:
    """Poisson parameter exp(∫_0^T μ) ∫_D F dν."""
    T = m.horizon if T is None else T
    _lam1, idx, c1 = first_level(eig)
    pts, w = eig.quadrature()
    F = eig.values(pts, idx) @ c1
    dens = sm.density_at(pts)
    _check_density(dens)
    return float(math.exp(mu_integral(m, T)) * (w @ (F * dens)))


def _rng(seed: int, rep: int, tag: int) -> np.random.Generator:
    return np.random.default_rng([int(seed), int(rep), tag])


def _uniform_in(dom: Domain, u: np.ndarray) -> np.ndarray:
    """Map points of the unit cube (d + 1 columns for the ball) into ``dom``."""
    if isinstance(dom, Box):
        return np.asarray(dom.lo) + u[:, : dom.dim] * dom.lengths
    d = dom.dim
    if d == 1:
        return (2 * u[:, :1] - 1) * dom.radius
    if d == 2:
        r = dom.radius * np.sqrt(u[:, 0])
        th = 2 * np.pi * u[:, 1]
        return np.column_stack([r * np.cos(th), r * np.sin(th)])
    g = stats.norm.ppf(np.clip(u[:, 1:d + 1], 1e-16, 1 - 1e-16))
    g = g / np.linalg.norm(g, axis=1, keepdims=True)
    return g * (dom.radius * u[:, :1] ** (1.0 / d))


def _unit_draws(sm: SeedMeasure, gen: np.random.Generator, n: int, d: int) -> np.ndarray:
    if sm.sampling == "stratified":
        sob = qmc.Sobol(d, scramble=True, seed=gen)
        with warnings.catch_warnings():
            # counts are Poisson, so n is rarely a power of two
            warnings.simplefilter("ignore", UserWarning)
            return sob.random(n)
    return gen.random((n, d))


def sample_nu(sm: SeedMeasure, dom: Domain, n: int, gen: np.random.Generator) -> np.ndarray:
    """``n`` points of D drawn from ν/ν(D)."""
    cols = dom.dim + (isinstance(dom, Ball) and dom.dim > 2)
    if n == 0:
        return np.zeros((0, dom.dim))
    if sm.density is None:
        return _uniform_in(dom, _unit_draws(sm, gen, n, cols))
    grid_vals = sm.density_at(lattice(dom, 33))
    _check_density(grid_vals)
    bound = 1.25 * float(np.max(grid_vals))
    if not bound > 0:
        raise SeedingError("seed density vanishes on D")
    out = []
    have = 0
    while have < n:
        batch = max(2 * (n - have), 64)
        u = _unit_draws(sm, gen, batch, cols + 1)
        z = _uniform_in(dom, u[:, :cols])
        f = sm.density_at(z)
        if np.any(f > bound):
            raise SeedingError("seed density exceeds its sampled bound; refine the density")
        ok = u[:, cols] * bound < f
        out.append(z[ok])
        have += int(ok.sum())
    return np.concatenate(out)[:n]


def seed_points(sm: SeedMeasure, dom: Domain, eps: float, T: float, lam1: float, seed: int,
                rep: int = 0, total: float | None = None) -> np.ndarray:
    """Start points in εD for replication ``rep``.

    ``total`` is ν(D) when already known.
    """
    if not eps > 0:
        raise ModelError("eps must be positive")
    total = sm.total(dom) if total is None else total
    mean = total / g_factor(eps, T, lam1, sm.normalization)
    if not math.isfinite(mean) or mean > sm.cap:
        raise SeedingError(f"expected seed count {mean:.3g} exceeds the cap {sm.cap}")
    gen = _rng(seed, rep, 0x5EED)
    n = int(round(mean)) if sm.mode == "deterministic" else int(gen.poisson(mean))
    if n > sm.cap:
        raise SeedingError(f"seed count {n} exceeds the cap {sm.cap}")
    return eps * sample_nu(sm, dom, n, gen)


def tv_to_poisson(counts, lam: float) -> float:
    """Total variation between the empirical law of ``counts`` and Poisson(lam).

    Summed over 0..max(max count, 0.9999 quantile); mass beyond is added.
    """
    counts = np.asarray(counts, dtype=np.int64)
    hi = int(max(counts.max(initial=0), stats.poisson.ppf(0.9999, lam) if lam > 0 else 0))
    ks = np.arange(hi + 1)
    emp = np.bincount(counts, minlength=hi + 1)[: hi + 1] / len(counts)
    pmf = stats.poisson.pmf(ks, lam) if lam > 0 else (ks == 0).astype(float)
    outside = max(0.0, 1.0 - float(pmf.sum()))
    return float(min(1.0, 0.5 * (np.abs(emp - pmf).sum() + outside)))


@dataclass
class RarefactionRun:
    reps: int
    counts: np.ndarray
    seeded: np.ndarray
    a_T: float
    mean: float
    variance: float
    tv: float
    tv_empirical: float
    g: float
    eps: float
    T: float
    mode: str
    normalization: str
    extras: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "a_T": self.a_T,
            "mean": self.mean,
            "variance": self.variance,
            "tv": self.tv,
            "tv_empirical_mean": self.tv_empirical,
            "reps": self.reps,
            "eps": self.eps,
            "T": self.T,
            "g": self.g,
            "mode": self.mode,
            "normalization": self.normalization,
            "mean_seeded": float(np.mean(self.seeded)),
        }

    def histogram(self):
        """Rows ``(k, observed frequency, Poisson(a_T) pmf)``."""
        kmax = int(self.counts.max(initial=0))
        freq = np.bincount(self.counts, minlength=kmax + 1) / self.reps
        pmf = stats.poisson.pmf(np.arange(kmax + 1), self.a_T)
        return [(k, float(freq[k]), float(pmf[k])) for k in range(kmax + 1)]


def run(sm: SeedMeasure, m: DiffusionModel, dom: Domain, eig: EigenSystem, eps: float,
        T: float | None, dt: float, reps: int, seed: int, exit_correction: str = "bridge",
        backend: str | None = None, batch_particles: int = 1 << 20) -> RarefactionRun:
    """Seed, simulate and count survivors for ``reps`` independent replications."""
    if reps < 100:
        raise ValueError("reps must be >= 100")
    T = m.horizon if T is None else float(T)
    lam1 = first_level(eig)[0]
    a_T = a_of_T(eig, m, sm, T)
    de = scale_domain(dom, eps)
    counts = np.zeros(reps, dtype=np.int64)
    seeded = np.zeros(reps, dtype=np.int64)
    pending_x, pending_s, pending_r = [], [], []
    pending = 0

    def flush():
        nonlocal pending
        if not pending_x:
            return
        x = np.concatenate(pending_x)
        s = np.concatenate(pending_s)
        r = np.concatenate(pending_r)
        alive = simulate_paths(m, de, x, s, T, dt, seed, exit_correction, backend)
        np.add.at(counts, r[alive], 1)
        pending_x.clear()
        pending_s.clear()
        pending_r.clear()
        pending = 0

    total = sm.total(dom)
    for rep in range(reps):
        pts = seed_points(sm, dom, eps, T, lam1, seed, rep, total)
        n = len(pts)
        seeded[rep] = n
        if n == 0:
            continue
        pending_x.append(pts)
        pending_s.append((np.uint64(rep) << np.uint64(32)) | np.arange(n, dtype=np.uint64))
        pending_r.append(np.full(n, rep, dtype=np.int64))
        pending += n
        if pending >= batch_particles:
            flush()
    flush()
    mean = float(counts.mean())
    var = float(counts.var(ddof=1))
    return RarefactionRun(
        reps=reps,
        counts=counts,
        seeded=seeded,
        a_T=a_T,
        mean=mean,
        variance=var,
        tv=tv_to_poisson(counts, a_T),
        tv_empirical=tv_to_poisson(counts, mean),
        g=g_factor(eps, T, lam1, sm.normalization),
        eps=float(eps),
        T=T,
        mode=sm.mode,
        normalization=sm.normalization,
    )
