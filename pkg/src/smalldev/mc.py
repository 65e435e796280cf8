"""Euler-Maruyama simulation of the diffusion with absorption on ∂(εD).

The hot loop exists twice: a numba kernel (one thread per block of paths)
and a vectorised numpy version used when numba is disabled.  Both draw the
same counter-based noise, so a path's fate depends only on
``(seed, path index)``.

Absorption is checked on the discrete states.  With
``exit_correction="bridge"`` (the default) each step that stays inside is
additionally killed with the probability that the Brownian bridge between
the two states crossed the boundary.  For a face at distance d0, d1 from
the two states this is exp(-2 d0 d1 / (v h)), with v the local variance in
the face normal direction; faces are treated independently and the disk
uses its tangent plane.  Without the bridge term survival is biased upward
by roughly the factor of moving the walls out by 0.5826 sqrt(v h).
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from statistics import NormalDist

import numpy as np

from . import exprdsl, rng
from ._accel import configure_threads, njit, numba_enabled, prange
from .model import Ball, Box, DiffusionModel, Domain, ModelError, scale_domain

Z95 = NormalDist().inv_cdf(0.975)
EXIT_CORRECTIONS = ("bridge", "none")
_SKIP_EXPONENT = 45.0  # exp(-45) ~ 3e-20; bridge kill below this is skipped

_SHAPE_BOX = 0
_SHAPE_BALL = 1


class SimulationError(RuntimeError):
    """Model coefficients produced a non-finite state."""


@dataclass(frozen=True)
class SurvivalEstimate:
    p_hat: float
    n_paths: int
    survivors: int
    ci_low: float
    ci_high: float
    dt: float
    eps: float
    x0: tuple[float, ...]
    T: float
    seed: int
    exit_correction: str

    def to_dict(self) -> dict:
        d = asdict(self)
        d["x0"] = list(self.x0)
        return d


@dataclass(frozen=True)
class ComparisonRow:
    eps: float
    asym: float
    p_hat: float
    ci_low: float
    ci_high: float
    ratio: float
    ratio_low: float
    ratio_high: float
    deviation: float

    FIELDS = ("eps", "asym", "p_hat", "ci_low", "ci_high", "ratio")


def wilson_interval(successes: int, trials: int, z: float = Z95) -> tuple[float, float]:
    if trials <= 0:
        return 0.0, 1.0
    p = successes / trials
    denom = 1.0 + z * z / trials
    center = (p + z * z / (2 * trials)) / denom
    half = z / denom * math.sqrt(p * (1 - p) / trials + z * z / (4 * trials * trials))
    lo = 0.0 if successes == 0 else max(0.0, min(p, center - half))
    hi = 1.0 if successes == trials else min(1.0, max(p, center + half))
    return lo, hi


# ------------------------------------------------------ model compilation

def _drift_source(m: DiffusionModel) -> str:
    body = "\n".join(f"    out[{i}] = {exprdsl.to_source(e)}" for i, e in enumerate(m.drift))
    return f"def drift(t, x, out):\n{body}\n"


def _bmat_source(m: DiffusionModel) -> str:
    lines = []
    for k, col in enumerate(m.diffusion):
        for i, e in enumerate(col):
            lines.append(f"    out[{i}, {k}] = {exprdsl.to_source(e)}")
    return "def bmat(x, out):\n" + "\n".join(lines) + "\n"


_KERNELS: dict[tuple, object] = {}


def _model_key(m: DiffusionModel) -> tuple:
    return (m.dim, tuple(map(str, m.drift)), tuple(tuple(map(str, c)) for c in m.diffusion))


def _numba_kernel(m: DiffusionModel):
    key = _model_key(m)
    if key not in _KERNELS:
        ns = {"np": np}
        exec(_drift_source(m) + _bmat_source(m), ns)
        drift = njit(inline="always", error_model="numpy")(ns["drift"])
        bmat = njit(inline="always", error_model="numpy")(ns["bmat"])
        _KERNELS[key] = _make_kernel(drift, bmat, m.dim)
    return _KERNELS[key]


def _make_kernel(drift, bmat, d):
    uniform_pair = rng.uniform_pair_jit
    ndtri = rng.ndtri_jit
    P_NORMAL = rng.PURPOSE_NORMAL
    P_BRIDGE = rng.PURPOSE_BRIDGE
    SKIP = _SKIP_EXPONENT

    @njit(parallel=True, error_model="numpy")
    def kernel(x0s, streams, n_full, h_last, dt, shape, lo, hi, radius, k0, k1, bridge,
               alive_out, bad_out):
        n = streams.shape[0]
        single = x0s.shape[0] == 1
        n_steps = n_full + (1 if h_last > 0.0 else 0)
        sq_dt = np.sqrt(dt)
        sq_last = np.sqrt(h_last)
        for p in prange(n):
            x = x0s[0].copy() if single else x0s[p].copy()
            xn = np.empty(d)
            a = np.empty(d)
            B = np.empty((d, d))
            z = np.empty(d)
            stream = streams[p]
            cur = np.uint64(0xFFFFFFFFFFFFFFFF)
            g0 = 0.0
            g1 = 0.0
            t = 0.0
            alive = True
            bad = False
            for s in range(n_steps):
                h = dt if s < n_full else h_last
                sq = sq_dt if s < n_full else sq_last
                drift(t, x, a)
                bmat(x, B)
                for i in range(d):
                    idx = np.uint64(s) * np.uint64(d) + np.uint64(i)
                    blk = idx >> np.uint64(1)
                    if blk != cur:
                        # both normals of a block at once; the two chains overlap
                        u0, u1 = uniform_pair(blk, P_NORMAL, stream, k0, k1)
                        g0 = ndtri(u0)
                        g1 = ndtri(u1)
                        cur = blk
                    z[i] = g0 if (idx & np.uint64(1)) == 0 else g1
                for i in range(d):
                    acc = x[i] + a[i] * h
                    for k in range(d):
                        acc += B[i, k] * z[k] * sq
                    xn[i] = acc
                    if not np.isfinite(acc):
                        bad = True
                if bad:
                    alive = False
                    break
                if shape == 0:
                    inside = True
                    for i in range(d):
                        if not (lo[i] < xn[i] < hi[i]):
                            inside = False
                else:
                    r2 = 0.0
                    for i in range(d):
                        r2 += xn[i] * xn[i]
                    inside = r2 < radius * radius
                if not inside:
                    alive = False
                    break
                if bridge:
                    keep = 1.0
                    if shape == 0:
                        for i in range(d):
                            v = 0.0
                            for k in range(d):
                                v += B[i, k] * B[i, k]
                            v *= h
                            if v > 0.0:
                                e_lo = 2.0 * (x[i] - lo[i]) * (xn[i] - lo[i]) / v
                                e_hi = 2.0 * (hi[i] - x[i]) * (hi[i] - xn[i]) / v
                                if e_lo < SKIP:
                                    keep *= 1.0 - np.exp(-e_lo)
                                if e_hi < SKIP:
                                    keep *= 1.0 - np.exp(-e_hi)
                    else:
                        r0 = 0.0
                        for i in range(d):
                            r0 += x[i] * x[i]
                        r0 = np.sqrt(r0)
                        if r0 > 0.0:
                            # variance along the outward normal: |Bᵀ n|²
                            v = 0.0
                            for k in range(d):
                                proj = 0.0
                                for i in range(d):
                                    proj += B[i, k] * x[i] / r0
                                v += proj * proj
                            v *= h
                            if v > 0.0:
                                ex = 2.0 * (radius - r0) * (radius - np.sqrt(r2)) / v
                                if ex < SKIP:
                                    keep *= 1.0 - np.exp(-ex)
                    if keep < 1.0:
                        ub, _unused = uniform_pair(np.uint64(s), P_BRIDGE, stream, k0, k1)
                        if ub >= keep:
                            alive = False
                            break
                for i in range(d):
                    x[i] = xn[i]
                t += h
            alive_out[p] = alive
            bad_out[p] = bad

    return kernel


# --------------------------------------------------------- numpy backend

def _numpy_paths(m: DiffusionModel, x0s, streams, n_full, h_last, dt, dom, seed, bridge):
    d = m.dim
    n = len(streams)
    X = np.array(np.broadcast_to(x0s, (n, d)) if len(x0s) == 1 else x0s, dtype=float)
    alive = np.ones(n, dtype=bool)
    bad = np.zeros(n, dtype=bool)
    live = np.arange(n)
    drift = [exprdsl.vectorized(e) for e in m.drift]
    cols = [[exprdsl.vectorized(e) for e in col] for col in m.diffusion]
    n_steps = n_full + (1 if h_last > 0 else 0)
    t = 0.0
    for s in range(n_steps):
        if live.size == 0:
            break
        h = dt if s < n_full else h_last
        x = X[live]
        st = streams[live]
        A = np.column_stack([f(t, x) for f in drift])
        B = np.empty((len(live), d, d))
        for k in range(d):
            for i in range(d):
                B[:, i, k] = cols[k][i](t, x)
        Z = np.column_stack([rng.normals(np.uint64(s * d + i), st, seed) for i in range(d)])
        with np.errstate(all="ignore"):
            xn = x + A * h + np.einsum("nik,nk->ni", B, Z) * math.sqrt(h)
        ok = np.all(np.isfinite(xn), axis=1)
        bad[live[~ok]] = True
        inside = ok & dom.contains(np.where(ok[:, None], xn, 0.0))
        if bridge:
            with np.errstate(all="ignore"):
                keep = _bridge_keep(dom, x, xn, B, h)
            need = inside & (keep < 1.0)
            if np.any(need):
                ub, _ = rng.uniform_pairs(np.uint64(s), rng.PURPOSE_BRIDGE, st[need], seed)
                killed = np.zeros(len(live), dtype=bool)
                killed[np.flatnonzero(need)[ub >= keep[need]]] = True
                inside &= ~killed
        X[live] = xn
        alive[live[~inside]] = False
        live = live[inside]
        t += h
    return alive, bad


def _bridge_keep(dom, x, xn, B, h):
    keep = np.ones(len(x))
    if isinstance(dom, Box):
        v = np.einsum("nik,nik->ni", B, B) * h
        lo, hi = np.asarray(dom.lo), np.asarray(dom.hi)
        pos = v > 0
        vv = np.where(pos, v, 1.0)
        for e in (2 * (x - lo) * (xn - lo) / vv, 2 * (hi - x) * (hi - xn) / vv):
            use = pos & (e < _SKIP_EXPONENT)
            keep *= np.prod(np.where(use, 1.0 - np.exp(-np.where(use, e, 0.0)), 1.0), axis=1)
        return keep
    r0 = np.sqrt(np.sum(x * x, axis=1))
    r1 = np.sqrt(np.sum(xn * xn, axis=1))
    nrm = np.where(r0[:, None] > 0, x / np.where(r0 > 0, r0, 1.0)[:, None], 0.0)
    proj = np.einsum("nik,ni->nk", B, nrm)
    v = np.sum(proj * proj, axis=1) * h
    pos = (v > 0) & (r0 > 0)
    e = 2 * (dom.radius - r0) * (dom.radius - r1) / np.where(pos, v, 1.0)
    use = pos & (e < _SKIP_EXPONENT)
    keep = np.where(use, 1.0 - np.exp(-np.where(use, e, 0.0)), 1.0)
    return keep


# -------------------------------------------------------------- frontends

def _steps(T: float, dt: float) -> tuple[int, float]:
    if not dt > 0:
        raise ModelError("dt must be positive")
    if dt > T:
        raise ModelError("dt must not exceed T")
    ratio = T / dt
    n_full = int(round(ratio))
    if abs(ratio - n_full) <= 1e-9 * max(1.0, ratio):
        return n_full, 0.0
    n_full = int(math.floor(ratio))
    return n_full, T - n_full * dt


def _domain_arrays(dom: Domain):
    if isinstance(dom, Box):
        return _SHAPE_BOX, np.asarray(dom.lo, float), np.asarray(dom.hi, float), 0.0
    return _SHAPE_BALL, np.zeros(dom.dim), np.zeros(dom.dim), float(dom.radius)


def simulate_paths(m: DiffusionModel, dom_eps: Domain, x0s, streams, T: float, dt: float,
                   seed: int, exit_correction: str = "bridge", backend: str | None = None):
    """Survival flag per path for starts ``x0s`` (one row, or one per path).

    ``streams`` are the 64-bit stream ids selecting each path's noise.
    """
    if exit_correction not in EXIT_CORRECTIONS:
        raise ValueError(f"exit_correction must be one of {EXIT_CORRECTIONS}")
    x0s = np.atleast_2d(np.asarray(x0s, dtype=float))
    streams = np.ascontiguousarray(streams, dtype=np.uint64)
    if x0s.shape[1] != m.dim or dom_eps.dim != m.dim:
        raise ModelError("start points and domain must match the model dimension")
    if x0s.shape[0] not in (1, len(streams)):
        raise ValueError("need one start point or one per stream")
    n_full, h_last = _steps(T, dt)
    bridge = exit_correction == "bridge"
    backend = backend or ("numba" if numba_enabled() else "numpy")
    if len(streams) == 0:
        return np.zeros(0, dtype=bool)
    if backend == "numba":
        configure_threads()
        kernel = _numba_kernel(m)
        shape, lo, hi, radius = _domain_arrays(dom_eps)
        k0, k1 = rng.split_key(seed)
        alive = np.empty(len(streams), dtype=np.bool_)
        bad = np.empty(len(streams), dtype=np.bool_)
        kernel(x0s, streams, n_full, float(h_last), float(dt), shape, lo, hi, radius,
               k0, k1, bridge, alive, bad)
    elif backend == "numpy":
        alive, bad = _numpy_paths(m, x0s, streams, n_full, h_last, dt, dom_eps, seed, bridge)
    else:
        raise ValueError(f"unknown backend {backend!r}")
    if np.any(bad):
        raise SimulationError(
            f"{int(bad.sum())} paths reached a non-finite state; check the coefficients"
        )
    return alive


def step(m: DiffusionModel, t: float, x, dt: float, noise) -> np.ndarray:
    """One Euler-Maruyama step x + a(t, x) dt + B(x) noise sqrt(dt)."""
    if not dt > 0:
        raise ModelError("dt must be positive")
    x = np.asarray(x, dtype=float)
    return x + m.drift_at(t, x) * dt + m.b_matrix(x) @ np.asarray(noise, float) * math.sqrt(dt)


def survives(m: DiffusionModel, dom: Domain, eps: float, x0, T: float, dt: float,
             stream: int = 0, seed: int = 0, exit_correction: str = "bridge",
             backend: str | None = None) -> bool:
    """Whether the single path ``stream`` stays inside εD up to time T."""
    de = scale_domain(dom, eps)
    x0 = np.atleast_1d(np.asarray(x0, dtype=float))
    if not de.contains(x0[None, :])[0]:
        raise ModelError(f"x0 = {x0.tolist()} is not inside eps*D")
    return bool(simulate_paths(m, de, x0[None, :], np.array([stream], np.uint64), T, dt,
                               seed, exit_correction, backend)[0])


def estimate_survival(m: DiffusionModel, dom: Domain, eps: float, x0, T: float | None,
                      dt: float, n_paths: int, seed: int, exit_correction: str = "bridge",
                      backend: str | None = None, batch_size: int = 1 << 20) -> SurvivalEstimate:
    """Monte Carlo P(ξ stays in εD on [0, T] | ξ(0) = x0) with a Wilson 95% interval.

    Paths ``0..n_paths-1`` are simulated in batches; the count depends only on
    ``(seed, n_paths)``, never on batching or thread count.
    """
    if n_paths < 100:
        raise ValueError("n_paths must be >= 100")
    T = m.horizon if T is None else float(T)
    de = scale_domain(dom, eps)
    x0 = np.atleast_1d(np.asarray(x0, dtype=float))
    if not de.contains(x0[None, :])[0]:
        raise ModelError(f"x0 = {x0.tolist()} is not inside eps*D")
    survivors = 0
    for start in range(0, n_paths, batch_size):
        streams = np.arange(start, min(start + batch_size, n_paths), dtype=np.uint64)
        survivors += int(np.count_nonzero(
            simulate_paths(m, de, x0[None, :], streams, T, dt, seed, exit_correction, backend)
        ))
    lo, hi = wilson_interval(survivors, n_paths)
    return SurvivalEstimate(survivors / n_paths, n_paths, survivors, lo, hi, float(dt),
                            float(eps), tuple(x0.tolist()), T, int(seed), exit_correction)


def compare(asym, est: SurvivalEstimate) -> ComparisonRow:
    """Ratio of the Monte Carlo estimate to the asymptotic value."""
    a = float(asym.value)
    if not a > 0:
        raise ValueError("asymptotic value must be positive")
    return ComparisonRow(
        eps=est.eps,
        asym=a,
        p_hat=est.p_hat,
        ci_low=est.ci_low,
        ci_high=est.ci_high,
        ratio=est.p_hat / a,
        ratio_low=est.ci_low / a,
        ratio_high=est.ci_high / a,
        deviation=abs(est.p_hat / a - 1.0),
    )
