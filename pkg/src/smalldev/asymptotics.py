"""Leading-order asymptotics of P(ε, εz) = P(ξ stays in εD on [0, T]).

With coefficients frozen at the origin the sojourn probability behaves as

    exp(-λ1 T/ε² + ∫_0^T μ(t) dt) · Σ_m c_1m f_1m(z) · (1 + O(ε))

where μ(t) = Σ_ij (½ σ_ij(0) a_i(t,0) a_j(t,0) - δ_ij a_i(t,0) a_j(t,0)).
The full zeroth-order series keeps every retained eigenpair.

Higher-order terms v_k, k >= 1, are not computed.  They solve the same
frozen-coefficient problem driven by B_ε v_{k-1} with initial data
(1/k!)(Σ_m a_m(T,0) z_m)^k; ``correction_terms`` is the extension point.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import special

from . import exprdsl
from .model import DiffusionModel, ModelError, sigma0
from .spectral import EigenSystem, first_level, spectral_constant

DEFAULT_PANELS = 256


def mu(m: DiffusionModel, t: float, s0: np.ndarray | None = None) -> float:
    """Drift correction μ(t), using a(t, 0)."""
    s0 = sigma0(m) if s0 is None else s0
    a = m.drift_at(t, np.zeros(m.dim))
    return float(0.5 * a @ s0 @ a - a @ a)


def _mu_vector(m: DiffusionModel, ts: np.ndarray, s0: np.ndarray) -> np.ndarray:
    zero = np.zeros((len(ts), m.dim))
    A = np.column_stack([exprdsl.vectorized(e)(ts, zero) for e in m.drift])
    if not np.all(np.isfinite(A)):
        # re-run pointwise to get the offending subexpression in the error
        for t in ts:
            m.drift_at(float(t), np.zeros(m.dim))
    return 0.5 * np.einsum("ni,ij,nj->n", A, s0, A) - np.einsum("ni,ni->n", A, A)


def mu_integral(m: DiffusionModel, T: float | None = None, n_panels: int = DEFAULT_PANELS,
                time_reversed: bool = False) -> float:
    """Composite Simpson rule for ∫_0^T μ(t) dt.

    ``time_reversed`` integrates μ built from a(T - t, 0) instead; the value
    agrees up to quadrature error.
    """
    T = m.horizon if T is None else T
    if n_panels < 2 or n_panels % 2:
        raise ValueError("n_panels must be even and >= 2")
    if T == 0:
        return 0.0
    ts = np.linspace(0.0, T, n_panels + 1)
    if time_reversed:
        ts = T - ts
    f = _mu_vector(m, ts, sigma0(m))
    w = np.ones(n_panels + 1)
    w[1:-1:2] = 4.0
    w[2:-1:2] = 2.0
    return float(T / (3 * n_panels) * (w @ f))


@dataclass(frozen=True)
class PrincipalTerm:
    lambda1: float
    exponent: float
    mu_integral: float
    F_z: float
    value: float
    multiplicity: int
    eps: float
    T: float
    z: tuple[float, ...]

    def to_dict(self) -> dict:
        return {
            "lambda1": self.lambda1,
            "exponent": self.exponent,
            "mu_integral": self.mu_integral,
            "F_z": self.F_z,
            "value": self.value,
            "multiplicity": self.multiplicity,
            "eps": self.eps,
            "T": self.T,
            "z": list(self.z),
        }


def _check_inputs(eig: EigenSystem, m: DiffusionModel, eps, z):
    if eig.dim != m.dim:
        raise ModelError(f"eigensystem dimension {eig.dim} != model dimension {m.dim}")
    s0 = sigma0(m)
    if not np.allclose(s0, eig.sigma0, rtol=1e-12, atol=1e-14):
        raise ModelError("eigensystem was built for a different sigma(0)")
    if not eps > 0:
        raise ModelError("eps must be positive")
    zz = np.atleast_1d(np.asarray(z, dtype=float))
    if zz.shape != (m.dim,):
        raise ModelError(f"z must have {m.dim} coordinates")
    if not eig.domain.contains(zz[None, :])[0]:
        raise ModelError(f"z = {zz.tolist()} is not in the interior of D")
    return zz


def principal_term(eig: EigenSystem, m: DiffusionModel, T: float | None, eps: float, z,
                   n_panels: int = DEFAULT_PANELS, tol: float | None = None) -> PrincipalTerm:
    """Leading term exp(-λ1 T/ε² + ∫μ) Σ_m c_1m f_1m(z)."""
    T = m.horizon if T is None else float(T)
    zz = _check_inputs(eig, m, eps, z)
    lam1, idx, c1 = first_level(eig, tol)
    f = eig.values(zz[None, :], idx)[0]
    F = float(math.fsum(c1 * f))
    mi = mu_integral(m, T, n_panels)
    exponent = -lam1 * T / eps**2 + mi
    # same arithmetic as v0_value so the one-level series reproduces it exactly
    value = float(math.fsum(c1 * np.exp(exponent) * f))
    return PrincipalTerm(lam1, exponent, mi, F, value, len(idx), float(eps), T,
                         tuple(zz.tolist()))


@dataclass(frozen=True)
class V0Series:
    value: float
    terms: np.ndarray        # q_{0,n}(T) f_n(z)
    n_terms: int
    tail_bound: float
    eps: float
    T: float
    z: tuple[float, ...]

    def to_dict(self) -> dict:
        return {
            "value": self.value,
            "n_terms": self.n_terms,
            "tail_bound": self.tail_bound,
            "terms": self.terms.tolist(),
            "eps": self.eps,
            "T": self.T,
            "z": list(self.z),
        }


def v0_value(eig: EigenSystem, m: DiffusionModel, T: float | None, eps: float, z, N: int,
             n_panels: int = DEFAULT_PANELS) -> V0Series:
    """Truncated series Σ_{n<=N} c_n exp(-λ_n T/ε² + ∫μ) f_n(z) with a tail estimate.

    The tail estimate bounds the omitted terms by Cauchy-Schwarz, using the
    Parseval remainder |D| - Σ c_n² and the sampled spectral-function
    constant C from e(x, x, λ) <= C λ^{d/2}.  It is a diagnostic only.
    """
    T = m.horizon if T is None else float(T)
    zz = _check_inputs(eig, m, eps, z)
    if not 1 <= N <= len(eig):
        raise ValueError(f"N={N} outside 1..{len(eig)} available eigenpairs")
    mi = mu_integral(m, T, n_panels)
    lam = eig.lambdas[:N]
    f = eig.values(zz[None, :], np.arange(N))[0]
    terms = eig.c[:N] * np.exp(-lam * T / eps**2 + mi) * f
    value = float(math.fsum(terms))
    tail = _tail_bound(eig, N, T / eps**2, mi)
    return V0Series(value, terms, N, tail, float(eps), T, tuple(zz.tolist()))


def _tail_bound(eig: EigenSystem, N: int, s: float, mi: float) -> float:
    if N >= len(eig):
        lam_next = float(eig.lambdas[-1])
    else:
        lam_next = float(eig.lambdas[N])
    resid = max(eig.domain.volume - float(np.sum(eig.c[:N] ** 2)), 0.0)
    if resid == 0.0:
        return 0.0
    if s <= 0:
        return math.inf
    C = spectral_constant(eig)
    d = eig.dim
    # Σ_{n>N} f_n(z)² e^{-2s(λ_n-λ')} <= C e^{2sλ'} (2s)^{-d/2} Γ(d/2+1, 2sλ')
    a = d / 2 + 1
    x = 2 * s * lam_next
    q = special.gammaincc(a, x)
    if q > 1e-280:
        log_g = special.gammaln(a) + math.log(q)
    else:
        log_g = (a - 1) * math.log(x) - x  # Γ(a, x) ~ x^{a-1} e^{-x}
    log_weighted = math.log(C) + x - (d / 2) * math.log(2 * s) + log_g
    return math.exp(mi - s * lam_next + 0.5 * math.log(resid) + 0.5 * log_weighted)


def correction_terms(*args, **kwargs):
    """Reserved for the v_k, k >= 1 corrections; not implemented."""
    raise NotImplementedError("only the principal (k = 0) term is available")
