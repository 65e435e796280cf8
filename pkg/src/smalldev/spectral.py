"""Dirichlet eigenpairs of A = ½ Σ σ_ij(0) ∂²/∂z_i∂z_j on a box or a disk.

Conventions: eigenvalues are those of ``-A`` (positive), eigenfunctions are
L²(D)-orthonormal and signed so that ``c_n = ∫_D f_n > 0`` whenever it is
nonzero.
"""

from __future__ import annotations

import functools
import itertools
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy import special
from scipy.interpolate import RegularGridInterpolator
from scipy.sparse.linalg import ArpackNoConvergence, eigsh

from .model import Ball, Box, Domain, ModelError

ANALYTIC_GROUP_TOL = 1e-6
_EXACT_DEGENERACY = 1e-9


class SpectralError(RuntimeError):
    pass


class UnsupportedProblem(SpectralError, ValueError):
    pass


class NonConvergence(SpectralError):
    pass


@dataclass(frozen=True)
class SpectralFunctionSample:
    cutoff: float
    sup: float
    n_terms: int


@dataclass
class EigenSystem:
    """Ordered eigenpairs with indicator coefficients ``c``.

    ``kind`` is ``"analytic"`` or ``"fd"``.  Eigenfunctions are evaluated
    through :meth:`values`; analytic ones in closed form, FD ones by
    multilinear interpolation of the nodal vectors (zero on the boundary).
    """

    domain: Domain
    sigma0: np.ndarray
    lambdas: np.ndarray
    c: np.ndarray
    kind: str
    h: np.ndarray | None = None
    group_tol: float = ANALYTIC_GROUP_TOL
    groups: list[list[int]] = field(default_factory=list)
    # analytic box: integer modes (n, d); disk: (order, zero index, parity) and zeros
    modes: np.ndarray | None = None
    zeros: np.ndarray | None = None
    # fd: nodal values on the interior grid, shape (k, *interior_shape)
    nodal: np.ndarray | None = None
    grid: int | None = None

    def __post_init__(self):
        if not self.groups:
            self.groups = group_levels(self.lambdas, self.group_tol)

    def __len__(self) -> int:
        return len(self.lambdas)

    @property
    def dim(self) -> int:
        return self.domain.dim

    @property
    def multiplicities(self) -> list[int]:
        return [len(g) for g in self.groups]

    def group_of(self, n: int) -> int:
        for level, g in enumerate(self.groups):
            if n in g:
                return level
        raise IndexError(n)

    def values(self, points, idx=None) -> np.ndarray:
        """Eigenfunction values, shape ``(len(points), len(idx))``."""
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        if pts.shape[1] != self.dim:
            raise ValueError(f"points must have {self.dim} columns")
        idx = np.arange(len(self)) if idx is None else np.atleast_1d(idx)
        if self.kind == "fd":
            return self._fd_values(pts, idx)
        if isinstance(self.domain, Box):
            return _box_values(self.domain, self.modes[idx], pts)
        return _disk_values(self.domain.radius, self.modes[idx], self.zeros[idx], pts)

    def _fd_values(self, pts, idx):
        dom = self.domain
        axes = [np.linspace(a, b, self.grid + 1) for a, b in zip(dom.lo, dom.hi)]
        out = np.empty((len(pts), len(idx)))
        pad = [(0, 0)] + [(1, 1)] * self.dim
        for col, n in enumerate(idx):
            full = np.pad(self.nodal[n], pad[1:])
            interp = RegularGridInterpolator(axes, full, bounds_error=False, fill_value=0.0)
            out[:, col] = interp(pts)
        return out

    def quadrature(self):
        """Points and weights integrating eigenfunction products on D.

        Same rule used for ``c``: mesh sum for FD, Gauss rules otherwise.
        """
        dom = self.domain
        if self.kind == "fd":
            axes = [np.linspace(a, b, self.grid + 1)[1:-1] for a, b in zip(dom.lo, dom.hi)]
            pts = _tensor(axes)
            w = np.full(len(pts), float(np.prod(self.h)))
            return pts, w
        return domain_quadrature(dom)

    def tag(self) -> str:
        if self.kind == "fd":
            return f"finite-difference h={[float(v) for v in self.h]}"
        return "analytic"


def _tensor(axes) -> np.ndarray:
    return np.array(list(itertools.product(*axes)), dtype=float).reshape(-1, len(axes))


@functools.lru_cache(maxsize=16)
def _leggauss(n: int):
    x, w = np.polynomial.legendre.leggauss(n)
    x.flags.writeable = False
    w.flags.writeable = False
    return x, w


def domain_quadrature(dom: Domain, order: int | None = None):
    """Gauss rule on ``dom``: tensor Gauss-Legendre, or polar for the disk."""
    if isinstance(dom, Box):
        d = dom.dim
        n = order or {1: 400, 2: 96, 3: 32}.get(d, 12)
        x, w = _leggauss(n)
        axes, weights = [], []
        for a, b in zip(dom.lo, dom.hi):
            axes.append(0.5 * (b - a) * x + 0.5 * (b + a))
            weights.append(0.5 * (b - a) * w)
        pts = _tensor(axes)
        ww = np.prod(_tensor(weights), axis=1)
        return pts, ww
    if dom.dim != 2:
        raise UnsupportedProblem("disk quadrature is only provided for d = 2")
    n = order or 128
    xr, wr = _leggauss(n)
    r = 0.5 * dom.radius * (xr + 1.0)
    wr = 0.5 * dom.radius * wr * r
    theta = 2 * np.pi * (np.arange(2 * n) + 0.5) / (2 * n)
    wt = np.full(2 * n, 2 * np.pi / (2 * n))
    R, TH = np.meshgrid(r, theta, indexing="ij")
    pts = np.column_stack([(R * np.cos(TH)).ravel(), (R * np.sin(TH)).ravel()])
    return pts, np.outer(wr, wt).ravel()


def group_levels(lambdas, tol: float) -> list[list[int]]:
    """Consecutive eigenvalues within relative ``tol`` of the level's first."""
    groups: list[list[int]] = []
    for n, lam in enumerate(lambdas):
        if groups and abs(lam - lambdas[groups[-1][0]]) <= tol * abs(lambdas[groups[-1][0]]):
            groups[-1].append(n)
        else:
            groups.append([n])
    return groups


# --------------------------------------------------------------- analytic

def _box_values(dom: Box, modes, pts):
    L = dom.lengths
    lo = np.asarray(dom.lo)
    s = (pts - lo) / L  # (n, d)
    out = np.ones((len(pts), len(modes)))
    for i in range(dom.dim):
        out *= np.sqrt(2.0 / L[i]) * np.sin(np.pi * np.outer(s[:, i], modes[:, i]))
    inside = dom.contains(pts)
    out[~inside] = 0.0
    return out


def _box_c(dom: Box, modes) -> np.ndarray:
    L = dom.lengths
    c = np.ones(len(modes))
    for i in range(dom.dim):
        k = modes[:, i]
        c *= np.sqrt(2.0 / L[i]) * L[i] * np.where(k % 2 == 1, 2.0, 0.0) / (k * np.pi)
    return c


def _analytic_box(dom: Box, s0: np.ndarray, k: int) -> EigenSystem:
    diag = np.diag(s0)
    L = dom.lengths
    coef = 0.5 * diag * (np.pi / L) ** 2  # λ = Σ coef_i k_i²
    # all modes with λ <= cut are enumerated; grow cut until at least k of them
    cut = float(np.sum(coef)) * max(2.0, k ** (2.0 / dom.dim))
    while True:
        kmax = np.floor(np.sqrt(cut / coef)).astype(int)
        count = _count_modes(coef, kmax, cut)
        if count >= k:
            break
        cut *= 1.5
    axes = [np.arange(1, km + 1) for km in kmax]
    modes = _tensor(axes).astype(np.int64)
    lam = modes.astype(float) ** 2 @ coef
    keep = lam <= cut
    modes, lam = modes[keep], lam[keep]
    order = np.lexsort(tuple(modes[:, i] for i in range(dom.dim - 1, -1, -1)) + (lam,))
    order = order[:k]
    modes, lam = modes[order], lam[order]
    return EigenSystem(dom, s0, lam, _box_c(dom, modes), "analytic", modes=modes)


def _count_modes(coef, kmax, cut) -> int:
    # ellipsoid lattice count without materialising the grid for large d
    if len(coef) == 1:
        return int(kmax[0])
    total = 0
    for k1 in range(1, int(kmax[0]) + 1):
        rest = cut - coef[0] * k1 * k1
        if rest < np.sum(coef[1:]):
            break
        total += _count_modes(coef[1:], np.floor(np.sqrt(rest / coef[1:])).astype(int), rest)
    return total


def _disk_values(radius, modes, zeros, pts):
    r = np.hypot(pts[:, 0], pts[:, 1])
    th = np.arctan2(pts[:, 1], pts[:, 0])
    out = np.empty((len(pts), len(modes)))
    for col, ((order, _s, parity), j) in enumerate(zip(modes, zeros)):
        jn1 = special.jv(order + 1, j)
        # radial modes take the sign of J_1(j) so that their integral is positive
        norm = 1.0 / (math.sqrt(math.pi) * radius * (jn1 if order == 0 else abs(jn1)))
        radial = special.jv(order, j * r / radius) * norm
        if order == 0:
            ang = 1.0
        else:
            ang = math.sqrt(2.0) * (np.cos(order * th) if parity == 0 else np.sin(order * th))
        out[:, col] = np.where(r < radius, radial * ang, 0.0)
    return out


def _analytic_disk(dom: Ball, s0: np.ndarray, k: int) -> EigenSystem:
    s2 = float(s0[0, 0])
    R = dom.radius
    nu_max, s_max = 4, 4
    while True:
        table = {nu: special.jn_zeros(nu, s_max + 1) for nu in range(nu_max + 2)}
        # every zero below the bound is present in the table
        bound = min(table[nu_max + 1][0], min(z[s_max] for z in table.values()))
        cand = []
        for nu in range(nu_max + 1):
            for s, j in enumerate(table[nu][:s_max], start=1):
                if j < bound:
                    for parity in ((0,) if nu == 0 else (0, 1)):
                        cand.append((j, nu, s, parity))
        if len(cand) >= k:
            break
        nu_max *= 2
        s_max *= 2
    cand.sort()
    cand = cand[:k]
    zeros = np.array([c[0] for c in cand])
    modes = np.array([(c[1], c[2], c[3]) for c in cand], dtype=np.int64)
    lam = s2 * zeros**2 / (2 * R**2)
    c = np.where(modes[:, 0] == 0, 2 * math.sqrt(math.pi) * R / zeros, 0.0)
    return EigenSystem(dom, s0, lam, c, "analytic", modes=modes, zeros=zeros)


def analytic_eigensystem(dom: Domain, sigma0, k: int) -> EigenSystem:
    """Closed-form eigenpairs: box with diagonal σ(0), or disk with σ(0) = s²I."""
    s0 = np.atleast_2d(np.asarray(sigma0, dtype=float))
    if k < 1:
        raise ValueError("k must be >= 1")
    if s0.shape != (dom.dim, dom.dim):
        raise ModelError(f"sigma0 must be {dom.dim}x{dom.dim}")
    if isinstance(dom, Box):
        if np.any(s0 - np.diag(np.diag(s0))):
            raise UnsupportedProblem("analytic box eigenpairs need a diagonal sigma0")
        if np.any(np.diag(s0) <= 0):
            raise UnsupportedProblem("sigma0 must be positive definite")
        return _analytic_box(dom, s0, k)
    if dom.dim == 1:
        return analytic_eigensystem(Box((-dom.radius,), (dom.radius,)), s0, k)
    if dom.dim != 2:
        raise UnsupportedProblem("analytic ball eigenpairs are provided for d = 2 only")
    if not np.allclose(s0, s0[0, 0] * np.eye(2), rtol=0, atol=1e-14 * abs(s0[0, 0])) or s0[0, 0] <= 0:
        raise UnsupportedProblem("a ball requires isotropic sigma0 = s^2 I")
    return _analytic_disk(dom, s0, k)


# ------------------------------------------------------ finite differences

def fd_operator(dom: Box, sigma0, grid: int) -> sp.csr_matrix:
    """Sparse ``-A_h`` on the interior nodes, C-order over axes.

    ``grid`` is the number of cells per axis; h_i = L_i / grid.
    """
    s0 = np.asarray(sigma0, dtype=float)
    d = dom.dim
    n = grid - 1
    h = dom.lengths / grid
    eye = sp.identity(n, format="csr")
    ones = np.ones(n)
    d2 = [sp.diags([ones[1:], -2 * ones, ones[1:]], [-1, 0, 1]) / h[i] ** 2 for i in range(d)]
    d1 = [sp.diags([-ones[1:], ones[1:]], [-1, 1]) / (2 * h[i]) for i in range(d)]

    def along(ops):
        # kron over axes, axis 0 outermost
        out = sp.identity(1, format="csr")
        for i in range(d):
            out = sp.kron(out, ops.get(i, eye), format="csr")
        return out

    A = sp.csr_matrix((n**d, n**d))
    for i in range(d):
        A = A + s0[i, i] * along({i: d2[i]})
        for j in range(i + 1, d):
            if s0[i, j] != 0.0:
                A = A + 2.0 * s0[i, j] * along({i: d1[i], j: d1[j]})
    M = (-0.5 * A).tocsr()
    M = 0.5 * (M + M.T)
    return M.tocsr()


def fd_eigensystem(dom: Domain, sigma0, grid: int, k: int,
                   group_tol: float | None = None, tol: float = 0.0,
                   maxiter: int = 10_000) -> EigenSystem:
    """k smallest eigenpairs of the finite-difference ``-A_h`` on a box.

    Shift-invert Lanczos (ARPACK, sparse LU of ``-A_h``) around 0.  Each
    pair is checked to residual ``1e-8 λ`` in the discrete L² norm.
    """
    if not isinstance(dom, Box):
        raise UnsupportedProblem("finite differences are implemented for boxes only")
    if grid < 8:
        raise ValueError("grid must be >= 8")
    s0 = np.atleast_2d(np.asarray(sigma0, dtype=float))
    if s0.shape != (dom.dim, dom.dim):
        raise ModelError(f"sigma0 must be {dom.dim}x{dom.dim}")
    if not np.allclose(s0, s0.T) or np.linalg.eigvalsh(0.5 * (s0 + s0.T))[0] <= 0:
        raise UnsupportedProblem("sigma0 must be symmetric positive definite")
    M = fd_operator(dom, s0, grid)
    N = M.shape[0]
    if k >= N - 1:
        raise ValueError(f"k={k} too large for {N} interior nodes")
    h = dom.lengths / grid
    cell = float(np.prod(h))
    # deterministic start vector: smooth, not orthogonal to low modes
    v0 = np.ones(N) + 1e-3 * np.cos(np.arange(N) * 0.7)
    try:
        vals, vecs = eigsh(M, k=k, sigma=0.0, which="LM", v0=v0, tol=tol, maxiter=maxiter)
    except ArpackNoConvergence as exc:
        raise NonConvergence(f"shift-invert iteration did not converge: {exc}") from exc
    order = np.argsort(vals)
    vals, vecs = vals[order], vecs[:, order]
    vecs = vecs / math.sqrt(cell)
    gtol = 5.0 * float(np.max(h)) ** 2 if group_tol is None else group_tol
    groups = group_levels(vals, gtol)
    c = cell * vecs.sum(axis=0)
    # only numerically exact degeneracies have a free basis; split levels keep their vectors
    for g in group_levels(vals, _EXACT_DEGENERACY):
        vecs[:, g], c[g] = _canonical_basis(vecs[:, g], c[g], cell)
    for n in range(k):
        res = M @ vecs[:, n] - vals[n] * vecs[:, n]
        rnorm = math.sqrt(cell) * float(np.linalg.norm(res))
        if rnorm > 1e-8 * vals[n]:
            raise NonConvergence(f"eigenpair {n}: residual {rnorm:.3g} > 1e-8*lambda")
    shape = (k,) + (grid - 1,) * dom.dim
    return EigenSystem(dom, s0, vals, c, "fd", h=h, group_tol=gtol, groups=groups,
                       nodal=vecs.T.reshape(shape).copy(), grid=grid)


def _canonical_basis(V, c, cell):
    """Rotate a level's basis so the indicator projects onto its first vector.

    Then fix signs: ∫f >= 0, or first clearly nonzero nodal value positive.
    """
    V = V.copy()
    c = c.copy()
    if V.shape[1] > 1 and np.linalg.norm(c) > 0:
        u = c / np.linalg.norm(c)
        e1 = np.zeros_like(u)
        e1[0] = 1.0
        # reflection P (symmetric, orthogonal) with P u = e1; w chosen away from 0
        if u[0] >= 0:
            w = u + e1
            P = 2.0 * np.outer(w, w) / (w @ w) - np.eye(len(u))
        else:
            w = u - e1
            P = np.eye(len(u)) - 2.0 * np.outer(w, w) / (w @ w)
        V = V @ P
        c = cell * V.sum(axis=0)
    scale = math.sqrt(cell) * math.sqrt(V.shape[0])
    for j in range(V.shape[1]):
        if abs(c[j]) > 1e-10 * scale:
            sgn = 1.0 if c[j] > 0 else -1.0
        else:
            col = V[:, j]
            nz = np.flatnonzero(np.abs(col) > 1e-8 * np.max(np.abs(col)))
            sgn = 1.0 if col[nz[0]] > 0 else -1.0
        V[:, j] *= sgn
        c[j] *= sgn
    return V, c


# ------------------------------------------------------- level utilities

def first_level(eig: EigenSystem, tol: float | None = None):
    """``(λ1, [n indices], [c_1m])`` of the lowest level."""
    if len(eig) == 0:
        raise ValueError("empty eigensystem")
    tol = eig.group_tol if tol is None else tol
    lam1 = float(eig.lambdas[0])
    idx = [n for n, lam in enumerate(eig.lambdas) if abs(lam - lam1) <= tol * lam1]
    return lam1, idx, eig.c[idx].copy()


def sample_points(dom: Domain, n: int) -> np.ndarray:
    """Cell-centred lattice with ``n`` points per axis, clipped to ``dom``."""
    if isinstance(dom, Box):
        axes = [a + (np.arange(n) + 0.5) / n * (b - a) for a, b in zip(dom.lo, dom.hi)]
        return _tensor(axes)
    g = -dom.radius + (np.arange(n) + 0.5) / n * 2 * dom.radius
    pts = _tensor([g] * dom.dim)
    return pts[dom.contains(pts)]


def spectral_function_sup(eig: EigenSystem, cutoff: float, n_samples: int = 65) -> SpectralFunctionSample:
    """sup over a lattice of e(x, x, λ) = Σ_{λ_j <= λ} f_j(x)²."""
    idx = np.flatnonzero(eig.lambdas <= cutoff)
    if len(idx) == 0:
        return SpectralFunctionSample(float(cutoff), 0.0, 0)
    vals = eig.values(sample_points(eig.domain, n_samples), idx)
    return SpectralFunctionSample(float(cutoff), float(np.max(np.sum(vals**2, axis=1))), len(idx))


def spectral_constant(eig: EigenSystem, n_samples: int = 33) -> float:
    """Empirical C with e(x, x, λ) <= C λ^{d/2} over the retained levels."""
    pts = sample_points(eig.domain, n_samples)
    vals = eig.values(pts) ** 2
    acc = np.cumsum(vals, axis=1)
    ends = [g[-1] for g in eig.groups]
    sups = np.max(acc[:, ends], axis=0)
    return float(np.max(sups / eig.lambdas[ends] ** (eig.dim / 2)))


def weyl_bracket(lambdas, dim: int) -> tuple[float, float]:
    """(min, max) of λ_l / l^{2/d} over the sequence."""
    lam = np.asarray(lambdas, dtype=float)
    ratio = lam / np.arange(1, len(lam) + 1) ** (2.0 / dim)
    return float(ratio.min()), float(ratio.max())
