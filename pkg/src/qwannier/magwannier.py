"""Magnetic quasi-Wannier families on a truncated lattice.

Functions live on fractional sample grids ``t = j / n`` so that lattice
translations are index shifts.  Two grids are used:

* the synthesis window of ``psi0`` (``M x M`` cells, used without periodic
  wrap-around) for the constant-field level, where magnetic translation
  covariance ``G_ab = Lambda(a, b) G_{a-b, 0}`` reduces every Gram matrix to
  one column;
* a :class:`GridWindow` (for instance the reference box) on which families
  are stored as dense column matrices for the slowly varying level.

Inner products use the trapezoidal weight ``|E| / n^2``.
"""
from __future__ import annotations

from dataclasses import dataclass, field as dfield

import numpy as np

from .lattice import Lattice2D, lattice_points, wedge
from .magphase import FieldSpec, lambda_const, lambda_tilde
from .wannier import WannierFunction


class IllConditionedFamilyError(RuntimeError):
    pass


class WindowOverflowError(RuntimeError):
    pass


@dataclass(frozen=True)
class TruncatedLattice:
    radius: int
    interior_margin: int = 3

    def __post_init__(self):
        if not self.radius >= self.interior_margin >= 0:
            raise ValueError("need radius >= interior_margin >= 0")

    @property
    def sites(self) -> np.ndarray:
        return lattice_points(self.radius)

    @property
    def interior(self) -> np.ndarray:
        return np.abs(self.sites).max(axis=1) <= self.radius - self.interior_margin

    @property
    def origin_index(self) -> int:
        return len(self) // 2

    def index(self) -> dict:
        return {tuple(p): k for k, p in enumerate(self.sites.tolist())}

    def __len__(self):
        return (2 * self.radius + 1) ** 2


@dataclass(frozen=True)
class GridWindow:
    """Samples ``j in [-half, half]^2`` at fractional positions ``j / n``."""

    half: int
    n: int
    lattice: Lattice2D

    @property
    def shape(self) -> tuple:
        return (2 * self.half + 1,) * 2

    @property
    def size(self) -> int:
        return (2 * self.half + 1) ** 2

    @property
    def weight(self) -> float:
        return self.lattice.cell_area / self.n ** 2

    def fractional(self) -> np.ndarray:
        t = np.arange(-self.half, self.half + 1) / self.n
        return np.stack(np.meshgrid(t, t, indexing="ij"), axis=-1)

    def positions(self) -> np.ndarray:
        return self.lattice.to_cartesian(self.fractional())

    @classmethod
    def for_box(cls, cells: int, n: int, lattice: Lattice2D) -> "GridWindow":
        """Interior nodes of a Dirichlet box ``[-cells/2, cells/2]^2`` (fractional)."""
        if (cells * n) % 2:
            raise ValueError("cells * n must be even")
        return cls(cells * n // 2 - 1, n, lattice)


def embed(src: np.ndarray, centre: int, win: GridWindow, shift=(0, 0)) -> np.ndarray:
    """Window samples of ``f(x - shift/n)`` where ``src[centre + j] = f(j / n)``."""
    return _embed_range(src, centre, -win.half, 2 * win.half + 1, shift)


def _embed_range(src, centre, lo, W, shift):
    out = np.zeros((W, W), dtype=complex)
    L = src.shape[0]
    a0 = centre + lo - shift[0]
    b0 = centre + lo - shift[1]
    i0, i1 = max(0, -a0), min(W, L - a0)
    j0, j1 = max(0, -b0), min(W, L - b0)
    if i0 < i1 and j0 < j1:
        out[i0:i1, j0:j1] = src[a0 + i0:a0 + i1, b0 + j0:b0 + j1]
    return out


def inverse_sqrt(G: np.ndarray, tol: float = 1e-10) -> np.ndarray:
    """Hermitian ``G^{-1/2}`` by full eigendecomposition."""
    G = 0.5 * (G + G.conj().T)
    w, U = np.linalg.eigh(G)
    if w.min() < tol:
        raise IllConditionedFamilyError(f"smallest Gram eigenvalue {w.min():.3e}")
    return (U * w ** -0.5) @ U.conj().T


def gram_and_inverse_sqrt(G: np.ndarray, tol: float = 1e-10):
    G = 0.5 * (G + np.asarray(G).conj().T)
    return G, inverse_sqrt(G, tol)


def _full_shift(samples: np.ndarray, s1: int, s2: int) -> np.ndarray:
    """Non-periodic shift by whole samples with zero fill."""
    out = np.zeros_like(samples)
    L = samples.shape[0]
    a = slice(max(0, s1), min(L, L + s1))
    b = slice(max(0, -s1), min(L, L - s1))
    c = slice(max(0, s2), min(L, L + s2))
    d = slice(max(0, -s2), min(L, L - s2))
    out[a, c] = samples[b, d]
    return out


def _separable_lambda(win_t: np.ndarray, lat: Lattice2D, g, b: float):
    """Factors ``(u, v)`` with ``Lambda^b(x, g) = u[i] v[j]`` on a tensor grid.

    ``x ^ g = t1 (e1 ^ g) + t2 (e2 ^ g)`` is linear in the fractional
    coordinates ``t = (t1, t2)`` of ``x``.
    """
    g = np.asarray(g, dtype=float)
    c1 = float(wedge(lat.e1, g))
    c2 = float(wedge(lat.e2, g))
    return np.exp(-0.5j * b * c1 * win_t), np.exp(-0.5j * b * c2 * win_t)


def ring_column(psi0: WannierFunction, field: FieldSpec, reach: int) -> dict:
    """``G_{d,0} = <phi_ring_d, phi_ring_0>`` for ``max|d_j| <= reach``.

    Computed on the whole synthesis window (no wrap-around).
    """
    n = psi0.grid_per_cell
    w = psi0.cell_weight
    p0 = psi0.samples
    L = p0.shape[0]
    t = (np.arange(L) - psi0.center) / n
    out = {}
    for d in lattice_points(reach).tolist():
        g = psi0.lattice.to_cartesian(d)
        u, v = _separable_lambda(t, psi0.lattice, g, field.b)
        s1, s2 = d[0] * n, d[1] * n
        # samples x with both x and x - d inside the window
        a = slice(max(0, s1), min(L, L + s1))
        b_ = slice(max(0, -s1), min(L, L - s1))
        c = slice(max(0, s2), min(L, L + s2))
        e = slice(max(0, -s2), min(L, L - s2))
        ring = p0[b_, e] * u[a, None] * v[None, c]
        out[tuple(d)] = complex(np.vdot(ring, p0[a, c]) * w)
    return out


def covariant_matrix(column: dict, lattice: TruncatedLattice, b: float, Lat: Lattice2D) -> np.ndarray:
    """``G_ab = Lambda^b(a, b) column[a - b]`` (zero outside the column's reach)."""
    s = lattice.sites
    X = Lat.to_cartesian(s)
    D = s[:, None, :] - s[None, :, :]
    vals = np.array([column.get(tuple(d), 0.0) for d in D.reshape(-1, 2).tolist()]).reshape(D.shape[:2])
    return lambda_const(X[:, None, :], X[None, :, :], b) * vals


@dataclass
class EpsilonFamily:
    """Constant-field level: ``G^eps``, ``F^eps`` and ``psi^eps_0``."""

    field: FieldSpec
    lattice: TruncatedLattice
    gram: np.ndarray
    F: np.ndarray
    psi_eps: np.ndarray  # samples on the synthesis window of psi0
    psi0: WannierFunction
    column_reach: int

    @property
    def center(self) -> int:
        return self.psi0.center

    def F_deviation(self, interior_only: bool = False) -> float:
        D = np.abs(self.F - np.eye(len(self.F)))
        if interior_only:
            m = self.lattice.interior
            D = D[np.ix_(m, m)]
        return float(D.max())

    def F_decay(self):
        """Max ``|F_ab - delta_ab|`` per sup-distance ``|a - b|``."""
        s = self.lattice.sites
        dist = np.abs(s[:, None, :] - s[None, :, :]).max(axis=-1)
        D = np.abs(self.F - np.eye(len(self.F)))
        r = np.arange(dist.max() + 1)
        return r, np.array([D[dist == k].max() for k in r])

    def covariance_residual(self) -> float:
        """``max |F_ab - Lambda(a,b) F_{a-b,0}|`` over interior pairs."""
        s = self.lattice.sites
        idx = self.lattice.index()
        o = self.lattice.origin_index
        X = self.psi0.lattice.to_cartesian(s)
        m = np.where(self.lattice.interior)[0]
        res = 0.0
        for a in m:
            d = s[a] - s[m]
            ok = [tuple(v) in idx for v in d.tolist()]
            cols = np.array([idx[tuple(v)] for v, k in zip(d.tolist(), ok) if k])
            bm = m[np.array(ok)]
            pred = lambda_const(X[a], X[bm], self.field.b) * self.F[cols, o]
            res = max(res, float(np.abs(self.F[a, bm] - pred).max()))
        return res

    def norm(self) -> float:
        return float(np.sqrt(np.sum(np.abs(self.psi_eps) ** 2) * self.psi0.cell_weight))

    def weighted_difference(self, m: int = 2) -> float:
        """``sup <x>^m |psi^eps_0 - psi_0|``."""
        x = self.psi0.positions()
        wgt = (1 + np.einsum("...i,...i->...", x, x)) ** (m / 2)
        return float(np.max(wgt * np.abs(self.psi_eps - self.psi0.samples)))

    def phi_columns(self, win: GridWindow, sites=None) -> np.ndarray:
        """``phi^eps_gamma(x) = Lambda^eps(x, gamma) psi^eps_0(x - gamma)`` on ``win``."""
        if sites is None:
            sites = self.lattice.sites
        n = self.psi0.grid_per_cell
        if win.n != n:
            raise ValueError("window and psi0 sampling differ")
        x = win.positions()
        cols = np.empty((win.size, len(sites)), dtype=complex)
        for k, s in enumerate(np.asarray(sites).tolist()):
            v = embed(self.psi_eps, self.center, win, (s[0] * n, s[1] * n))
            if self.field.b != 0:
                v = v * lambda_const(x, win.lattice.to_cartesian(s), self.field.b)
            cols[:, k] = v.ravel()
        return cols


def build_epsilon_family(psi0: WannierFunction, field: FieldSpec, lattice: TruncatedLattice,
                         column_reach: int | None = None) -> EpsilonFamily:
    """Ring functions, ``G^eps``, ``F^eps = (G^eps)^{-1/2}`` and ``psi^eps_0``.

    ``psi^eps_0 = sum_a F_{a0} Omega^eps(a, 0, x) psi0(x - a)``; in the
    transverse gauge ``Omega^eps(a, 0, x) = Lambda^eps(x, a)``.
    """
    N = len(lattice)
    if column_reach is None:
        column_reach = min(2 * lattice.radius, 10)
    if 2 * lattice.radius > psi0.M - 2:
        raise WindowOverflowError("truncated lattice larger than the synthesis window")
    if field.b == 0:
        return EpsilonFamily(field, lattice, np.eye(N), np.eye(N), psi0.samples.copy(), psi0,
                             column_reach)
    col = ring_column(psi0, field, column_reach)
    G = covariant_matrix(col, lattice, field.b, psi0.lattice)
    G, F = gram_and_inverse_sqrt(G)
    o = lattice.origin_index
    n = psi0.grid_per_cell
    L = psi0.samples.shape[0]
    t = (np.arange(L) - psi0.center) / n
    acc = np.zeros_like(psi0.samples)
    for a, s in enumerate(lattice.sites.tolist()):
        c = F[a, o]
        if abs(c) < 1e-14:
            continue
        u, v = _separable_lambda(t, psi0.lattice, psi0.lattice.to_cartesian(s), field.b)
        acc += c * _full_shift(psi0.samples, s[0] * n, s[1] * n) * (u[:, None] * v[None, :])
    return EpsilonFamily(field, lattice, G, F, acc, psi0, column_reach)


@dataclass
class MagneticWannierFamily:
    """Orthonormal family ``phi_gamma`` sampled on a grid window."""

    level: str  # "epsilon" or "epsilon-kappa"
    field: FieldSpec
    lattice: TruncatedLattice
    window: GridWindow
    columns: np.ndarray  # (window.size, nsites), function samples
    gram: np.ndarray
    F: np.ndarray
    diagnostics: dict = dfield(default_factory=dict)

    def F_deviation(self, interior_only: bool = False) -> float:
        D = np.abs(self.F - np.eye(len(self.F)))
        if interior_only:
            m = self.lattice.interior
            D = D[np.ix_(m, m)]
        return float(D.max())

    def overlaps(self) -> np.ndarray:
        c = self.columns
        return (c.conj().T @ c) * self.window.weight

    def orthonormality_defect(self, interior_only: bool = True) -> float:
        S = self.overlaps() - np.eye(self.columns.shape[1])
        if interior_only:
            m = self.lattice.interior
            S = S[np.ix_(m, m)]
        return float(np.abs(S).max())


def epsilon_level(eps_family: EpsilonFamily, win: GridWindow) -> MagneticWannierFamily:
    cols = eps_family.phi_columns(win)
    return MagneticWannierFamily("epsilon", eps_family.field, eps_family.lattice, win, cols,
                                 eps_family.gram, eps_family.F)


def build_projection(eps_family: EpsilonFamily, field: FieldSpec, win: GridWindow) -> MagneticWannierFamily:
    """Level ``epsilon-kappa`` on ``win``.

    ``phi_ring^{eps,kappa}_gamma = Lambda_tilde(x, gamma) phi^eps_gamma``,
    ``G^{eps,kappa} = I + <ring, ring> - <phi^eps, phi^eps>`` (the second term
    cancels window truncation to leading order) and
    ``phi^{eps,kappa}_gamma = sum_a F^{eps,kappa}_{a gamma} phi_ring_a``.
    """
    if field.epsilon != eps_family.field.epsilon or field.B0 != eps_family.field.B0:
        raise ValueError("field must share epsilon and B0 with the epsilon family")
    lat = eps_family.lattice
    N = len(lat)
    base = eps_family.phi_columns(win)
    if field.kappa == 0 or field.epsilon == 0:
        return MagneticWannierFamily("epsilon-kappa", field, lat, win, base, np.eye(N), np.eye(N))
    x = win.positions().reshape(-1, 2)
    ring = np.empty_like(base)
    for k, s in enumerate(lat.sites.tolist()):
        ring[:, k] = base[:, k] * lambda_tilde(x, win.lattice.to_cartesian(s), field)
    w = win.weight
    G = np.eye(N) + (ring.conj().T @ ring - base.conj().T @ base) * w
    G, F = gram_and_inverse_sqrt(G)
    return MagneticWannierFamily("epsilon-kappa", field, lat, win, ring @ F, G, F)


def projection_basis(family: MagneticWannierFamily) -> np.ndarray:
    """Grid-orthonormal basis ``Q`` (columns, Euclidean) of the family span.

    Lowdin re-orthonormalization of the sampled functions removes the small
    defects left by window truncation; ``P = Q Q^*``.
    """
    Phi = family.columns * np.sqrt(family.window.weight)
    S = Phi.conj().T @ Phi
    return Phi @ inverse_sqrt(S)


def torus_columns(eps_family: EpsilonFamily, grid, images: int = 1) -> np.ndarray:
    """Magnetic-periodic images of ``phi^eps_gamma`` on a :class:`~qwannier.refspec.TorusGrid`.

    ``sum_nu Lambda(x, L nu) phi_gamma(x - L nu)`` for ``|nu_j| <= images``,
    one column per supercell site (order of ``grid.sites()``).
    """
    n = eps_family.psi0.grid_per_cell
    if grid.n != n:
        raise ValueError("grid and psi0 sampling differ")
    b = eps_family.field.b
    Lat = grid.lattice
    t = (np.arange(grid.L * n) - grid.offset) / n
    W = grid.L * n
    cols = np.zeros((grid.size, grid.L ** 2), dtype=complex)
    for k, s in enumerate(grid.sites().tolist()):
        acc = np.zeros(grid.shape, dtype=complex)
        for nu in lattice_points(images).tolist():
            a = (grid.L * nu[0], grid.L * nu[1])
            g = (s[0] + a[0], s[1] + a[1])
            v = _embed_range(eps_family.psi_eps, eps_family.center, -grid.offset, W, (g[0] * n, g[1] * n))
            if not v.any():
                continue
            # Lambda(x, a) Lambda(x - a, s) = Lambda(x, a + s) exp(i b/2 a ^ s)
            u1, u2 = _separable_lambda(t, Lat, Lat.to_cartesian(g), b)
            ph = np.exp(0.5j * b * float(wedge(Lat.to_cartesian(a), Lat.to_cartesian(s))))
            acc += ph * v * (u1[:, None] * u2[None, :])
        cols[:, k] = acc.ravel()
    return cols
