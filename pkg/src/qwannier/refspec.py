"""Finite-difference reference discretization of the magnetic operators.

``H = sum_bonds |psi(x) - U_xy psi(y)|^2 / h^2 + V(x)`` on the interior
nodes of a Dirichlet box, with Peierls links ``U_xy = Lambda(x, y)``
(exact line integrals of the full vector potential).  Nodes sit on the
fractional grid ``t = j / n`` shared with the Wannier samples, so a
:class:`~qwannier.magwannier.GridWindow` indexes the unknowns directly.

Matrices act on Euclidean vectors; a sampled function ``f`` becomes the
vector ``sqrt(w) f`` with ``w = h^2``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla
import scipy.optimize
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .bloch import PeriodicData
from .lattice import Lattice2D
from .magphase import FieldSpec, lambda_general, triangle_flux
from .magwannier import GridWindow, MagneticWannierFamily, projection_basis


class GaugeError(RuntimeError):
    pass


class InvalidWindowError(RuntimeError):
    pass


class EigensolverError(RuntimeError):
    pass


def _check_square(lattice: Lattice2D):
    if abs(lattice.e1 @ lattice.e2) > 1e-12 or abs(np.linalg.norm(lattice.e1) - np.linalg.norm(lattice.e2)) > 1e-12:
        raise ValueError("the 5-point discretization needs a square lattice")


def link_phases(x, y, data: PeriodicData, field: FieldSpec) -> np.ndarray:
    """``exp(-i int_[x,y] A)`` for the total potential ``A_per + A^{eps,kappa}``."""
    U = lambda_general(x, y, field)
    if data.has_vector_potential:
        U = U * np.exp(-1j * data.vector_potential_line_integral(x, y))
    return U


@dataclass
class DiscretizedOperator:
    """Dirichlet box of ``cells x cells`` lattice cells with ``n`` points per cell."""

    matrix: sp.csr_matrix
    window: GridWindow
    cells: int
    field: FieldSpec
    data: PeriodicData
    shift: float
    links: dict  # "x": (N1-1, N2) phases for bonds j -> j + e1, "y" likewise
    onsite: np.ndarray

    @property
    def h(self) -> float:
        return float(np.linalg.norm(self.window.lattice.e1)) / self.window.n

    @property
    def size(self) -> int:
        return self.window.size

    def reliability_threshold(self, rel: float = 0.01) -> float:
        """Energy below which the 5-point dispersion error stays under ``rel``.

        ``(2 - 2 cos kh) / h^2 = k^2 (1 - (kh)^2 / 12 + ...)``.
        """
        return 12 * rel / self.h ** 2

    def plaquette_residual(self) -> float:
        """``max |arg(prod U) + flux|`` over all plaquettes.

        The flux is integrated independently from ``B`` (two triangles per
        plaquette); periodic ``A_per`` contributes ``curl A_per`` which is
        handled through its own line integrals.
        """
        x = self.window.positions()
        Ux, Uy = self.links["x"], self.links["y"]
        loop = Ux[:, :-1] * Uy[1:, :] * np.conj(Ux[:, 1:]) * np.conj(Uy[:-1, :])
        p00, p10, p11, p01 = x[:-1, :-1], x[1:, :-1], x[1:, 1:], x[:-1, 1:]
        flux = triangle_flux(p00, p10, p11, self.field) + triangle_flux(p00, p11, p01, self.field)
        if self.data.has_vector_potential:
            li = self.data.vector_potential_line_integral
            flux = flux + li(p00, p10) + li(p10, p11) + li(p11, p01) + li(p01, p00)
        return float(np.abs(np.angle(loop * np.exp(1j * flux))).max())

    def gauge_transformed(self, chi: np.ndarray) -> "DiscretizedOperator":
        """Links ``U_xy -> exp(i chi(x)) U_xy exp(-i chi(y))``; unitarily equivalent."""
        chi = np.asarray(chi, dtype=float).reshape(self.window.shape)
        g = np.exp(1j * chi)
        Ux = self.links["x"] * g[:-1, :] * np.conj(g[1:, :])
        Uy = self.links["y"] * g[:, :-1] * np.conj(g[:, 1:])
        H = _assemble(Ux, Uy, self.onsite, self.h)
        return DiscretizedOperator(H, self.window, self.cells, self.field, self.data, self.shift,
                                   {"x": Ux, "y": Uy}, self.onsite)

    def vector(self, samples: np.ndarray) -> np.ndarray:
        return np.asarray(samples).reshape(-1) * np.sqrt(self.window.weight)


def _assemble(Ux, Uy, onsite, h) -> sp.csr_matrix:
    N1, N2 = onsite.shape
    idx = np.arange(N1 * N2).reshape(N1, N2)
    inv = 1.0 / h ** 2
    diag = onsite.ravel() + 4 * inv
    rows = [idx.ravel()]
    cols = [idx.ravel()]
    vals = [diag.astype(complex)]
    for U, a, b in ((Ux, idx[:-1, :], idx[1:, :]), (Uy, idx[:, :-1], idx[:, 1:])):
        rows += [a.ravel(), b.ravel()]
        cols += [b.ravel(), a.ravel()]
        vals += [-inv * U.ravel(), -inv * np.conj(U.ravel())]
    H = sp.coo_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                      shape=(N1 * N2,) * 2)
    return H.tocsr()


def discretize(data: PeriodicData, field: FieldSpec, cells: int, n: int = 12,
               shift: float | None = None, flux_tol: float = 1e-8) -> DiscretizedOperator:
    """Magnetic 5-point operator on the box ``[-cells/2, cells/2]^2`` (lattice units).

    ``shift`` is subtracted from the diagonal; by default the minimum of the
    lowest finite-difference Bloch band at the same ``n``, so that the
    zero-field spectrum starts at 0.
    """
    _check_square(data.lattice)
    if n < 12:
        raise ValueError("need at least 12 points per cell")
    win = GridWindow.for_box(cells, n, data.lattice)
    x = win.positions()
    if shift is None:
        shift = fd_band_minimum(data, n).lambda_min
    Ux = link_phases(x[:-1, :], x[1:, :], data, field)
    Uy = link_phases(x[:, :-1], x[:, 1:], data, field)
    onsite = data.potential(x) - shift
    h = float(np.linalg.norm(data.lattice.e1)) / n
    op = DiscretizedOperator(_assemble(Ux, Uy, onsite, h), win, cells, field, data, float(shift),
                             {"x": Ux, "y": Uy}, onsite)
    if field.epsilon != 0 or data.has_vector_potential:
        r = op.plaquette_residual()
        if r > flux_tol:
            raise GaugeError(f"plaquette flux residual {r:.3e}")
    return op


# ---------------------------------------------------------------- FD Bloch bands

def fd_bloch_hamiltonian(data: PeriodicData, n: int, theta) -> np.ndarray:
    """Periodic-cell 5-point matrix for quasi-momentum ``theta`` (Cartesian).

    Acts on ``psi`` at the ``n x n`` nodes of one cell with
    ``psi(x + gamma) = exp(i <theta, gamma>) psi(x)``.
    """
    _check_square(data.lattice)
    lat = data.lattice
    t = np.arange(n) / n
    x = lat.to_cartesian(np.stack(np.meshgrid(t, t, indexing="ij"), axis=-1))
    h = float(np.linalg.norm(lat.e1)) / n
    idx = np.arange(n * n).reshape(n, n)
    H = np.diag(data.potential(x).ravel() + 4 / h ** 2).astype(complex)
    theta = np.asarray(theta, dtype=float)
    for axis, e in ((0, lat.e1), (1, lat.e2)):
        step = e / n
        y = x + step
        U = np.ones(x.shape[:2], dtype=complex)
        if data.has_vector_potential:
            U = np.exp(-1j * data.vector_potential_line_integral(x, y))
        nb = np.roll(idx, -1, axis=axis)
        wrap = np.zeros((n, n), dtype=bool)
        if axis == 0:
            wrap[-1, :] = True
        else:
            wrap[:, -1] = True
        ph = np.where(wrap, np.exp(1j * float(theta @ e)), 1.0)
        vals = -U * ph / h ** 2
        np.add.at(H, (idx.ravel(), nb.ravel()), vals.ravel())
        np.add.at(H, (nb.ravel(), idx.ravel()), np.conj(vals).ravel())
    return H


def fd_bloch_bands(data: PeriodicData, n: int, thetas, n_bands: int = 2) -> np.ndarray:
    """Lowest ``n_bands`` FD Bloch eigenvalues (unshifted) at each theta."""
    thetas = np.asarray(thetas, dtype=float)
    flat = thetas.reshape(-1, 2)
    out = np.empty((len(flat), n_bands))
    for k, th in enumerate(flat):
        out[k] = sla.eigh(fd_bloch_hamiltonian(data, n, th), eigvals_only=True,
                          subset_by_index=[0, n_bands - 1])
    return out.reshape(thetas.shape[:-1] + (n_bands,))


@dataclass
class FDMinimum:
    theta0: np.ndarray
    lambda_min: float


def fd_band_minimum(data: PeriodicData, n: int, grid: int = 16) -> FDMinimum:
    """Minimum of the lowest FD band: coarse mesh then Nelder-Mead refinement."""
    s = (np.arange(grid) - grid // 2) / grid
    frac = np.stack(np.meshgrid(s, s, indexing="ij"), axis=-1)
    th = data.lattice.dual_to_cartesian(frac)
    lam = fd_bloch_bands(data, n, th, 1)[..., 0]
    i = np.unravel_index(np.argmin(lam), lam.shape)

    def f(t):
        return float(sla.eigh(fd_bloch_hamiltonian(data, n, t), eigvals_only=True,
                              subset_by_index=[0, 0])[0])

    res = scipy.optimize.minimize(f, th[i], method="Nelder-Mead",
                                  options={"xatol": 1e-7, "fatol": 1e-13})
    best = min((res.fun, res.x), (lam[i], th[i]), key=lambda p: p[0])
    return FDMinimum(np.asarray(best[1]), float(best[0]))


# ---------------------------------------------------------------- spectra

@dataclass
class WindowSpectrum:
    eigenvalues: np.ndarray  # kept (interior) eigenvalues in the window, sorted
    all_eigenvalues: np.ndarray
    interior_mass: np.ndarray
    window: tuple
    margin_cells: float
    threshold: float
    vectors: np.ndarray | None = None

    def to_dict(self) -> dict:
        return {"window": list(self.window), "kept": self.eigenvalues.tolist(),
                "all": self.all_eigenvalues.tolist(), "interior_mass": self.interior_mass.tolist(),
                "margin_cells": self.margin_cells, "threshold": self.threshold}


def interior_mask(win: GridWindow, margin_cells: float) -> np.ndarray:
    t = win.fractional()
    lim = (win.half + 1) / win.n - margin_cells
    return (np.abs(t).max(axis=-1) <= lim).ravel()


def _start_vector(N: int) -> np.ndarray:
    """Fixed Lanczos start vector so repeated runs give identical iterates."""
    return np.random.default_rng(12345).standard_normal(N).astype(complex)


def low_spectrum(op: DiscretizedOperator, E: float, margin_cells: float = 2.0,
                 threshold: float = 0.8, k0: int = 40, keep_vectors: bool = False,
                 lower: float = 0.0) -> WindowSpectrum:
    """Eigenvalues in ``[lower, E]`` with more than ``threshold`` interior mass.

    Shift-invert Lanczos just below the spectrum; ``k`` doubles until the
    largest computed eigenvalue exceeds ``E``.
    """
    H = op.matrix
    sigma = min(lower, 0.0) - 0.05 * max(E, 1e-3)
    lu = spla.splu((H - sigma * sp.identity(H.shape[0], format="csr")).tocsc())
    OPinv = spla.LinearOperator(H.shape, matvec=lu.solve, dtype=complex)
    k = k0
    while True:
        k = min(k, H.shape[0] - 2)
        try:
            w, v = spla.eigsh(H, k=k, sigma=sigma, OPinv=OPinv, which="LM", tol=1e-11,
                              ncv=min(H.shape[0] - 1, max(2 * k + 1, k + 40)),
                              v0=_start_vector(H.shape[0]))
        except spla.ArpackError as exc:
            raise EigensolverError(str(exc)) from exc
        order = np.argsort(w)
        w, v = w[order], v[:, order]
        if w[-1] > E or k >= H.shape[0] - 2:
            break
        k *= 2
    sel = (w >= lower - 1e-12) & (w <= E)
    w, v = w[sel], v[:, sel]
    mask = interior_mask(op.window, margin_cells)
    mass = np.sum(np.abs(v[mask]) ** 2, axis=0)
    keep = mass > threshold
    return WindowSpectrum(w[keep], w, mass, (lower, E), margin_cells, threshold,
                          v[:, keep] if keep_vectors else None)


# ---------------------------------------------------------------- projections

@dataclass
class GridProjection:
    """Orthonormal frame ``Q`` of ``ran P`` on the FD space plus diagnostics."""

    Q: np.ndarray
    site_labels: np.ndarray
    two_beta: float | None
    idempotency: float

    @property
    def beta(self) -> float | None:
        return None if self.two_beta is None else 0.5 * self.two_beta


def _perp_lowest(op: DiscretizedOperator, Q: np.ndarray, c: float = 10.0) -> float:
    """Smallest eigenvalue of ``P_perp H P_perp`` on ``ran P_perp``.

    ``P_perp H P_perp + c P = H + U C U^*`` with ``U = [Q, HQ]`` and
    ``C = [[A + c, -I], [-I, 0]]``, ``A = Q^* H Q``; shift-invert through
    Woodbury on a sparse LU of ``H``.
    """
    H = op.matrix
    N, r = Q.shape
    HQ = H @ Q
    A = Q.conj().T @ HQ
    lu = spla.splu(H.tocsc())
    U = np.hstack([Q, HQ])
    HiU = np.column_stack([lu.solve(U[:, j]) for j in range(2 * r)])
    I = np.eye(r)
    Cinv = np.block([[np.zeros((r, r)), -I], [-I, -(A + c * I)]])
    K = np.linalg.inv(Cinv + U.conj().T @ HiU)

    def solve(b):
        y = lu.solve(b)
        return y - HiU @ (K @ (U.conj().T @ y))

    def matvec(x):
        Px = Q @ (Q.conj().T @ x)
        xp = x - Px
        y = H @ xp
        return y - Q @ (Q.conj().T @ y) + c * Px

    T = spla.LinearOperator((N, N), matvec=matvec, dtype=complex)
    Tinv = spla.LinearOperator((N, N), matvec=solve, dtype=complex)
    w = spla.eigsh(T, k=3, sigma=0.0, OPinv=Tinv, which="LM", tol=1e-10,
                   v0=_start_vector(N), return_eigenvectors=False)
    w = np.sort(w.real)
    w = w[np.abs(w - c) > 1e-6]
    return float(w[0])


def project_wannier_to_grid(family: MagneticWannierFamily, op: DiscretizedOperator,
                            compute_beta: bool = True) -> GridProjection:
    """Re-orthonormalized frame of the family on the operator grid."""
    if family.window != op.window:
        raise InvalidWindowError("family and operator use different grids")
    Q = projection_basis(family)
    defect = float(np.abs(Q.conj().T @ Q - np.eye(Q.shape[1])).max())
    two_beta = None
    if compute_beta:
        two_beta = _perp_lowest(op, Q)
        if two_beta <= 0:
            raise InvalidWindowError(f"empirical 2 beta = {two_beta:.3e} <= 0")
    return GridProjection(Q, family.lattice.sites, two_beta, defect)


@dataclass
class GridDressing:
    """Dressed Hamiltonian of ``(H, P)`` in the site-labelled frame ``Q``."""

    Htilde: np.ndarray
    Y: np.ndarray
    S0: np.ndarray
    hp_norm: float

    def spectrum(self) -> np.ndarray:
        return np.linalg.eigvalsh(self.Htilde)


def dress_on_grid(op: DiscretizedOperator, Q: np.ndarray) -> GridDressing:
    """``H_tilde`` from one sparse LU via ``Q* H^{-1} Q = S(0)^{-1}``,
    ``Q* H^{-2} Q = S(0)^{-1} Y S(0)^{-1}``."""
    lu = spla.splu(op.matrix.tocsc())
    X = np.column_stack([lu.solve(Q[:, j]) for j in range(Q.shape[1])])
    G1 = Q.conj().T @ X
    G2 = X.conj().T @ X
    G1 = 0.5 * (G1 + G1.conj().T)
    G2 = 0.5 * (G2 + G2.conj().T)
    S0 = np.linalg.inv(G1)
    S0 = 0.5 * (S0 + S0.conj().T)
    Y = S0 @ G2 @ S0
    Y = 0.5 * (Y + Y.conj().T)
    w, V = np.linalg.eigh(Y)
    Yi = (V * w ** -0.5) @ V.conj().T
    Ht = Yi @ S0 @ Yi
    Ht = 0.5 * (Ht + Ht.conj().T)
    hp = float(np.linalg.norm(op.matrix @ Q, 2))
    return GridDressing(Ht, Y, S0, hp)


def random_gauge(win: GridWindow, rng: np.random.Generator, scale: float = np.pi) -> np.ndarray:
    return rng.uniform(-scale, scale, size=win.shape)


# ---------------------------------------------------------------- magnetic torus

@dataclass(frozen=True)
class TorusGrid:
    """``(L n) x (L n)`` nodes ``t = (j - L n / 2) / n`` of an ``L x L`` supercell.

    Functions are magnetic-periodic: ``psi(x) = Lambda(x, a) psi(x - a)`` for
    ``a`` in ``L Gamma`` (transverse gauge); this is a representation of
    ``L Gamma`` iff the supercell carries an even number of flux quanta.
    """

    L: int
    n: int
    lattice: Lattice2D

    @property
    def shape(self) -> tuple:
        return (self.L * self.n,) * 2

    @property
    def size(self) -> int:
        return (self.L * self.n) ** 2

    @property
    def weight(self) -> float:
        return self.lattice.cell_area / self.n ** 2

    @property
    def offset(self) -> int:
        return self.L * self.n // 2

    def fractional(self) -> np.ndarray:
        t = (np.arange(self.L * self.n) - self.offset) / self.n
        return np.stack(np.meshgrid(t, t, indexing="ij"), axis=-1)

    def positions(self) -> np.ndarray:
        return self.lattice.to_cartesian(self.fractional())

    def sites(self) -> np.ndarray:
        """Lattice sites of the supercell, ``n_j in [-L/2, L/2)``."""
        r = np.arange(self.L) - self.L // 2
        return np.stack(np.meshgrid(r, r, indexing="ij"), axis=-1).reshape(-1, 2)


def flux_quanta(field: FieldSpec, L: int, lattice: Lattice2D) -> float:
    return field.b * L ** 2 * lattice.cell_area / (2 * np.pi)


def quantized_B0(epsilon: float, L: int, n_flux: int, lattice: Lattice2D) -> float:
    """``B0`` giving exactly ``n_flux`` quanta through the supercell at ``epsilon``."""
    return 2 * np.pi * n_flux / (epsilon * L ** 2 * lattice.cell_area)


def discretize_torus(data: PeriodicData, field: FieldSpec, L: int, n: int = 12,
                     shift: float | None = None) -> DiscretizedOperator:
    """Magnetic 5-point operator on the ``L x L`` magnetic torus (constant field only)."""
    _check_square(data.lattice)
    if field.kappa != 0:
        raise ValueError("the magnetic torus needs a constant field")
    if (L * n) % 2:
        raise ValueError("L * n must be even")
    nq = flux_quanta(field, L, data.lattice)
    if abs(nq - round(nq)) > 1e-9 or round(nq) % 2:
        raise GaugeError(f"supercell flux {nq:.6g} is not an even number of quanta")
    grid = TorusGrid(L, n, data.lattice)
    x = grid.positions()
    if shift is None:
        shift = fd_band_minimum(data, n).lambda_min
    N = L * n
    lat = data.lattice
    links = {}
    for name, axis, e in (("x", 0, lat.e1), ("y", 1, lat.e2)):
        y = x + e / n
        U = link_phases(x, y, data, field)
        wrap = np.zeros(grid.shape, dtype=bool)
        if axis == 0:
            wrap[-1, :] = True
        else:
            wrap[:, -1] = True
        a = L * e
        # psi(y) = Lambda(y, a) psi(y - a) for the wrapped neighbour
        U = np.where(wrap, U * lambda_general(y, np.broadcast_to(a, y.shape), field), U)
        links[name] = U
    onsite = data.potential(x) - shift
    h = float(np.linalg.norm(lat.e1)) / n
    idx = np.arange(N * N).reshape(N, N)
    inv = 1.0 / h ** 2
    rows, cols, vals = [idx.ravel()], [idx.ravel()], [(onsite.ravel() + 4 * inv).astype(complex)]
    for name, axis in (("x", 0), ("y", 1)):
        nb = np.roll(idx, -1, axis=axis)
        U = links[name]
        rows += [idx.ravel(), nb.ravel()]
        cols += [nb.ravel(), idx.ravel()]
        vals += [-inv * U.ravel(), -inv * np.conj(U.ravel())]
    H = sp.coo_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                      shape=(N * N,) * 2).tocsr()
    op = DiscretizedOperator(H, grid, L, field, data, float(shift), links, onsite)
    return op


def torus_plaquette_residual(op: DiscretizedOperator) -> float:
    """Flux check on every torus plaquette, including the wrapped ones."""
    grid = op.window
    x = grid.positions()
    lat = grid.lattice
    Ux, Uy = op.links["x"], op.links["y"]
    loop = Ux * np.roll(Uy, -1, axis=0) * np.conj(np.roll(Ux, -1, axis=1)) * np.conj(Uy)
    s1, s2 = lat.e1 / grid.n, lat.e2 / grid.n
    flux = triangle_flux(x, x + s1, x + s1 + s2, op.field) + triangle_flux(x, x + s1 + s2, x + s2, op.field)
    return float(np.abs(np.angle(loop * np.exp(1j * flux))).max())
