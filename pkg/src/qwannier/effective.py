"""One-band effective model: hopping kernel, modified band, magnetic matrix.

``M(a, b) = Lambda(a, b) k(a - b)`` on a truncated lattice, with
``k(gamma) = <phi_gamma, H_tilde phi_0>`` read off a dressed matrix and
``lambda_bar(theta) = sum_gamma exp(-i <theta, gamma>) k(gamma)``.
"""
from __future__ import annotations

from dataclasses import dataclass, field as dfield
from math import gcd

import numpy as np
import scipy.sparse as sp

from .bloch import MinimumReport
from .lattice import Lattice2D, lattice_points
from .magphase import FieldSpec, lambda_const, lambda_general
from .magwannier import TruncatedLattice


class TruncationTooSmallError(RuntimeError):
    pass


class KernelAsymmetryError(RuntimeError):
    pass


class KernelOverflowError(ValueError):
    pass


class FluxMismatchError(ValueError):
    pass


class DegenerateHessianError(ValueError):
    pass


@dataclass
class HoppingKernel:
    k: dict  # (n1, n2) -> complex
    epsilon: float = 0.0
    lattice: Lattice2D = dfield(default_factory=Lattice2D.square)
    covariance_residual: float = 0.0
    hermiticity_residual: float = 0.0

    @property
    def support_radius(self) -> int:
        return max((max(abs(a), abs(b)) for a, b in self.k), default=0)

    def hermiticity(self) -> float:
        return max((abs(v - np.conj(self.k.get((-a, -b), 0.0))) for (a, b), v in self.k.items()),
                   default=0.0)

    def decay(self) -> tuple[np.ndarray, np.ndarray]:
        """Max ``|k(gamma)|`` per sup-norm shell."""
        R = self.support_radius
        out = np.zeros(R + 1)
        for (a, b), v in self.k.items():
            r = max(abs(a), abs(b))
            out[r] = max(out[r], abs(v))
        return np.arange(R + 1), out

    def truncated(self, radius: int) -> "HoppingKernel":
        k = {g: v for g, v in self.k.items() if max(abs(g[0]), abs(g[1])) <= radius}
        return HoppingKernel(k, self.epsilon, self.lattice, self.covariance_residual,
                             self.hermiticity_residual)

    def l1_radius(self, rel: float = 1e-8) -> int:
        """Smallest ``R_k`` with ``sum_{|g| > R_k} |k(g)| < rel ||k||_1``."""
        r, _ = self.decay()
        tot = sum(abs(v) for v in self.k.values())
        for R in r:
            tail = sum(abs(v) for g, v in self.k.items() if max(abs(g[0]), abs(g[1])) > R)
            if tail < rel * tot:
                return int(R)
        return int(r[-1])

    def to_rows(self):
        return [[a, b, v.real, v.imag] for (a, b), v in sorted(self.k.items())]

    @classmethod
    def nearest_neighbour(cls, t: float = 1.0, onsite: float = 0.0,
                          lattice: Lattice2D | None = None) -> "HoppingKernel":
        k = {(1, 0): t, (-1, 0): t, (0, 1): t, (0, -1): t}
        if onsite:
            k[(0, 0)] = onsite
        return cls({g: complex(v) for g, v in k.items()}, 0.0, lattice or Lattice2D.square())


def extract_kernel(Htilde: np.ndarray, lattice: TruncatedLattice, field: FieldSpec,
                   geometry: Lattice2D, tol: float | None = None,
                   symmetrize: bool = True) -> HoppingKernel:
    """Kernel from column 0 of a dressed matrix in the ``phi^eps`` frame.

    ``k(gamma) = Htilde[gamma, 0]`` for interior ``gamma`` (transverse gauge:
    ``Lambda(gamma, 0) = 1``).  The covariance residual
    ``max |Htilde[a, b] - Lambda(a, b) k(a - b)|`` over interior pairs is
    stored; with ``symmetrize`` the returned kernel is
    ``(k(g) + conj k(-g)) / 2``.
    """
    s = lattice.sites
    o = lattice.origin_index
    inner = lattice.interior
    k = {tuple(g): complex(Htilde[i, o]) for i, g in enumerate(s.tolist()) if inner[i]}
    herm = max(abs(v - np.conj(k.get((-a, -b), np.conj(v)))) for (a, b), v in k.items())
    if symmetrize:
        k = {g: 0.5 * (v + np.conj(k[(-g[0], -g[1])])) for g, v in k.items()}
    m = np.where(inner)[0]
    X = geometry.to_cartesian(s)
    res = 0.0
    for a in m:
        d = s[a] - s[m]
        vals = np.array([k.get(tuple(v), 0.0) for v in d.tolist()])
        pred = lambda_const(X[a], X[m], field.b) * vals
        res = max(res, float(np.abs(Htilde[a, m] - pred).max()))
    if tol is not None and res > tol:
        raise TruncationTooSmallError(f"covariance residual {res:.3e} > {tol:.1e}")
    return HoppingKernel(k, field.epsilon, geometry, res, float(herm))


def band_function(kernel: HoppingKernel, thetas, imag_tol: float = 1e-6) -> np.ndarray:
    """``lambda_bar(theta) = sum_g exp(-i <theta, g>) k(g)`` at Cartesian ``thetas``."""
    thetas = np.asarray(thetas, dtype=float)
    out = np.zeros(thetas.shape[:-1], dtype=complex)
    for g, v in kernel.k.items():
        x = kernel.lattice.to_cartesian(g)
        out += v * np.exp(-1j * (thetas @ x))
    scale = max(1.0, float(np.abs(out).max()))
    if np.abs(out.imag).max() > imag_tol * scale:
        raise KernelAsymmetryError(f"imaginary residue {np.abs(out.imag).max():.3e}")
    return out.real


def kernel_from_band(values: np.ndarray, radius: int, lattice: Lattice2D | None = None,
                     epsilon: float = 0.0) -> HoppingKernel:
    """Fourier coefficients ``k(g) = avg_theta exp(i <theta, g>) lambda(theta)``.

    ``values`` sits on the ``M x M`` node mesh of :class:`BandStructure`
    (fractional ``(j - M//2) / M``).
    """
    M = values.shape[0]
    s = (np.arange(M) - M // 2) / M
    f1, f2 = np.meshgrid(s, s, indexing="ij")
    k = {}
    for g in lattice_points(radius).tolist():
        ph = np.exp(2j * np.pi * (f1 * g[0] + f2 * g[1]))
        k[tuple(g)] = complex(np.mean(ph * values))
    return HoppingKernel(k, epsilon, lattice or Lattice2D.square())


@dataclass
class BandComparison:
    sup_deviation: float
    argmax: tuple
    n_nodes: int

    def to_dict(self) -> dict:
        return {"sup_deviation": self.sup_deviation, "argmax": list(self.argmax), "n_nodes": self.n_nodes}


def compare_band_to_bloch(lambda_bar: np.ndarray, lambda0: np.ndarray, mask: np.ndarray) -> BandComparison:
    """``sup_{mask} |lambda_bar - lambda0|`` (no bound is asserted off the mask)."""
    d = np.where(mask, np.abs(lambda_bar - lambda0), -np.inf)
    i = np.unravel_index(np.argmax(d), d.shape)
    return BandComparison(float(d[i]), tuple(int(v) for v in i), int(mask.sum()))


def ratio_table(values: dict) -> list:
    """Successive ratios ``f(eps) / f(eps / 2)`` for a dict ``eps -> f``."""
    eps = sorted(values, reverse=True)
    return [(a, b, values[a] / values[b]) for a, b in zip(eps, eps[1:])]


# ---------------------------------------------------------------- magnetic matrix

@dataclass
class MagneticMatrix:
    kernel: HoppingKernel
    field: FieldSpec
    lattice: TruncatedLattice
    entries: sp.csr_matrix

    def hermiticity_residual(self) -> float:
        D = self.entries - self.entries.conj().T
        return float(np.abs(D.data).max()) if D.nnz else 0.0

    def dense(self) -> np.ndarray:
        return self.entries.toarray()


def build_magnetic_matrix(kernel: HoppingKernel, field: FieldSpec,
                          lattice: TruncatedLattice) -> MagneticMatrix:
    """``M(a, b) = Lambda^{eps,kappa}(a, b) k(a - b)``."""
    if kernel.support_radius > 2 * lattice.radius:
        raise KernelOverflowError("kernel support exceeds the truncated lattice")
    s = lattice.sites
    idx = lattice.index()
    X = kernel.lattice.to_cartesian(s)
    rows, cols, vals = [], [], []
    for g, v in kernel.k.items():
        if v == 0:
            continue
        # pairs (a, b) with a - b = g
        tgt = s - np.asarray(g)
        ok = np.abs(tgt).max(axis=1) <= lattice.radius
        a = np.where(ok)[0]
        b = np.array([idx[tuple(t)] for t in tgt[ok].tolist()], dtype=int)
        if field.kappa == 0:
            ph = lambda_const(X[a], X[b], field.b)
        else:
            ph = lambda_general(X[a], X[b], field)
        rows.append(a)
        cols.append(b)
        vals.append(ph * v)
    n = len(lattice)
    if rows:
        M = sp.coo_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                          shape=(n, n)).tocsr()
    else:
        M = sp.csr_matrix((n, n), dtype=complex)
    return MagneticMatrix(kernel, field, lattice, M)


def matrix_window_spectrum(M: MagneticMatrix, window: tuple, margin: int | None = None,
                           max_edge_mass: float = 0.2) -> np.ndarray:
    """Window eigenvalues whose eigenvectors carry at most ``max_edge_mass`` on the outer margin."""
    w, V = np.linalg.eigh(M.dense())
    lo, hi = window
    sel = (w >= lo) & (w <= hi)
    w, V = w[sel], V[:, sel]
    if margin is None:
        margin = M.lattice.interior_margin
    edge = np.abs(M.lattice.sites).max(axis=1) > M.lattice.radius - margin
    mass = np.sum(np.abs(V[edge]) ** 2, axis=0)
    return w[mass <= max_edge_mass]


# ---------------------------------------------------------------- rational flux

@dataclass
class RationalSpectrum:
    p: int
    q: int
    k_grid: np.ndarray  # (G, G, 2)
    eigenvalues: np.ndarray  # (G, G, q)

    @property
    def band_edges(self) -> np.ndarray:
        return np.stack([self.eigenvalues.min(axis=(0, 1)), self.eigenvalues.max(axis=(0, 1))], axis=1)

    @property
    def gaps(self) -> list:
        e = self.band_edges
        return [(float(e[j, 1]), float(e[j + 1, 0])) for j in range(self.q - 1) if e[j + 1, 0] > e[j, 1]]


def magnetic_bloch_matrix(kernel: HoppingKernel, p: int, q: int, k1: float, k2: float) -> np.ndarray:
    """``q x q`` magnetic Bloch matrix for per-cell flux ``phi = 2 pi p / q``.

    ``M`` in the transverse gauge is conjugated by ``exp(i (phi/2) m1 m2)`` into
    the Landau form ``exp(-i phi m1 d2 - i phi d1 d2 / 2) k(-d)`` with
    ``d = n - m``, periodic in ``m1`` mod ``q``.
    """
    phi = 2 * np.pi * p / q
    H = np.zeros((q, q), dtype=complex)
    for (g1, g2), v in kernel.k.items():
        d1, d2 = -g1, -g2
        for r in range(q):
            c = (r + d1) % q
            H[r, c] += v * np.exp(-1j * phi * r * d2 - 0.5j * phi * d1 * d2 + 1j * (k1 * d1 + k2 * d2))
    return 0.5 * (H + H.conj().T)


def rational_flux_spectrum(kernel: HoppingKernel, p: int, q: int, mbz_grid: int = 32,
                           field: FieldSpec | None = None) -> RationalSpectrum:
    """Exact band structure of ``M`` at rational flux ``2 pi p / q`` per cell."""
    if q < 1 or gcd(p, q) != 1:
        raise ValueError("need q >= 1 and gcd(p, q) = 1")
    if field is not None:
        flux = field.b * kernel.lattice.cell_area
        target = 2 * np.pi * p / q
        if abs(np.angle(np.exp(1j * (flux - target)))) > 1e-9:
            raise FluxMismatchError(f"cell flux {flux} is not 2 pi {p}/{q}")
    if field is not None and field.kappa != 0:
        raise FluxMismatchError("rational flux reduction needs a constant field")
    k1 = np.arange(mbz_grid) * (2 * np.pi / q) / mbz_grid
    k2 = np.arange(mbz_grid) * 2 * np.pi / mbz_grid
    K = np.stack(np.meshgrid(k1, k2, indexing="ij"), axis=-1)
    ev = np.empty((mbz_grid, mbz_grid, q))
    for i in range(mbz_grid):
        for j in range(mbz_grid):
            ev[i, j] = np.linalg.eigvalsh(magnetic_bloch_matrix(kernel, p, q, K[i, j, 0], K[i, j, 1]))
    return RationalSpectrum(p, q, K, ev)


def butterfly(kernel: HoppingKernel, q_max: int = 8, mbz_grid: int = 8) -> list:
    """Rows ``(p/q, eigenvalue)`` for all reduced fractions ``p/q`` in ``[0, 1]``."""
    rows = []
    fracs = sorted({(p, q) for q in range(1, q_max + 1) for p in range(0, q + 1) if gcd(p, q) == 1},
                   key=lambda t: t[0] / t[1])
    for p, q in fracs:
        rs = rational_flux_spectrum(kernel, p, q, mbz_grid)
        for e in np.unique(np.round(rs.eigenvalues.ravel(), 12)):
            rows.append((p / q, float(e)))
    return rows


# ---------------------------------------------------------------- islands

@dataclass
class SpectralReport:
    eigenvalues: np.ndarray
    window: tuple
    islands: list
    gaps: list
    flux: float = 0.0

    @property
    def centers(self) -> np.ndarray:
        return np.array([0.5 * (a + b) for a, b in self.islands])

    @property
    def gap_widths(self) -> np.ndarray:
        return np.array([b - a for a, b in self.gaps])

    @property
    def island_widths(self) -> np.ndarray:
        return np.array([b - a for a, b in self.islands])

    def to_dict(self) -> dict:
        return {"window": list(self.window), "islands": [list(i) for i in self.islands],
                "gaps": [list(g) for g in self.gaps], "flux": self.flux,
                "eigenvalues": np.asarray(self.eigenvalues).tolist()}


def detect_islands(eigs, window: tuple, cluster_gap: float, flux: float = 0.0) -> SpectralReport:
    """Greedy clustering of window eigenvalues; a gap wider than ``cluster_gap`` starts a new island."""
    lo, hi = window
    if not hi >= lo:
        raise ValueError("empty window")
    e = np.sort(np.asarray(eigs, dtype=float))
    e = e[(e >= lo) & (e <= hi)]
    islands, gaps = [], []
    if e.size:
        start = e[0]
        for a, b in zip(e[:-1], e[1:]):
            if b - a > cluster_gap:
                islands.append((float(start), float(a)))
                gaps.append((float(a), float(b)))
                start = b
        islands.append((float(start), float(e[-1])))
    return SpectralReport(e, (lo, hi), islands, gaps, flux)


@dataclass
class LandauPrediction:
    levels: np.ndarray
    spacing: float
    heuristic: bool = True

    def to_dict(self) -> dict:
        return {"levels": self.levels.tolist(), "spacing": self.spacing, "heuristic": self.heuristic}


def landau_predictor(minimum: MinimumReport, field: FieldSpec, n_levels: int) -> LandauPrediction:
    """Harmonic approximation ``lambda_min + eps B0 sqrt(det(Hess/2)) (2n + 1)``."""
    H = np.asarray(minimum.hessian, dtype=float)
    det = float(np.linalg.det(0.5 * H))
    if not det > 0:
        raise DegenerateHessianError("Hessian at the minimum is not positive definite")
    w = field.b * np.sqrt(det)
    n = np.arange(n_levels)
    return LandauPrediction(minimum.lambda_min + w * (2 * n + 1), 2 * w)
