"""Plane-wave Bloch band structure of a periodic magnetic Schroedinger operator.

The fibre operator at quasi-momentum ``theta`` is

    (-i grad - A_per + theta)^2 + V_per

on the cell, written in the basis ``exp(i <G, x>) / sqrt(|E|)`` with ``G`` in a
disc of the dual lattice.  Potentials are given by Fourier tables keyed by
integer dual coordinates ``(m1, m2)`` meaning ``G = m1 e*_1 + m2 e*_2``.
"""
from __future__ import annotations

from collections import deque
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
from scipy.signal import convolve2d

from .lattice import Lattice2D


class HypothesisViolation(RuntimeError):
    """Band minimum is degenerate or otherwise outside the assumed regime."""


class ConsistencyError(RuntimeError):
    pass


def _table(coeffs: dict, size: int) -> np.ndarray:
    t = np.zeros((2 * size + 1, 2 * size + 1), dtype=complex)
    for (m1, m2), c in coeffs.items():
        t[m1 + size, m2 + size] += c
    return t


def _conj_symmetric(coeffs: dict, tol: float = 1e-12) -> bool:
    for (m1, m2), c in coeffs.items():
        if abs(coeffs.get((-m1, -m2), 0.0) - np.conj(c)) > tol:
            return False
    return True


@dataclass
class PeriodicData:
    """Periodic potential and periodic vector potential of the unperturbed operator."""

    lattice: Lattice2D
    V: dict = field(default_factory=dict)
    A1: dict = field(default_factory=dict)
    A2: dict = field(default_factory=dict)
    name: str = "custom"

    def __post_init__(self):
        self.V = {tuple(int(i) for i in k): complex(v) for k, v in self.V.items()}
        self.A1 = {tuple(int(i) for i in k): complex(v) for k, v in self.A1.items()}
        self.A2 = {tuple(int(i) for i in k): complex(v) for k, v in self.A2.items()}
        for label, c in (("V", self.V), ("A1", self.A1), ("A2", self.A2)):
            if not _conj_symmetric(c):
                raise ValueError(f"{label} Fourier table is not conjugate-symmetric")
        size = self.table_size
        self._V = _table(self.V, size)
        self._A = np.stack([_table(self.A1, size), _table(self.A2, size)])
        a2 = convolve2d(self._A[0], self._A[0]) + convolve2d(self._A[1], self._A[1])
        self._A2 = a2  # indices offset by 2*size

    @property
    def table_size(self) -> int:
        keys = list(self.V) + list(self.A1) + list(self.A2)
        return max([0] + [max(abs(k[0]), abs(k[1])) for k in keys])

    @property
    def has_vector_potential(self) -> bool:
        return bool(self.A1 or self.A2)

    @property
    def flux_check(self) -> float:
        # A_per periodic => the cell flux is the circulation around the cell
        # boundary, which cancels edge by edge; only a constant-in-cell field
        # term could survive and a Fourier table cannot represent one.
        return 0.0

    def potential(self, x) -> np.ndarray:
        """Evaluate V at Cartesian points ``x`` of shape (..., 2)."""
        return _eval_fourier(self.V, self.lattice, x).real

    def vector_potential(self, x) -> np.ndarray:
        return np.stack([_eval_fourier(self.A1, self.lattice, x).real,
                         _eval_fourier(self.A2, self.lattice, x).real], axis=-1)

    def vector_potential_line_integral(self, x, y) -> np.ndarray:
        """Exact ``int_[x,y] A_per . dl`` for arrays of segment endpoints."""
        x = np.asarray(x, dtype=float)
        d = np.asarray(y, dtype=float) - x
        out = np.zeros(np.broadcast(x[..., 0], d[..., 0]).shape)
        for tab, comp in ((self.A1, 0), (self.A2, 1)):
            for m, c in tab.items():
                G = np.asarray(m, dtype=float) @ self.lattice.dual
                gd = d @ G
                # int_0^1 exp(i G.(x + t d)) dt
                small = np.abs(gd) < 1e-8
                safe = np.where(small, 1.0, gd)
                f = np.where(small, 1 + 0.5j * gd, (np.exp(1j * gd) - 1) / (1j * safe))
                out = out + (c * np.exp(1j * (x @ G)) * f).real * d[..., comp]
        return out


def _eval_fourier(coeffs: dict, lattice: Lattice2D, x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    out = np.zeros(x.shape[:-1], dtype=complex)
    for m, c in coeffs.items():
        G = np.asarray(m, dtype=float) @ lattice.dual
        out += c * np.exp(1j * (x @ G))
    return out


def free(lattice: Lattice2D | None = None) -> PeriodicData:
    return PeriodicData(lattice or Lattice2D.square(), name="free")


def mathieu(v: float = 0.1, lattice: Lattice2D | None = None) -> PeriodicData:
    """``V(x) = 2 v cos(<e*_1, x>)``."""
    return PeriodicData(lattice or Lattice2D.square(), V={(1, 0): v, (-1, 0): v},
                        name="mathieu")


def checkerboard(v: float = 0.1, lattice: Lattice2D | None = None) -> PeriodicData:
    """``V(x) = 2 v (cos<e*_1,x> + cos<e*_2,x>)``."""
    V = {(1, 0): v, (-1, 0): v, (0, 1): v, (0, -1): v}
    return PeriodicData(lattice or Lattice2D.square(), V=V, name="checkerboard")


def lowsym(v: float = 0.1, lattice: Lattice2D | None = None) -> PeriodicData:
    """``V = 2v (cos x_1 + 0.5 cos x_2 + 0.5 sin(x_1 + 2 x_2))`` in dual coordinates.

    No point of the plane is an inversion centre, so nothing forces the
    Wannier function to be even.
    """
    h = 0.5 * v
    V = {(1, 0): v, (-1, 0): v, (0, 1): h, (0, -1): h, (1, 2): -0.5j * v, (-1, -2): 0.5j * v}
    return PeriodicData(lattice or Lattice2D.square(), V=V, name="lowsym")


def stripe_field(c: float = 0.5, lattice: Lattice2D | None = None) -> PeriodicData:
    """Zero-flux periodic field from ``A = (0, c cos<e*_1,x>)``.

    The reflection ``theta_2 -> -theta_2`` (combined with a half-period shift)
    is a symmetry of the band, so for large enough ``c`` the lowest band has two
    mirror-image minima.
    """
    return PeriodicData(lattice or Lattice2D.square(), A2={(1, 0): c / 2, (-1, 0): c / 2},
                        name="stripe_field")


PRESETS = {"free": free, "mathieu": mathieu, "checkerboard": checkerboard, "lowsym": lowsym,
           "stripe_field": stripe_field}


@dataclass(frozen=True)
class PlaneWaveBasis:
    m: np.ndarray  # (n, 2) integer dual coordinates
    G: np.ndarray  # (n, 2) Cartesian
    cutoff: float

    def __len__(self):
        return len(self.m)

    def index(self) -> dict:
        return {tuple(r): i for i, r in enumerate(self.m.tolist())}


def plane_wave_basis(lattice: Lattice2D, cutoff: float) -> PlaneWaveBasis:
    """Dual-lattice vectors with ``|G| <= cutoff * min|e*_j|``."""
    if cutoff < 1:
        raise ValueError("cutoff must be >= 1")
    gmin = min(np.linalg.norm(lattice.estar1), np.linalg.norm(lattice.estar2))
    radius = cutoff * gmin * (1 + 1e-9)
    # bound on integer coordinates from the smallest singular value of the dual
    smin = np.linalg.svd(lattice.dual, compute_uv=False).min()
    nmax = int(np.ceil(radius / smin)) + 1
    r = np.arange(-nmax, nmax + 1)
    m = np.stack(np.meshgrid(r, r, indexing="ij"), axis=-1).reshape(-1, 2)
    G = m @ lattice.dual
    keep = np.linalg.norm(G, axis=1) <= radius
    m, G = m[keep], G[keep]
    order = np.lexsort((m[:, 1], m[:, 0], np.round(np.linalg.norm(G, axis=1), 12)))
    return PlaneWaveBasis(m[order], G[order], float(cutoff))


def _lookup(table: np.ndarray, dm: np.ndarray, offset: int) -> np.ndarray:
    i = dm[..., 0] + offset
    j = dm[..., 1] + offset
    n = table.shape[-1]
    inside = (i >= 0) & (i < n) & (j >= 0) & (j < n)
    out = np.zeros(table.shape[:-2] + dm.shape[:-1], dtype=complex)
    out[..., inside] = table[..., i[inside], j[inside]]
    return out


def assemble_bloch_hamiltonian(theta, data: PeriodicData, cutoff: float | PlaneWaveBasis,
                               check: bool = True) -> np.ndarray:
    basis = cutoff if isinstance(cutoff, PlaneWaveBasis) else plane_wave_basis(data.lattice, cutoff)
    k = np.asarray(theta, dtype=float) + basis.G
    dm = basis.m[:, None, :] - basis.m[None, :, :]
    s = data.table_size
    H = np.diag(np.einsum("ij,ij->i", k, k)).astype(complex)
    H += _lookup(data._V, dm, s)
    if data.has_vector_potential:
        a = _lookup(data._A, dm, s)  # (2, n, n)
        ksum = k[:, None, :] + k[None, :, :]
        H -= a[0] * ksum[..., 0] + a[1] * ksum[..., 1]
        H += _lookup(data._A2, dm, 2 * s)
    if check:
        resid = np.abs(H - H.conj().T).max()
        if resid > 1e-10:
            raise ConsistencyError(f"Bloch matrix not Hermitian (residual {resid:.2e})")
    return H


@dataclass
class BandStructure:
    """Lowest bands on a regular ``M x M`` mesh of the dual cell.

    Node ``(i, j)`` sits at fractional dual coordinates
    ``((i - M//2)/M, (j - M//2)/M)``, so ``theta = 0`` is node ``(M//2, M//2)``.
    """

    data: PeriodicData
    basis: PlaneWaveBasis
    M: int
    bands: np.ndarray  # (M, M, J), shifted
    vectors: np.ndarray  # (M, M, npw, nvec)
    shift: float
    gaps_at_nodes: np.ndarray = None

    @property
    def cutoff(self) -> float:
        return self.basis.cutoff

    @property
    def fractional_nodes(self) -> np.ndarray:
        s = (np.arange(self.M) - self.M // 2) / self.M
        return np.stack(np.meshgrid(s, s, indexing="ij"), axis=-1)

    @property
    def thetas(self) -> np.ndarray:
        return self.data.lattice.dual_to_cartesian(self.fractional_nodes)

    @property
    def lambda0(self) -> np.ndarray:
        return self.bands[..., 0]

    def eigen(self, theta, n_bands: int | None = None, vectors: bool = False):
        """Shifted eigenpairs at an arbitrary ``theta``."""
        J = n_bands or self.bands.shape[-1]
        H = assemble_bloch_hamiltonian(theta, self.data, self.basis, check=False)
        if vectors:
            w, v = scipy.linalg.eigh(H, subset_by_index=[0, J - 1])
            return w - self.shift, v
        w = scipy.linalg.eigh(H, subset_by_index=[0, J - 1], eigvals_only=True)
        return w - self.shift

    def to_csv_rows(self):
        th = self.thetas.reshape(-1, 2)
        b = self.bands.reshape(-1, self.bands.shape[-1])
        return [list(t) + list(r) for t, r in zip(th, b)]


def compute_bands(data: PeriodicData, grid: int, cutoff: float, n_bands: int = 2,
                  n_vectors: int = 1, workers: int = 1) -> BandStructure:
    if grid < 8:
        raise ValueError("grid must be >= 8")
    if n_bands < 2:
        raise ValueError("need at least two bands")
    basis = plane_wave_basis(data.lattice, cutoff)
    if len(basis) < n_bands:
        raise ValueError("cutoff too small for the requested number of bands")
    M = grid
    s = (np.arange(M) - M // 2) / M
    frac = np.stack(np.meshgrid(s, s, indexing="ij"), axis=-1).reshape(-1, 2)
    thetas = data.lattice.dual_to_cartesian(frac)

    def solve(idx):
        H = assemble_bloch_hamiltonian(thetas[idx], data, basis)
        try:
            w, v = scipy.linalg.eigh(H, subset_by_index=[0, n_bands - 1])
        except np.linalg.LinAlgError as exc:
            raise ConsistencyError(f"eigensolver failed at node {idx}") from exc
        return w, v[:, :n_vectors]

    if workers > 1:
        with ThreadPoolExecutor(workers) as ex:
            results = list(ex.map(solve, range(len(thetas))))
    else:
        results = [solve(i) for i in range(len(thetas))]
    bands = np.array([r[0] for r in results]).reshape(M, M, n_bands)
    vecs = np.array([r[1] for r in results]).reshape(M, M, len(basis), n_vectors)
    shift = float(bands[..., 0].min())
    return BandStructure(data, basis, M, bands - shift, vecs, shift)


@dataclass
class MinimumReport:
    theta0: np.ndarray
    lambda_min: float
    hessian: np.ndarray
    is_unique: bool
    is_nondegenerate: bool
    gap_at_min: float
    node: tuple
    n_local_minima: int
    hessian_fit: np.ndarray | None = None

    def to_dict(self) -> dict:
        return {
            "theta0": self.theta0.tolist(),
            "lambda_min": self.lambda_min,
            "hessian": self.hessian.tolist(),
            "hessian_fit": None if self.hessian_fit is None else self.hessian_fit.tolist(),
            "is_unique": self.is_unique,
            "is_nondegenerate": self.is_nondegenerate,
            "gap_at_min": self.gap_at_min,
            "node": list(self.node),
            "n_local_minima": self.n_local_minima,
        }


def _neighbours8(M):
    return [(di, dj) for di in (-1, 0, 1) for dj in (-1, 0, 1) if (di, dj) != (0, 0)]


def local_minima(values: np.ndarray) -> list[tuple[int, int]]:
    """Nodes not exceeding any of their 8 periodic neighbours."""
    M = values.shape[0]
    is_min = np.ones_like(values, dtype=bool)
    for di, dj in _neighbours8(M):
        is_min &= values <= np.roll(np.roll(values, di, 0), dj, 1)
    return [tuple(map(int, ij)) for ij in np.argwhere(is_min)]


def _hessian_fd(f, theta0, h):
    e = np.eye(2)
    f0 = f(theta0)
    H = np.zeros((2, 2))
    for i in range(2):
        fp1, fm1 = f(theta0 + h * e[i]), f(theta0 - h * e[i])
        fp2, fm2 = f(theta0 + 2 * h * e[i]), f(theta0 - 2 * h * e[i])
        H[i, i] = (-fp2 + 16 * fp1 - 30 * f0 + 16 * fm1 - fm2) / (12 * h * h)
    d = e[0] + e[1]
    a = e[0] - e[1]
    H[0, 1] = H[1, 0] = (f(theta0 + h * d) - f(theta0 + h * a) - f(theta0 - h * a)
                         + f(theta0 - h * d)) / (4 * h * h)
    return H


def find_minimum(bands: BandStructure, uniqueness_margin: float | None = None,
                 degeneracy_tol: float = 1e-8) -> MinimumReport:
    lam = bands.lambda0
    M = bands.M
    width = float(lam.max() - lam.min())
    margin = 1e-6 * width if uniqueness_margin is None else uniqueness_margin
    node = np.unravel_index(np.argmin(lam), lam.shape)
    minima = [n for n in local_minima(lam) if lam[n] < lam[node] + margin]

    # quadratic fit on the 3x3 patch, in fractional steps
    lat = bands.data.lattice
    frac0 = bands.fractional_nodes[node]
    offs = np.array([(di, dj) for di in (-1, 0, 1) for dj in (-1, 0, 1)], dtype=float)
    vals = np.array([lam[(node[0] + int(di)) % M, (node[1] + int(dj)) % M] for di, dj in offs])
    pts = lat.dual_to_cartesian(offs / M)
    X = np.column_stack([np.ones(9), pts, pts[:, 0] ** 2, pts[:, 0] * pts[:, 1], pts[:, 1] ** 2])
    c = np.linalg.lstsq(X, vals, rcond=None)[0]
    Hfit = np.array([[2 * c[3], c[4]], [c[4], 2 * c[5]]])
    theta_node = lat.dual_to_cartesian(frac0)
    step = np.linalg.norm(lat.dual, axis=1).min() / M
    try:
        delta = -np.linalg.solve(Hfit, c[1:3])
    except np.linalg.LinAlgError:
        delta = np.zeros(2)
    if not np.all(np.isfinite(delta)) or np.linalg.norm(delta) > step:
        delta = np.zeros(2)
    theta0 = theta_node + delta

    def lam0(t):
        return float(bands.eigen(t, n_bands=1)[0])

    # refine the stationary point with a couple of Newton steps on exact values
    h = step
    for _ in range(3):
        g = np.array([(lam0(theta0 + h / 4 * e) - lam0(theta0 - h / 4 * e)) / (h / 2)
                      for e in np.eye(2)])
        Hn = _hessian_fd(lam0, theta0, h / 2)
        try:
            dn = -np.linalg.solve(Hn, g)
        except np.linalg.LinAlgError:
            break
        if np.linalg.norm(dn) > step:
            break
        theta0 = theta0 + dn
        if np.linalg.norm(dn) < 1e-10:
            break

    H1 = _hessian_fd(lam0, theta0, h)
    H2 = _hessian_fd(lam0, theta0, h / 2)
    hess = H2.copy()
    hess[0, 0] = (16 * H2[0, 0] - H1[0, 0]) / 15
    hess[1, 1] = (16 * H2[1, 1] - H1[1, 1]) / 15
    hess[0, 1] = hess[1, 0] = (4 * H2[0, 1] - H1[0, 1]) / 3

    w = bands.eigen(theta0, n_bands=2)
    gap = float(w[1] - w[0])
    scale = max(1.0, width)
    if gap < degeneracy_tol * scale:
        raise HypothesisViolation(f"lowest Bloch eigenvalue degenerate at the minimum "
                                  f"(gap {gap:.3e})")
    ev = np.linalg.eigvalsh(hess)
    return MinimumReport(theta0=theta0, lambda_min=float(w[0]), hessian=hess,
                         is_unique=len(minima) <= 1, is_nondegenerate=bool(ev.min() > 0),
                         gap_at_min=gap, node=tuple(int(i) for i in node),
                         n_local_minima=len(minima), hessian_fit=Hfit)


def periodic_components(mask: np.ndarray) -> np.ndarray:
    """Label 4-connected components of a boolean mask on the periodic grid.

    Returns labels (0 = background, components numbered from 1).
    """
    M0, M1 = mask.shape
    labels = np.zeros(mask.shape, dtype=int)
    current = 0
    for start in zip(*np.nonzero(mask)):
        if labels[start]:
            continue
        current += 1
        labels[start] = current
        queue = deque([start])
        while queue:
            i, j = queue.popleft()
            for ni, nj in (((i + 1) % M0, j), ((i - 1) % M0, j), (i, (j + 1) % M1),
                           (i, (j - 1) % M1)):
                if mask[ni, nj] and not labels[ni, nj]:
                    labels[ni, nj] = current
                    queue.append((ni, nj))
    return labels


def _wraps(component: np.ndarray) -> bool:
    """True if a periodic component closes a non-contractible loop."""
    M0, M1 = component.shape
    # unwrap by BFS, recording integer lifts; a node reached with two lifts wraps
    lift = {}
    start = tuple(np.argwhere(component)[0])
    lift[start] = (0, 0)
    queue = deque([start])
    while queue:
        i, j = queue.popleft()
        li, lj = lift[(i, j)]
        for di, dj in ((1, 0), (-1, 0), (0, 1), (0, -1)):
            ni, nj = i + di, j + dj
            wi, wj = ni // M0, nj // M1
            key = (ni % M0, nj % M1)
            if not component[key]:
                continue
            new = (li + wi, lj + wj)
            if key not in lift:
                lift[key] = new
                queue.append(key)
            elif lift[key] != new:
                return True
    return False


@dataclass
class SigmaB:
    b: float
    mask: np.ndarray
    n_components: int
    contains_min: bool
    is_connected: bool
    is_simply_connected: bool
    lambda1_min_on_mask: float
    lambda0_min_off_mask: float

    @property
    def lower_bound_witness(self) -> float:
        """Lower bound of the fibre operator on the complement of the quasi band."""
        return min(self.lambda1_min_on_mask, self.lambda0_min_off_mask)

    def to_dict(self) -> dict:
        return {"b": self.b, "n_nodes": int(self.mask.sum()),
                "n_components": self.n_components, "contains_min": self.contains_min,
                "is_connected": self.is_connected,
                "is_simply_connected": self.is_simply_connected,
                "lambda1_min_on_mask": self.lambda1_min_on_mask,
                "lambda0_min_off_mask": self.lambda0_min_off_mask,
                "lower_bound_witness": self.lower_bound_witness}


def sigma_b(bands: BandStructure, b: float, minimum: MinimumReport | None = None) -> SigmaB:
    lam = bands.lambda0
    if not 0 < b < lam.max():
        raise ValueError("b must lie in (0, max lambda_0)")
    mask = lam < b
    labels = periodic_components(mask)
    n = int(labels.max())
    node = minimum.node if minimum is not None else np.unravel_index(np.argmin(lam), lam.shape)
    contains = bool(mask[node])
    simply = False
    if n == 1 and contains:
        comp = labels == labels[node]
        holes = periodic_components(~comp).max()
        simply = (not _wraps(comp)) and holes <= 1
    l1 = float(bands.bands[..., 1][mask].min()) if mask.any() else np.inf
    l0 = float(lam[~mask].min()) if (~mask).any() else np.inf
    return SigmaB(b, mask, n, contains, n == 1 and contains, simply, l1, l0)
