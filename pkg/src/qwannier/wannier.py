"""Quasi-Wannier function from a globally smooth Bloch section.

The section equals the (phase-fixed) lowest Bloch eigenvector near the band
minimum and is glued, through a bump ``g``, to a smooth reference family built
from localized profiles.  Its inverse Bloch-Floquet transform is computed with
one FFT: nodes ``theta`` of an ``M x M`` grid together with the plane-wave
vectors ``G`` enumerate momenta ``theta + G`` on the lattice ``Gamma_* / M``.
"""
from __future__ import annotations

from collections import deque
from dataclasses import dataclass

import numpy as np

from .bloch import BandStructure, MinimumReport, SigmaB


class DegeneracyError(RuntimeError):
    pass


class GluingError(RuntimeError):
    pass


class WindowTooSmallError(RuntimeError):
    pass


def _reindex(vec: np.ndarray, basis, shift) -> np.ndarray:
    """Coefficients ``c'(G) = c(G + shift)``.

    If ``c`` represents a function at ``theta`` then ``c'`` represents the same
    function at ``theta - shift @ e*``.  Entries leaving the disc are dropped.
    """
    shift = tuple(int(s) for s in shift)
    if shift == (0, 0):
        return vec
    idx = basis.index()
    out = np.zeros_like(vec)
    for i, m in enumerate(basis.m.tolist()):
        j = idx.get((m[0] + shift[0], m[1] + shift[1]))
        if j is not None:
            out[i] = vec[j]
    return out


def _torus_steps(M):
    return ((1, 0), (-1, 0), (0, 1), (0, -1))


@dataclass
class PartialSection:
    vectors: np.ndarray  # (M, M, npw), zero off mask
    mask: np.ndarray
    root: tuple
    loop_holonomy: float  # max |phase defect| over grid plaquettes inside the mask


def eigen_section_on_sigma_b(bands: BandStructure, sigma: SigmaB,
                             minimum: MinimumReport | None = None,
                             gap_tol: float = 1e-8) -> PartialSection:
    """Phase-fixed lowest eigenvectors on the mask by spanning-tree transport."""
    M = bands.M
    mask = sigma.mask
    if mask.any():
        gaps = (bands.bands[..., 1] - bands.bands[..., 0])[mask]
        if gaps.min() < gap_tol:
            raise DegeneracyError(f"lambda_1 - lambda_0 = {gaps.min():.2e} inside the window")
    root = minimum.node if minimum is not None else np.unravel_index(
        np.argmin(bands.lambda0), bands.lambda0.shape)
    root = tuple(int(i) for i in root)
    basis = bands.basis
    vecs = np.zeros((M, M, len(basis)), dtype=complex)
    v0 = bands.vectors[root[0], root[1], :, 0].copy()
    big = np.argmax(np.abs(v0))
    v0 *= np.exp(-1j * np.angle(v0[big]))
    vecs[root] = v0
    done = np.zeros((M, M), dtype=bool)
    done[root] = True
    queue = deque([root])
    while queue:
        i, j = queue.popleft()
        for di, dj in _torus_steps(M):
            ni, nj = i + di, j + dj
            wrap = (ni // M, nj // M)
            key = (ni % M, nj % M)
            if not mask[key] or done[key]:
                continue
            # neighbour's coefficients seen from the parent's side of the torus
            w = _reindex(bands.vectors[key[0], key[1], :, 0], basis, wrap)
            ov = np.vdot(vecs[i, j], w)
            w = w * np.exp(-1j * np.angle(ov))
            vecs[key] = _reindex(w, basis, (-wrap[0], -wrap[1]))
            done[key] = True
            queue.append(key)
    # discrete holonomy around elementary plaquettes fully inside the mask
    hol = 0.0
    for i in range(M):
        for j in range(M):
            cyc = [(i, j), (i + 1, j), (i + 1, j + 1), (i, j + 1)]
            if not all(mask[a % M, b % M] for a, b in cyc):
                continue
            prod = 1.0 + 0j
            for (a, b), (c, d) in zip(cyc, cyc[1:] + cyc[:1]):
                u = _reindex(vecs[a % M, b % M], basis, (a // M, b // M))
                v = _reindex(vecs[c % M, d % M], basis, (c // M, d // M))
                ov = np.vdot(u, v)
                prod *= ov / abs(ov)
            hol = max(hol, abs(np.angle(prod)))
    return PartialSection(vecs, mask.copy(), root, hol)


def smooth_bump(rho, kind: str = "cinf") -> np.ndarray:
    """Radial cutoff: 1 for ``rho <= 1/2``, 0 for ``rho >= 1``."""
    rho = np.asarray(rho, dtype=float)
    t = np.clip(2 * rho - 1, 0.0, 1.0)
    if kind == "cinf":
        def phi(s):
            s = np.asarray(s, dtype=float)
            return np.where(s > 0, np.exp(-1 / np.where(s > 0, s, 1)), 0.0)
        a, b = phi(1 - t), phi(t)
        return a / (a + b)
    if kind == "poly":
        # (1 - rho^2)^3 renormalized to 1 at rho = 1/2 and clipped, smoothstep plateau
        p = (1 - np.clip(rho, 0, 1) ** 2) ** 3 / (0.75 ** 3)
        s = t * t * (3 - 2 * t)
        return np.clip(np.where(rho <= 0.5, 1.0, p * (1 - s)), 0.0, 1.0)
    raise ValueError(f"unknown bump kind {kind!r}")


@dataclass(frozen=True)
class ReferenceProfiles:
    """Two localized profiles, Gaussians of width ``sigma`` at ``centers``.

    Their periodizations are orthogonalized (Gram-Schmidt) at every theta so
    the two reference sections are orthonormal exactly, as required by the
    overlap argument.
    """

    centers: tuple = ((0.12, 0.0), (-0.12, 0.0))  # fractional cell coordinates
    sigma: float = 0.2  # fraction of the shortest generator

    def coefficients(self, bands: BandStructure) -> np.ndarray:
        """Shape (2, M, M, npw): orthonormal reference sections."""
        lat = bands.data.lattice
        th = bands.thetas  # (M, M, 2)
        k = th[:, :, None, :] + bands.basis.G[None, None, :, :]
        a = min(np.linalg.norm(lat.e1), np.linalg.norm(lat.e2))
        sig = self.sigma * a
        out = []
        for c in self.centers:
            x = lat.to_cartesian(c)
            f = np.exp(-0.5 * sig ** 2 * np.einsum("...i,...i->...", k, k) - 1j * (k @ x))
            out.append(f)
        f1, f2 = out
        f1 = f1 / np.linalg.norm(f1, axis=-1, keepdims=True)
        f2 = f2 - np.sum(f1.conj() * f2, axis=-1, keepdims=True) * f1
        f2 = f2 / np.linalg.norm(f2, axis=-1, keepdims=True)
        return np.stack([f1, f2])


@dataclass
class BlochSection:
    values: np.ndarray  # (M, M, npw), unit norm
    eigvecs: np.ndarray  # phase-fixed eigenvectors actually glued (zero off the mask)
    agrees_mask: np.ndarray  # nodes with g == 1
    g: np.ndarray
    h_norm2: np.ndarray  # squared norm of the unnormalized glued vector
    reference_index: int
    radius: float
    overlap_at_min: tuple
    max_overlap_on_ball: float
    bands: BandStructure

    @property
    def M(self):
        return self.bands.M

    def projector_gradient(self) -> float:
        """Max finite-difference norm of ``d/dtheta |psi><psi|`` over the grid."""
        M = self.M
        basis = self.bands.basis
        step = np.linalg.norm(self.bands.data.lattice.dual, axis=1) / M
        best = 0.0
        for axis in range(2):
            for i in range(M):
                for j in range(M):
                    a = self.values[i, j]
                    ni, nj = (i + 1, j) if axis == 0 else (i, j + 1)
                    wrap = (ni // M, nj // M)
                    b = _reindex(self.values[ni % M, nj % M], basis, wrap)
                    ov = abs(np.vdot(a, b)) ** 2
                    # Hilbert-Schmidt distance of rank-one projectors
                    d = np.sqrt(max(0.0, 2 - 2 * ov)) / step[axis]
                    best = max(best, d)
        return best


def _torus_distance(frac_nodes, frac0, lattice):
    d = frac_nodes - frac0
    d = d - np.round(d)
    return np.linalg.norm(lattice.dual_to_cartesian(d), axis=-1)


def glue_global_section(partial: PartialSection, bands: BandStructure,
                        minimum: MinimumReport, radius: float | None = None,
                        profiles: ReferenceProfiles = ReferenceProfiles(),
                        bump: str = "cinf", align: str = "reference",
                        levels: tuple | None = None) -> BlochSection:
    """Glue the partial eigen-section to a reference section with a bump.

    The default cutoff is radial: support ``B_r(theta0)``, plateau
    ``B_{r/2}(theta0)``.  With ``levels=(b1, b2)`` it follows the sublevel
    sets of ``lambda_0`` instead: ``g = 1`` on ``Sigma_b1``, support in
    ``Sigma_b2`` (``b2`` at most the ``b`` of the partial section's mask), so
    that the section is the eigenvector on all of ``Sigma_b1``.

    ``align="reference"`` re-gauges the eigenvectors on the bump support so
    that their overlap with the chosen reference section is real positive
    (a smooth phase choice whenever that overlap does not vanish on the
    ball); ``align="transport"`` keeps the spanning-tree phases.
    """
    lat = bands.data.lattice
    f = profiles.coefficients(bands)
    root = partial.root
    phi0 = partial.vectors[root]
    ov = tuple(float(abs(np.vdot(phi0, f[j][root]))) for j in range(2))
    if ov[0] <= 1 / np.sqrt(2):
        jref = 0
    elif ov[1] <= 1 / np.sqrt(2):
        jref = 1
    else:
        raise GluingError(f"both reference overlaps exceed 1/sqrt(2): {ov}")
    fj = f[jref]
    frac0 = lat.dual_fractional(minimum.theta0)
    dist = _torus_distance(bands.fractional_nodes, frac0, lat)
    overlaps = np.abs(np.sum(partial.vectors.conj() * fj, axis=-1))
    if levels is None:
        if radius is None:
            bad = (~partial.mask) | (overlaps > 0.75)
            radius = float(dist[bad].min()) if bad.any() else 0.5 * float(dist.max())
            radius *= 0.999
        inside = dist < radius
        rho = dist / radius
    else:
        b1, b2 = levels
        if not 0 < b1 < b2:
            raise ValueError("levels must satisfy 0 < b1 < b2")
        lam = bands.lambda0
        inside = partial.mask & (lam < b2)
        rho = 0.5 + 0.5 * np.clip((lam - b1) / (b2 - b1), -1.0, 1.0)
        if radius is None:
            radius = float(dist[inside].max()) if inside.any() else 0.0
    if np.any(inside & ~partial.mask):
        raise GluingError("bump support leaves Sigma_b")
    if np.any(inside & (overlaps > 0.75)):
        raise GluingError("overlap with the reference section exceeds 3/4 on the bump support")
    g = np.where(inside, smooth_bump(rho, bump), 0.0)
    phi = partial.vectors
    if align == "reference":
        c = np.sum(fj.conj() * phi, axis=-1)
        if inside.any() and np.abs(c[inside]).min() < 1e-3:
            raise GluingError("reference overlap vanishes on the ball; use align='transport'")
        ph = np.where(inside, np.exp(-1j * np.angle(np.where(inside, c, 1.0))), 1.0)
        phi = phi * ph[..., None]
    elif align != "transport":
        raise ValueError(f"unknown align mode {align!r}")
    h = g[..., None] * phi + (1 - g)[..., None] * fj
    n2 = np.sum(np.abs(h) ** 2, axis=-1)
    if n2.min() < 1 / 16:
        raise GluingError(f"glued vector too small: min |h|^2 = {n2.min():.3e}")
    values = h / np.sqrt(n2)[..., None]
    return BlochSection(values=values, agrees_mask=g >= 1.0, g=g, h_norm2=n2, eigvecs=phi,
                        reference_index=jref + 1, radius=radius, overlap_at_min=ov,
                        max_overlap_on_ball=float(overlaps[inside].max()) if inside.any() else 0.0,
                        bands=bands)


@dataclass
class WannierFunction:
    """Samples of a function on the periodic supercell of ``M x M`` cells.

    ``samples[a, b]`` is the value at fractional position
    ``((a - c)/n, (b - c)/n)`` with ``c = M*n//2``, so the origin is the
    central sample and lattice site ``(n1, n2)`` is sample ``(c + n1*n, c + n2*n)``.
    """

    samples: np.ndarray
    grid_per_cell: int
    M: int
    lattice: object
    boundary_mass: float = 0.0

    @property
    def window_radius(self) -> int:
        return self.M // 2

    @property
    def center(self) -> int:
        return self.M * self.grid_per_cell // 2

    @property
    def cell_weight(self) -> float:
        return self.lattice.cell_area / self.grid_per_cell ** 2

    def norm(self) -> float:
        return float(np.sqrt(np.sum(np.abs(self.samples) ** 2) * self.cell_weight))

    def positions(self) -> np.ndarray:
        L = self.M * self.grid_per_cell
        t = (np.arange(L) - self.center) / self.grid_per_cell
        T = np.stack(np.meshgrid(t, t, indexing="ij"), axis=-1)
        return self.lattice.to_cartesian(T)

    def translate(self, n, periodic: bool = False) -> np.ndarray:
        """Samples of ``psi(x - gamma)`` for integer coefficients ``n``."""
        s1, s2 = (int(n[0]) * self.grid_per_cell, int(n[1]) * self.grid_per_cell)
        out = np.roll(np.roll(self.samples, s1, 0), s2, 1)
        if not periodic:
            L = self.samples.shape[0]
            if s1 > 0:
                out[:s1] = 0
            elif s1 < 0:
                out[L + s1:] = 0
            if s2 > 0:
                out[:, :s2] = 0
            elif s2 < 0:
                out[:, L + s2:] = 0
        return out

    def inner(self, f, g) -> complex:
        return complex(np.vdot(f, g) * self.cell_weight)

    def cropped(self, radius_cells: int) -> np.ndarray:
        r = radius_cells * self.grid_per_cell
        c = self.center
        return self.samples[c - r:c + r + 1, c - r:c + r + 1]


def inverse_floquet(section: BlochSection, grid_per_cell: int = 16,
                    decay_tol: float | None = None) -> WannierFunction:
    """Real-space quasi-Wannier function, normalized to unit L2 norm."""
    bands = section.bands
    M = bands.M
    n = grid_per_cell
    K = np.abs(bands.basis.m).max()
    if n <= 2 * K + 1:
        raise ValueError(f"grid_per_cell must exceed 2*max|m|+1 = {2 * K + 1}")
    L = M * n
    a = np.zeros((L, L), dtype=complex)
    s_idx = np.arange(M) - M // 2
    # momentum index l = M*(s + m) with s = (i - M//2)/M
    l1 = s_idx[:, None, None] + M * bands.basis.m[None, None, :, 0]
    l2 = s_idx[None, :, None] + M * bands.basis.m[None, None, :, 1]
    l1 = np.broadcast_to(l1, section.values.shape)
    l2 = np.broadcast_to(l2, section.values.shape)
    np.add.at(a, (l1 % L, l2 % L), section.values)
    # psi(x_j) = C sum_l a_l exp(2 pi i l j / L), j measured from the centre sample
    psi = np.fft.ifft2(a) * L * L
    psi = np.fft.fftshift(psi)
    c = L // 2
    # fftshift puts x = 0 at index L//2 which is the centre convention
    assert c == M * n // 2
    cell_area = bands.data.lattice.cell_area
    psi = psi / (M * M * np.sqrt(cell_area))
    w = WannierFunction(psi, n, M, bands.data.lattice)
    nrm = w.norm()
    w.samples = psi / nrm
    w.boundary_mass = boundary_mass(w)
    if decay_tol is not None and w.boundary_mass > decay_tol:
        raise WindowTooSmallError(f"boundary mass {w.boundary_mass:.2e} > {decay_tol:.1e}; "
                                  "enlarge the theta grid")
    return w


def boundary_mass(w: WannierFunction, layer_cells: int = 1) -> float:
    """L2 mass in the outermost ``layer_cells`` ring of cells of the window."""
    L = w.samples.shape[0]
    r = layer_cells * w.grid_per_cell
    m = np.ones((L, L), dtype=bool)
    m[r:L - r, r:L - r] = False
    return float(np.sum(np.abs(w.samples[m]) ** 2) * w.cell_weight)


def translate_gram(w: WannierFunction, radius: int, periodic: bool = False) -> np.ndarray:
    """Gram matrix of translates ``psi_gamma`` with ``max|n_j| <= radius``."""
    from .lattice import lattice_points

    pts = lattice_points(radius)
    F = np.array([w.translate(p, periodic).ravel() for p in pts])
    return (F.conj() @ F.T) * w.cell_weight


@dataclass
class DecayTable:
    orders: list
    shells: np.ndarray  # outer radii of dyadic shells (cells)
    sup: np.ndarray  # (len(orders), n_shells)
    monotone: list

    def rows(self):
        out = []
        for k, m in enumerate(self.orders):
            for r, v in zip(self.shells, self.sup[k]):
                out.append([m, float(r), float(v)])
        return out


def decay_profile(psi: WannierFunction, orders=(0, 2, 4, 6)) -> DecayTable:
    x = psi.positions()
    a = min(np.linalg.norm(psi.lattice.e1), np.linalg.norm(psi.lattice.e2))
    r = np.linalg.norm(x, axis=-1) / a  # in cells
    rmax = psi.M / 2
    edges = [0.0, 0.5]
    while edges[-1] * 2 <= rmax:
        edges.append(edges[-1] * 2)
    if edges[-1] < rmax:
        edges.append(rmax)
    edges = np.array(edges)
    mod = np.abs(psi.samples)
    weight = np.sqrt(1 + (r * a) ** 2)
    sup = np.zeros((len(orders), len(edges) - 1))
    for s in range(len(edges) - 1):
        sel = (r >= edges[s]) & (r < edges[s + 1])
        for k, m in enumerate(orders):
            sup[k, s] = (weight[sel] ** m * mod[sel]).max() if sel.any() else 0.0
    mono = [bool(np.all(np.diff(sup[k, 1:]) <= 1e-300 + 0 * sup[k, 1:-1]) or
                 np.all(np.diff(sup[k, 1:]) <= 0)) for k in range(len(orders))]
    return DecayTable(list(orders), edges[1:], sup, mono)


def build_quasi_wannier(bands: BandStructure, minimum: MinimumReport, sigma: SigmaB,
                        grid_per_cell: int = 16, radius: float | None = None,
                        profiles: ReferenceProfiles = ReferenceProfiles(),
                        bump: str = "cinf", align: str = "reference",
                        levels: tuple | None = None):
    """Convenience pipeline: transport, glue, synthesize."""
    partial = eigen_section_on_sigma_b(bands, sigma, minimum)
    section = glue_global_section(partial, bands, minimum, radius, profiles, bump, align, levels)
    return section, inverse_floquet(section, grid_per_cell)
