"""End-to-end chains shared by the command line, scripts and acceptance tests.

* :func:`prepare` builds bands, minimum, ``Sigma_b``, the glued section and
  ``psi0`` for a periodic crystal.
* :func:`torus_kernel` dresses the finite-difference ``H^eps`` with the
  ``phi^eps`` family on a magnetic torus (constant field, flux quantized)
  and reads off ``k^eps``; covariance is exact there, so the kernel carries
  no wall truncation.
* :func:`box_dressing` does the same on a Dirichlet box for any ``(eps, kappa)``.
* :func:`window_spectra` compares ``sigma(H^{eps,kappa})`` and
  ``sigma(M^{eps,kappa})`` on a common geometric window.
"""
from __future__ import annotations

from dataclasses import dataclass, field as dfield

import numpy as np

from . import bloch, effective, magwannier as mw, refspec, wannier
from .feshbach import hausdorff
from .magphase import FieldSpec


@dataclass
class Setup:
    data: bloch.PeriodicData
    bands: bloch.BandStructure
    minimum: bloch.MinimumReport
    sigma: bloch.SigmaB
    section: wannier.BlochSection
    psi0: wannier.WannierFunction
    fd_shift: float | None = None
    _fd_lambda0: np.ndarray | None = dfield(default=None, repr=False)

    @property
    def n(self) -> int:
        return self.psi0.grid_per_cell

    def shift(self) -> float:
        if self.fd_shift is None:
            self.fd_shift = refspec.fd_band_minimum(self.data, self.n).lambda_min
        return self.fd_shift

    def eigen_region(self) -> np.ndarray:
        """Nodes where the glued section is the Bloch eigenvector."""
        return self.section.agrees_mask & self.sigma.mask

    def fd_lambda0(self) -> np.ndarray:
        """Lowest finite-difference Bloch band (shifted) on ``Sigma_b`` nodes, NaN elsewhere."""
        if self._fd_lambda0 is None:
            mask = self.sigma.mask
            out = np.full(mask.shape, np.nan)
            out[mask] = refspec.fd_bloch_bands(self.data, self.n, self.bands.thetas[mask], 1)[:, 0]
            self._fd_lambda0 = out - self.shift()
        return self._fd_lambda0


def prepare(data: bloch.PeriodicData, grid: int = 64, cutoff: float = 5.0, b: float = 0.12,
            grid_per_cell: int = 12, workers: int = 1) -> Setup:
    bands = bloch.compute_bands(data, grid, cutoff, n_bands=3, workers=workers)
    minimum = bloch.find_minimum(bands)
    sigma = bloch.sigma_b(bands, b, minimum)
    section, psi0 = wannier.build_quasi_wannier(bands, minimum, sigma, grid_per_cell=grid_per_cell)
    return Setup(data, bands, minimum, sigma, section, psi0)


@dataclass
class TorusKernel:
    kernel: effective.HoppingKernel
    field: FieldSpec
    L: int
    flux_quanta: int
    frame_defect: float
    hp_norm: float
    Htilde: np.ndarray
    sites: np.ndarray

    def diagnostics(self) -> dict:
        r, d = self.kernel.decay()
        return {"L": self.L, "flux_quanta": self.flux_quanta, "frame_defect": self.frame_defect,
                "hp_norm": self.hp_norm, "hermiticity": self.kernel.hermiticity_residual,
                "decay": d.tolist(), "epsilon": self.field.epsilon, "B0": self.field.B0}


def torus_kernel(setup: Setup, field: FieldSpec, L: int = 16, family_radius: int = 8) -> TorusKernel:
    """``k^eps(gamma) = <phi_gamma, H_tilde phi_0>`` on the ``L x L`` magnetic torus.

    Sites with ``|gamma_j| = L/2`` are ambiguous on the torus and dropped.
    """
    if field.kappa != 0:
        raise ValueError("torus kernels are constant-field only")
    lat = setup.data.lattice
    nq = refspec.flux_quanta(field, L, lat)
    fam = mw.build_epsilon_family(setup.psi0, field, mw.TruncatedLattice(family_radius, 3))
    op = refspec.discretize_torus(setup.data, field, L, setup.n, shift=setup.shift())
    grid = op.window
    Phi = mw.torus_columns(fam, grid) * np.sqrt(grid.weight)
    S = Phi.conj().T @ Phi
    Q = Phi @ mw.inverse_sqrt(S)
    d = refspec.dress_on_grid(op, Q)
    sites = grid.sites()
    o = int(np.where((sites == 0).all(axis=1))[0][0])
    raw = {tuple(g): complex(d.Htilde[i, o]) for i, g in enumerate(sites.tolist())
           if max(abs(g[0]), abs(g[1])) < L // 2}
    herm = max(abs(v - np.conj(raw[(-g[0], -g[1])])) for g, v in raw.items())
    k = {g: 0.5 * (v + np.conj(raw[(-g[0], -g[1])])) for g, v in raw.items()}
    kern = effective.HoppingKernel(k, field.epsilon, lat, 0.0, float(herm))
    return TorusKernel(kern, field, L, int(round(nq)), float(np.abs(S - np.eye(len(S))).max()),
                       d.hp_norm, d.Htilde, sites)


def torus_momenta_mask(setup: Setup, L: int) -> np.ndarray:
    """Band-mesh nodes that are torus momenta ``theta = m e* / L``."""
    M = setup.bands.M
    if M % L:
        raise ValueError("band mesh must be a multiple of L")
    sub = np.zeros((M, M), dtype=bool)
    start = (M // 2) % (M // L)
    sub[start::M // L, start::M // L] = True
    return sub


@dataclass
class BandDeviation:
    epsilon: float
    sup_deviation: float
    argmax: tuple
    n_nodes: int

    def to_dict(self) -> dict:
        return {"epsilon": self.epsilon, "sup_deviation": self.sup_deviation,
                "argmax": list(self.argmax), "n_nodes": self.n_nodes}


def band_deviation(setup: Setup, tk: TorusKernel) -> BandDeviation:
    """``sup |lambda_bar^eps - lambda_0|`` over torus momenta in the eigen-region.

    ``lambda_0`` is the finite-difference Bloch band of the same
    discretization; restricting to torus momenta avoids Fourier
    interpolation of the truncated kernel.
    """
    mask = setup.eigen_region() & torus_momenta_mask(setup, tk.L)
    lb = effective.band_function(tk.kernel, setup.bands.thetas)
    c = effective.compare_band_to_bloch(lb, setup.fd_lambda0(), mask)
    return BandDeviation(tk.field.epsilon, c.sup_deviation, c.argmax, c.n_nodes)


# ---------------------------------------------------------------- window spectra

@dataclass
class SpectraComparison:
    field: FieldSpec
    window: tuple
    H_eigs: np.ndarray
    M_eigs: np.ndarray
    distance: float

    def to_dict(self) -> dict:
        return {"field": self.field.to_dict(), "window": list(self.window),
                "H_eigs": self.H_eigs.tolist(), "M_eigs": self.M_eigs.tolist(),
                "distance": self.distance}


def window_spectra(setup: Setup, kernel: effective.HoppingKernel, field: FieldSpec,
                   N: int = 3, cells: int = 14, margin_cells: float = 2.0) -> SpectraComparison:
    """``d_H`` of ``sigma(H^{eps,kappa})`` and ``sigma(M^{eps,kappa})`` in ``[0, N eps]``.

    Both operators live on the same square region: the FD box of ``cells``
    cells and the lattice sites ``|n_j| <= cells/2 - 1``; eigenpairs with
    more than 20% mass within ``margin_cells`` of the edge are dropped on
    both sides.
    """
    E = N * field.epsilon
    op = refspec.discretize(setup.data, field, cells, setup.n, shift=setup.shift())
    hs = refspec.low_spectrum(op, E, margin_cells=margin_cells, threshold=0.8)
    R = cells // 2 - 1
    lat = mw.TruncatedLattice(R, int(np.ceil(margin_cells)))
    M = effective.build_magnetic_matrix(kernel.truncated(min(kernel.support_radius, 2 * R)), field, lat)
    ms = effective.matrix_window_spectrum(M, (0.0, E))
    return SpectraComparison(field, (0.0, E), hs.eigenvalues, ms, hausdorff(hs.eigenvalues, ms))
