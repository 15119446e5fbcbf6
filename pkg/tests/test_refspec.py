import numpy as np
import pytest
import scipy.sparse.linalg as spla

from qwannier import bloch, feshbach as fs, refspec as rs
from qwannier.lattice import Lattice2D
from qwannier.magphase import FieldSpec

FREE = bloch.free()


def dirichlet_levels(N, h, count):
    k = np.arange(1, N + 1)
    d = 4 / h ** 2 * np.sin(np.pi * k / (2 * (N + 1))) ** 2
    return np.sort(np.add.outer(d, d).ravel())[:count]


def test_free_box_matches_dirichlet_formula():
    op = rs.discretize(FREE, FieldSpec(epsilon=0.0), 2, 12, shift=0.0)
    N = op.window.shape[0]
    w = np.linalg.eigvalsh(op.matrix.toarray())[:6]
    np.testing.assert_allclose(w, dirichlet_levels(N, op.h, 6), rtol=1e-12)


def test_fd_bloch_free_dispersion():
    h = 2 * np.pi / 12
    for th in ([0.0, 0.0], [0.2, -0.1], [0.5, 0.3]):
        th = np.array(th)
        lam = rs.fd_bloch_bands(FREE, 12, th[None], 1)[0, 0]
        ref = np.sum(2 - 2 * np.cos(th * h)) / h ** 2
        assert lam == pytest.approx(ref, abs=1e-12)


def test_fd_minimum_close_to_plane_wave():
    data = bloch.mathieu(0.1)
    fd = rs.fd_band_minimum(data, 12)
    pw = bloch.compute_bands(data, 8, 6.0).shift
    np.testing.assert_allclose(fd.theta0, 0, atol=1e-5)
    assert abs(fd.lambda_min - pw) < 1e-3


def test_small_n_rejected():
    with pytest.raises(ValueError):
        rs.discretize(FREE, FieldSpec(), 4, 8)


def test_landau_levels_free():
    f = FieldSpec(B0=1.0, epsilon=0.05)
    op = rs.discretize(FREE, f, 8, 12, shift=0.0)
    ws = rs.low_spectrum(op, 2.5 * f.b, margin_cells=2.0, k0=40)
    near = ws.eigenvalues[np.abs(ws.eigenvalues - f.b) < 0.5 * f.b]
    assert len(near) >= 3
    np.testing.assert_allclose(near, f.b, rtol=3e-3)


def test_plaquette_flux_and_gauge_error():
    f = FieldSpec(B0=0.5, epsilon=0.1, kappa=0.8)
    op = rs.discretize(bloch.stripe_field(0.3), f, 4, 12)
    assert op.plaquette_residual() < 1e-10
    with pytest.raises(rs.GaugeError):
        rs.discretize(FREE, f, 4, 12, shift=0.0, flux_tol=-1.0)


def test_gauge_invariance_of_spectrum():
    f = FieldSpec(B0=0.5, epsilon=0.1, kappa=0.5)
    op = rs.discretize(bloch.mathieu(0.1), f, 3, 12)
    chi = rs.random_gauge(op.window, np.random.default_rng(0))
    op2 = op.gauge_transformed(chi)
    assert op2.plaquette_residual() < 1e-10
    w1 = np.linalg.eigvalsh(op.matrix.toarray())[:30]
    w2 = np.linalg.eigvalsh(op2.matrix.toarray())[:30]
    np.testing.assert_allclose(w1, w2, atol=1e-9)


def test_dress_on_grid_matches_dense():
    op = rs.discretize(bloch.mathieu(0.1), FieldSpec(B0=0.5, epsilon=0.05), 2, 12)
    H = op.matrix.toarray()
    w, V = np.linalg.eigh(H)
    Q = V[:, :4] + 0.05 * V[:, 4:8]
    Q, _ = np.linalg.qr(Q)
    d = rs.dress_on_grid(op, Q)
    Qp = np.linalg.svd(np.eye(len(H)) - Q @ Q.conj().T)[0][:, :len(H) - 4]
    beta = 0.5 * np.linalg.eigvalsh(Qp.conj().T @ H @ Qp).min()
    ref = fs.dress(fs.FeshbachInput.from_basis(H, Q, beta, check=False))
    # the dense route picks its own basis of ran P: compare spectra
    np.testing.assert_allclose(d.spectrum(), ref.spectrum(), atol=1e-9)
    assert rs._perp_lowest(op, Q) == pytest.approx(2 * beta, rel=1e-7)


def test_torus_flux_and_landau_degeneracy():
    lat = Lattice2D.square()
    L = 4
    B0 = rs.quantized_B0(0.25, L, 4, lat)
    f = FieldSpec(B0=B0, epsilon=0.25)
    op = rs.discretize_torus(FREE, f, L, 12, shift=0.0)
    assert rs.torus_plaquette_residual(op) < 1e-10
    H = op.matrix
    assert abs(H - H.conj().T).max() < 1e-12
    w = np.sort(spla.eigsh(H, k=6, sigma=-0.01, which="LM", return_eigenvectors=False,
                           v0=np.ones(H.shape[0], complex)))
    # four flux quanta: the lowest Landau level is four-fold degenerate
    np.testing.assert_allclose(w[:4], f.b, rtol=5e-3)
    assert w[4] > 2 * f.b
    with pytest.raises(rs.GaugeError):
        rs.discretize_torus(FREE, FieldSpec(B0=rs.quantized_B0(0.25, L, 3, lat), epsilon=0.25), L, 12)
    with pytest.raises(ValueError):
        rs.discretize_torus(FREE, f.with_(kappa=0.1), L, 12)
