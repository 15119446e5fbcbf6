import numpy as np
import pytest
from hypothesis import given, strategies as st

from qwannier import bloch
from qwannier.lattice import Lattice2D


def mathieu_1d_band(v, t, cutoff=12):
    """Lowest eigenvalue of -d^2 + 2 v cos x at quasi-momentum t (1D plane waves)."""
    m = np.arange(-cutoff, cutoff + 1)
    H = np.diag((t + m) ** 2.0) + v * (np.eye(len(m), k=1) + np.eye(len(m), k=-1))
    return np.linalg.eigvalsh(H)[0]


@pytest.fixture(scope="module")
def free_bands():
    return bloch.compute_bands(bloch.free(), 16, 4.0, n_bands=2)


def test_free_band_is_folded_parabola(free_bands):
    th = free_bands.thetas
    G = np.array([[i, j] for i in (-1, 0, 1) for j in (-1, 0, 1)], dtype=float)
    ref = np.min(np.sum((th[..., None, :] + G) ** 2, axis=-1), axis=-1)
    np.testing.assert_allclose(free_bands.lambda0, ref, atol=1e-12)
    assert free_bands.shift == pytest.approx(0.0, abs=1e-14)


def test_mathieu_band_separates():
    data = bloch.mathieu(0.1)
    b = bloch.compute_bands(data, 8, 6.0, n_bands=2)
    th = b.thetas.reshape(-1, 2)
    mu = np.array([mathieu_1d_band(0.1, t) for t in th[:, 0]])
    raw = mu + th[:, 1] ** 2
    np.testing.assert_allclose(b.lambda0.ravel() + b.shift, raw, atol=1e-10)


@given(st.floats(-0.5, 0.5), st.floats(-0.5, 0.5))
def test_bloch_matrix_hermitian_with_vector_potential(t1, t2):
    data = bloch.stripe_field(0.7)
    H = bloch.assemble_bloch_hamiltonian(np.array([t1, t2]), data, 3.0)
    assert np.abs(H - H.conj().T).max() < 1e-12


def test_gauge_periodicity_of_bands():
    data = bloch.lowsym(0.3)
    b = bloch.compute_bands(data, 8, 5.0, n_bands=2)
    th = np.array([0.13, -0.31])
    np.testing.assert_allclose(b.eigen(th), b.eigen(th + data.lattice.estar1), atol=1e-7)


def test_non_conjugate_symmetric_table_rejected():
    with pytest.raises(ValueError):
        bloch.PeriodicData(Lattice2D.square(), V={(1, 0): 0.1})


def test_small_grid_rejected():
    with pytest.raises(ValueError):
        bloch.compute_bands(bloch.free(), 4, 3.0)


def test_mathieu_minimum_and_hessian():
    b = bloch.compute_bands(bloch.mathieu(0.1), 32, 5.0, n_bands=3)
    m = bloch.find_minimum(b)
    np.testing.assert_allclose(m.theta0, 0, atol=1e-8)
    # d^2 mu / dt^2 at t = 0 from the independent 1D solver
    h = 1e-3
    d2 = (mathieu_1d_band(0.1, h) - 2 * mathieu_1d_band(0.1, 0) + mathieu_1d_band(0.1, -h)) / h ** 2
    np.testing.assert_allclose(np.diag(m.hessian), [d2, 2.0], rtol=1e-4)
    assert m.is_unique and m.is_nondegenerate


def test_two_minima_are_flagged():
    b = bloch.compute_bands(bloch.stripe_field(1.5), 32, 4.0, n_bands=2)
    m = bloch.find_minimum(b)
    assert not m.is_unique and m.n_local_minima == 2


def test_free_minimum_hessian():
    b = bloch.compute_bands(bloch.free(), 16, 4.0)
    m = bloch.find_minimum(b)
    np.testing.assert_allclose(m.hessian, 2 * np.eye(2), atol=1e-6)


def test_sigma_b_is_a_disc():
    b = bloch.compute_bands(bloch.mathieu(0.1), 32, 5.0, n_bands=3)
    m = bloch.find_minimum(b)
    s = bloch.sigma_b(b, 0.12, m)
    assert s.is_simply_connected and s.contains_min
    assert s.lower_bound_witness >= 0.12
    # a level above the width of the band wraps around the torus
    s2 = bloch.sigma_b(b, 0.3, m)
    assert not s2.is_simply_connected
    with pytest.raises(ValueError):
        bloch.sigma_b(b, -1.0, m)


def test_periodic_components_wrap():
    mask = np.zeros((6, 6), dtype=bool)
    mask[0, 2] = mask[5, 2] = True
    assert bloch.periodic_components(mask).max() == 1
