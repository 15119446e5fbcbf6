import numpy as np
import pytest
from hypothesis import given, strategies as st

from qwannier import effective as ef, magwannier as mw
from qwannier.bloch import MinimumReport
from qwannier.feshbach import hausdorff
from qwannier.lattice import Lattice2D
from qwannier.magphase import FieldSpec

SQ = Lattice2D.square()
NN = ef.HoppingKernel.nearest_neighbour()


def random_kernel(rng, radius=2):
    k = {}
    for g in mw.lattice_points(radius).tolist():
        g = tuple(g)
        if g in k:
            continue
        v = complex(rng.standard_normal(), rng.standard_normal()) / (1 + abs(g[0]) + abs(g[1])) ** 2
        mg = (-g[0], -g[1])
        if g == mg:
            v = complex(v.real)
        k[g] = v
        k[mg] = np.conj(v)
    return ef.HoppingKernel(k, 0.0, SQ)


def test_nearest_neighbour_band():
    th = np.array([[0.0, 0.0], [0.5, 0.0], [0.25, 0.1]])
    ref = 2 * np.cos(2 * np.pi * th[:, 0]) + 2 * np.cos(2 * np.pi * th[:, 1])
    np.testing.assert_allclose(ef.band_function(NN, th), ref, atol=1e-14)


@given(st.integers(0, 2**32 - 1))
def test_band_kernel_roundtrip(seed):
    k = random_kernel(np.random.default_rng(seed))
    M = 12
    s = (np.arange(M) - M // 2) / M
    th = np.stack(np.meshgrid(s, s, indexing="ij"), axis=-1)
    back = ef.kernel_from_band(ef.band_function(k, th), 2)
    for g, v in k.k.items():
        assert abs(back.k[g] - v) < 1e-12


def test_asymmetric_kernel_detected():
    k = ef.HoppingKernel({(1, 0): 1.0 + 0j}, 0.0, SQ)
    assert k.hermiticity() == 1.0
    with pytest.raises(ef.KernelAsymmetryError):
        ef.band_function(k, np.array([[0.1, 0.2]]))


def test_kernel_helpers():
    k = random_kernel(np.random.default_rng(0), 3)
    r, d = k.decay()
    assert len(r) == 4 and d[0] > 0
    assert k.truncated(1).support_radius == 1
    assert k.l1_radius(1e-12) == 3
    assert len(k.to_rows()) == 49


@given(st.integers(0, 2**32 - 1), st.floats(0.0, 0.1), st.floats(0.0, 1.0))
def test_magnetic_matrix_hermitian(seed, eps, kappa):
    k = random_kernel(np.random.default_rng(seed))
    M = ef.build_magnetic_matrix(k, FieldSpec(B0=0.5, epsilon=eps, kappa=kappa), mw.TruncatedLattice(4, 1))
    assert M.hermiticity_residual() < 1e-12


def test_magnetic_matrix_zero_field_is_toeplitz():
    k = random_kernel(np.random.default_rng(5))
    lat = mw.TruncatedLattice(3, 1)
    D = ef.build_magnetic_matrix(k, FieldSpec(epsilon=0.0), lat).dense()
    idx = lat.index()
    for g, v in k.k.items():
        assert D[idx[(g[0], g[1])], idx[(0, 0)]] == pytest.approx(v)


def test_kernel_overflow():
    with pytest.raises(ef.KernelOverflowError):
        ef.build_magnetic_matrix(random_kernel(np.random.default_rng(0), 5), FieldSpec(), mw.TruncatedLattice(2, 0))


def test_extract_kernel_recovers_covariant_matrix():
    k = random_kernel(np.random.default_rng(7))
    f = FieldSpec(B0=0.5, epsilon=0.03)
    lat = mw.TruncatedLattice(6, 2)
    H = ef.build_magnetic_matrix(k, f, lat).dense()
    got = ef.extract_kernel(H, lat, f, SQ)
    assert got.covariance_residual < 1e-12
    for g, v in k.k.items():
        assert abs(got.k[g] - v) < 1e-12


def test_hofstadter_half_flux_edges():
    edges = ef.rational_flux_spectrum(NN, 1, 2, mbz_grid=32).band_edges
    np.testing.assert_allclose(edges, [[-2 * np.sqrt(2), 0], [0, 2 * np.sqrt(2)]], atol=1e-12)


def test_hofstadter_third_flux_edges():
    edges = ef.rational_flux_spectrum(NN, 1, 3, mbz_grid=24).band_edges
    r3 = np.sqrt(3)
    np.testing.assert_allclose(edges, [[-1 - r3, -2], [1 - r3, r3 - 1], [2, 1 + r3]], atol=1e-12)


def test_zero_flux_is_the_band():
    edges = ef.rational_flux_spectrum(NN, 0, 1, mbz_grid=16).band_edges
    np.testing.assert_allclose(edges, [[-4, 4]], atol=1e-12)


def test_rational_flux_checks_field():
    f = FieldSpec(B0=1.0, epsilon=0.5 / (2 * np.pi))  # b |cell| = pi
    ef.rational_flux_spectrum(NN, 1, 2, 4, field=f)
    with pytest.raises(ef.FluxMismatchError):
        ef.rational_flux_spectrum(NN, 1, 3, 4, field=f)
    with pytest.raises(ValueError):
        ef.rational_flux_spectrum(NN, 2, 4, 4)


def test_truncated_matrix_approaches_half_flux_bands():
    f = FieldSpec(B0=1.0, epsilon=0.5 / (2 * np.pi))
    M = ef.build_magnetic_matrix(NN, f, mw.TruncatedLattice(12, 3))
    # the half-flux bands touch at 0: no gap for edge states to pollute, and
    # bulk states are extended, so no edge filtering here
    e = ef.matrix_window_spectrum(M, (-5, 5), max_edge_mass=1.0)
    exact = ef.rational_flux_spectrum(NN, 1, 2, 32).eigenvalues.ravel()
    assert hausdorff(e, exact) < 0.15


def test_butterfly_rows():
    rows = ef.butterfly(NN, q_max=3, mbz_grid=2)
    fluxes = sorted({r[0] for r in rows})
    np.testing.assert_allclose(fluxes, [0, 1 / 3, 1 / 2, 2 / 3, 1])
    assert min(r[1] for r in rows) >= -4 - 1e-12


def test_detect_islands_examples():
    rep = ef.detect_islands([0.1, 0.11, 0.12, 0.5, 0.52, 0.9, 2.0], (0.0, 1.0), 0.1)
    assert rep.islands == [(0.1, 0.12), (0.5, 0.52), (0.9, 0.9)]
    np.testing.assert_allclose(rep.gap_widths, [0.38, 0.38])
    assert ef.detect_islands([], (0, 1), 0.1).islands == []
    with pytest.raises(ValueError):
        ef.detect_islands([0.1], (1.0, 0.0), 0.1)


def _minimum(hess):
    return MinimumReport(np.zeros(2), 0.0, np.asarray(hess, float), True, True, 1.0, (0, 0), 1)


def test_landau_predictor_free_and_degenerate():
    f = FieldSpec(B0=0.5, epsilon=0.04)
    lp = ef.landau_predictor(_minimum(2 * np.eye(2)), f, 3)
    np.testing.assert_allclose(lp.levels, f.b * np.array([1, 3, 5]))
    aniso = ef.landau_predictor(_minimum(np.diag([2.0, 8.0])), f, 1)
    assert aniso.levels[0] == pytest.approx(2 * f.b)
    with pytest.raises(ef.DegenerateHessianError):
        ef.landau_predictor(_minimum(np.diag([2.0, 0.0])), f, 2)


def test_compare_and_ratios():
    c = ef.compare_band_to_bloch(np.array([[1.0, 2.0]]), np.array([[1.5, 0.0]]), np.array([[True, False]]))
    assert c.sup_deviation == 0.5 and c.n_nodes == 1
    assert ef.ratio_table({0.04: 4.0, 0.02: 2.0, 0.01: 1.0}) == [(0.04, 0.02, 2.0), (0.02, 0.01, 2.0)]
