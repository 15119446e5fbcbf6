import numpy as np
import pytest
from hypothesis import given, strategies as st

from qwannier import magwannier as mw
from qwannier.magphase import FieldSpec, lambda_const

FIELD = FieldSpec(B0=0.5, epsilon=0.02)


@given(st.integers(1, 6), st.integers(0, 2**32 - 1))
def test_inverse_sqrt_property(n, seed):
    rng = np.random.default_rng(seed)
    X = rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n))
    G = X @ X.conj().T + 0.1 * np.eye(n)
    R = mw.inverse_sqrt(G)
    np.testing.assert_allclose(R, R.conj().T, atol=1e-12)
    np.testing.assert_allclose(R @ G @ R, np.eye(n), atol=1e-9)


def test_inverse_sqrt_rejects_singular():
    with pytest.raises(mw.IllConditionedFamilyError):
        mw.inverse_sqrt(np.diag([1.0, 0.0]))


def test_truncated_lattice():
    lat = mw.TruncatedLattice(4, 2)
    assert len(lat) == 81 and tuple(lat.sites[lat.origin_index]) == (0, 0)
    assert lat.interior.sum() == 25
    with pytest.raises(ValueError):
        mw.TruncatedLattice(1, 2)


def test_embed_shift(square):
    src = np.arange(49, dtype=complex).reshape(7, 7)
    win = mw.GridWindow(2, 1, square)
    out = mw.embed(src, 3, win, (1, 0))
    # out[j] = src[centre + j - shift]
    assert out[2, 2] == src[2, 3]
    assert out[0, 0] == src[0, 1]


def test_ring_column_against_dense_phase(mathieu_setup):
    w = mathieu_setup.psi0
    col = mw.ring_column(w, FIELD, 2)
    x = w.positions()
    n = w.grid_per_cell
    for d in [(1, 0), (1, -2), (0, 2)]:
        g = w.lattice.to_cartesian(d)
        shifted = mw._full_shift(w.samples, d[0] * n, d[1] * n)
        ring = lambda_const(x, g, FIELD.b) * shifted
        ref = np.vdot(ring, w.samples) * w.cell_weight
        assert abs(col[d] - ref) < 1e-12


@pytest.fixture(scope="module")
def eps_families(mathieu_setup):
    lat = mw.TruncatedLattice(6, 3)
    return {e: mw.build_epsilon_family(mathieu_setup.psi0, FieldSpec(B0=0.5, epsilon=e), lat)
            for e in (0.04, 0.02)}


def test_zero_field_family_is_trivial(mathieu_setup):
    fam = mw.build_epsilon_family(mathieu_setup.psi0, FieldSpec(epsilon=0.0), mw.TruncatedLattice(3, 1))
    assert fam.F_deviation() == 0.0
    assert fam.weighted_difference() == 0.0


def test_gram_covariance_exact(eps_families, square):
    for fam in eps_families.values():
        s = fam.lattice.sites
        X = square.to_cartesian(s)
        idx = fam.lattice.index()
        o = fam.lattice.origin_index
        for a in range(0, len(s), 7):
            for b in range(0, len(s), 5):
                d = tuple(s[a] - s[b])
                if d in idx:
                    pred = lambda_const(X[a], X[b], fam.field.b) * fam.gram[idx[d], o]
                    assert abs(fam.gram[a, b] - pred) < 1e-14
        np.testing.assert_allclose(fam.gram, fam.gram.conj().T, atol=1e-14)
        # F = G^{-1/2} of the truncated matrix is covariant up to edge effects
        assert fam.covariance_residual() < 2e-3


def test_F_deviation_order_eps(eps_families):
    r = {e: fam.F_deviation(interior_only=True) / e for e, fam in eps_families.items()}
    assert 0 < r[0.04] < 0.3 and 0 < r[0.02] < 0.3
    assert max(r.values()) / min(r.values()) < 3


def test_psi_eps_close_to_psi0(eps_families):
    fam = eps_families[0.02]
    assert abs(fam.norm() - 1) < 0.05
    assert fam.weighted_difference(0) < 0.5


def test_epsilon_level_orthonormal_on_interior(eps_families, square):
    fam = eps_families[0.04]
    win = mw.GridWindow(11 * 12, 12, square)
    lev = mw.epsilon_level(fam, win)
    assert lev.orthonormality_defect(interior_only=True) < 2e-4


def test_kappa_level(mathieu_setup, square):
    f = FieldSpec(B0=0.5, epsilon=0.04)
    fam = mw.build_epsilon_family(mathieu_setup.psi0, f, mw.TruncatedLattice(4, 2), column_reach=12)
    win = mw.GridWindow(9 * 12, 12, square)
    same = mw.build_projection(fam, f, win)
    assert same.F_deviation() == 0.0
    fk = mw.build_projection(fam, f.with_(kappa=0.5), win)
    assert 0 < fk.F_deviation(interior_only=True) / (0.5 * 0.04) < 1.0
    Q = mw.projection_basis(fk)
    np.testing.assert_allclose(Q.conj().T @ Q, np.eye(Q.shape[1]), atol=1e-10)
    with pytest.raises(ValueError):
        mw.build_projection(fam, f.with_(epsilon=0.02), win)


def test_window_overflow(mathieu_setup):
    with pytest.raises(mw.WindowOverflowError):
        mw.build_epsilon_family(mathieu_setup.psi0, FIELD, mw.TruncatedLattice(40, 2))
