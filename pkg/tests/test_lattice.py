import numpy as np
import pytest
from hypothesis import given, strategies as st

from qwannier.lattice import InvalidLatticeError, Lattice2D, dual_basis, lattice_points, wedge

coord = st.floats(-50, 50, allow_nan=False)
vec = st.tuples(coord, coord)


def test_square_dual_is_unit():
    lat = Lattice2D.square()
    np.testing.assert_allclose(lat.estar1, [1, 0], atol=1e-15)
    np.testing.assert_allclose(lat.estar2, [0, 1], atol=1e-15)
    assert lat.cell_area == pytest.approx(4 * np.pi ** 2)
    assert lat.cell_area * lat.dual_cell_area == pytest.approx((2 * np.pi) ** 2)


def test_degenerate_generators_rejected():
    with pytest.raises(InvalidLatticeError):
        Lattice2D(np.array([1.0, 2.0]), np.array([2.0, 4.0]))
    with pytest.raises(InvalidLatticeError):
        dual_basis([1.0, 0.0, 0.0], [0.0, 1.0])


@given(vec, vec)
def test_wedge_antisymmetric(u, v):
    assert wedge(u, v) == pytest.approx(-wedge(v, u), abs=1e-9)
    assert wedge(u, u) == 0.0


@given(st.floats(0.5, 3), st.floats(-2, 2), st.floats(0.5, 3))
def test_duality_relation(a, b, c):
    lat = Lattice2D(np.array([a, 0.0]), np.array([b, c]))
    np.testing.assert_allclose(lat.basis @ lat.dual.T, 2 * np.pi * np.eye(2), atol=1e-12)


@given(vec)
def test_cell_decompose_reconstructs(x):
    lat = Lattice2D(np.array([2.0, 0.3]), np.array([-0.4, 1.5]))
    n, y = lat.cell_decompose(np.array(x))
    np.testing.assert_allclose(lat.to_cartesian(n) + y, x, atol=1e-9)
    assert np.all(np.abs(lat.fractional(y)) <= 0.5 + 1e-12)


def test_lattice_points_order_and_count():
    p = lattice_points(2)
    assert p.shape == (25, 2)
    assert tuple(p[12]) == (0, 0)
    assert tuple(p[0]) == (-2, -2) and tuple(p[1]) == (-2, -1)
