import numpy as np
import pytest

from qwannier import pipeline
from conftest import TORUS_L


def test_torus_momenta_mask(mathieu_setup):
    m = pipeline.torus_momenta_mask(mathieu_setup, TORUS_L)
    assert m.sum() == TORUS_L ** 2
    th = mathieu_setup.bands.thetas[m]
    np.testing.assert_allclose(th * TORUS_L, np.round(th * TORUS_L), atol=1e-12)
    with pytest.raises(ValueError):
        pipeline.torus_momenta_mask(mathieu_setup, 15)


def test_torus_kernel_diagnostics(torus_kernels):
    tk = torus_kernels(0.02)
    assert tk.flux_quanta == 16
    # raw asymmetry of the dressed matrix before symmetrisation
    assert tk.kernel.hermiticity_residual < 1e-5
    assert tk.frame_defect < 1e-2
    r, d = tk.kernel.decay()
    assert d[-1] < 1e-2 * d[0]


def test_band_deviation_small(mathieu_setup, torus_kernels):
    bd = pipeline.band_deviation(mathieu_setup, torus_kernels(0.02))
    assert bd.n_nodes > 10
    assert bd.sup_deviation < 0.02


def test_constant_field_only(mathieu_setup, B0_torus):
    from qwannier.magphase import FieldSpec
    with pytest.raises(ValueError):
        pipeline.torus_kernel(mathieu_setup, FieldSpec(B0=B0_torus, epsilon=0.02, kappa=0.5))
