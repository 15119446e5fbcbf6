"""Compare the radial gluing cutoff with the level-set variant on the Mathieu crystal.

    python scripts/levelset_compare.py [--levels 0.06 0.14]

Prints the effective-band deviation at eps = 0.04, 0.02, 0.01 for both cutoffs.
"""
import argparse

from qwannier import bloch, pipeline, refspec as rs, wannier
from qwannier.magphase import FieldSpec


def deviations(s, L=16):
    B0 = rs.quantized_B0(0.01, L, 8, s.data.lattice)
    return [pipeline.band_deviation(s, pipeline.torus_kernel(s, FieldSpec(B0=B0, epsilon=e), L)).sup_deviation
            for e in (0.04, 0.02, 0.01)]


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.split("\n")[0])
    p.add_argument("--levels", type=float, nargs=2, default=(0.06, 0.14))
    a = p.parse_args(argv)
    base = pipeline.prepare(bloch.mathieu(0.1), grid=64, cutoff=5.0, b=0.12, grid_per_cell=12)
    print("radial ", deviations(base))
    b1, b2 = a.levels
    sigma = bloch.sigma_b(base.bands, b2 + 1e-3, base.minimum)
    sec, psi = wannier.build_quasi_wannier(base.bands, base.minimum, sigma, grid_per_cell=12, levels=(b1, b2))
    ls = pipeline.Setup(base.data, base.bands, base.minimum, sigma, sec, psi)
    print("levels ", deviations(ls), "min |h|^2", sec.h_norm2.min())


if __name__ == "__main__":
    main()
