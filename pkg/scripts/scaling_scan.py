"""Scaling scans behind acceptance criteria 5-8.

    python scripts/scaling_scan.py wannier   [--crystal mathieu|lowsym]
    python scripts/scaling_scan.py band      [--crystal mathieu|lowsym] [--L 16]
    python scripts/scaling_scan.py spectra   [--cells 14]
    python scripts/scaling_scan.py gaps      [--R 15]

Each prints a table; ``--csv PATH`` also writes it.
"""
import argparse
import csv
import sys
import time

import numpy as np

from qwannier import bloch, effective as ef, magwannier as mw, pipeline, refspec as rs
from qwannier.magphase import FieldSpec

CRYSTALS = {"mathieu": (bloch.mathieu, 0.1, 0.12), "lowsym": (bloch.lowsym, 0.4, 0.1)}


def setup(name):
    preset, v, b = CRYSTALS[name]
    s = pipeline.prepare(preset(v), grid=64, cutoff=5.0, b=b, grid_per_cell=12)
    s.shift()
    return s


def torus_B0(s, L):
    # even flux quanta at eps = 0.01 (8 for L = 16); the other eps are multiples
    return rs.quantized_B0(0.01, L, 2 * int(round(L * L / 64)), s.data.lattice)


def scan_wannier(a):
    s = setup(a.crystal)
    rows = []
    for e in (0.04, 0.02, 0.01):
        fam = mw.build_epsilon_family(s.psi0, FieldSpec(epsilon=e), mw.TruncatedLattice(8, 3))
        rows.append(["eps", e, 0.0, fam.F_deviation(True) / e, fam.F_deviation() / e])
    win = mw.GridWindow((5 + 6) * s.n, s.n, s.data.lattice)
    for e in (0.04, 0.02):
        f = FieldSpec(epsilon=e)
        fam = mw.build_epsilon_family(s.psi0, f, mw.TruncatedLattice(5, 2), column_reach=16)
        for k in (0.25, 0.5):
            fk = mw.build_projection(fam, f.with_(kappa=k), win)
            rows.append(["kappa", e, k, fk.F_deviation(True) / (k * e), fk.F_deviation() / (k * e)])
    return ["part", "eps", "kappa", "ratio_interior", "ratio_all"], rows


def scan_band(a):
    s = setup(a.crystal)
    B0 = torus_B0(s, a.L)
    rows, prev = [], None
    for e in (0.04, 0.02, 0.01):
        tk = pipeline.torus_kernel(s, FieldSpec(B0=B0, epsilon=e), a.L)
        d = pipeline.band_deviation(s, tk).sup_deviation
        rows.append([e, d, d / e, prev / d if prev else np.nan, tk.kernel.hermiticity_residual])
        prev = d
    return ["eps", "sup_deviation", "over_eps", "halving_ratio", "kernel_asymmetry"], rows


def scan_spectra(a):
    s = setup("mathieu")
    B0 = torus_B0(s, 16)
    rows = []
    for e in (0.04, 0.02):
        k = pipeline.torus_kernel(s, FieldSpec(B0=B0, epsilon=e), 16).kernel
        for kap in (0.0, 0.5):
            c = pipeline.window_spectra(s, k, FieldSpec(B0=B0, epsilon=e, kappa=kap), N=3, cells=a.cells)
            rows.append([e, kap, c.distance, c.distance / (kap * e + e ** 2), len(c.H_eigs), len(c.M_eigs)])
    return ["eps", "kappa", "d_H", "ratio", "n_H", "n_M"], rows


def scan_gaps(a):
    s = setup("mathieu")
    B0 = torus_B0(s, 16)
    rows = []
    for e in (0.03, 0.015):
        f = FieldSpec(B0=B0, epsilon=e)
        k = pipeline.torus_kernel(s, f, 16).kernel
        M = ef.build_magnetic_matrix(k, f, mw.TruncatedLattice(a.R, 3))
        pred = ef.landau_predictor(s.minimum, f, 4).levels - s.minimum.lambda_min
        win = (0.0, float(pred[3]))
        rep = ef.detect_islands(ef.matrix_window_spectrum(M, win), win, e * B0 / 4)
        for j, c in enumerate(rep.centers[:3]):
            g = rep.gap_widths[j] if j < len(rep.gap_widths) else np.nan
            rows.append([e, j, c, pred[j], g, g / e])
    return ["eps", "island", "centre", "landau_prediction", "gap_above", "gap_over_eps"], rows


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.split("\n")[0])
    p.add_argument("scan", choices=("wannier", "band", "spectra", "gaps"))
    p.add_argument("--crystal", choices=tuple(CRYSTALS), default="mathieu")
    p.add_argument("--L", type=int, default=16)
    p.add_argument("--cells", type=int, default=14)
    p.add_argument("--R", type=int, default=15)
    p.add_argument("--csv", default=None)
    a = p.parse_args(argv)
    t = time.perf_counter()
    header, rows = {"wannier": scan_wannier, "band": scan_band,
                    "spectra": scan_spectra, "gaps": scan_gaps}[a.scan](a)
    w = csv.writer(sys.stdout)
    w.writerow(header)
    w.writerows([[f"{x:.6g}" if isinstance(x, float) else x for x in r] for r in rows])
    if a.csv:
        with open(a.csv, "w", newline="") as fh:
            csv.writer(fh).writerows([header] + rows)
    print(f"# {time.perf_counter() - t:.0f} s", file=sys.stderr)


if __name__ == "__main__":
    main()
