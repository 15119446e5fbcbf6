import numpy as np
import pytest
from hypothesis import given, strategies as st

from qwannier import feshbach as fs

H2 = np.array([[2.0, 1.0], [1.0, 4.0]])
P2 = np.diag([1.0, 0.0])


def test_two_by_two_closed_forms():
    inp = fs.FeshbachInput(H2, P2, beta=2.0)
    assert fs.schur_complement(inp, 0.0)[0, 0] == pytest.approx(1.75)
    # S vanishes at the lower eigenvalue of H
    assert abs(fs.schur_complement(inp, 3 - np.sqrt(2))[0, 0]) < 1e-12
    res = fs.dress(inp)
    assert res.Y[0, 0] == pytest.approx(17 / 16)
    assert res.Htilde[0, 0] == pytest.approx(28 / 17)
    cert = fs.verify_window_bound(inp, res, 1.9)
    assert cert.distance == pytest.approx(28 / 17 - (3 - np.sqrt(2)))
    assert cert.bound == pytest.approx(5 * 1.9 ** 2 / 8)
    assert cert.passed


def test_input_validation():
    with pytest.raises(fs.InvalidInputError):
        fs.FeshbachInput(np.array([[1.0, 2.0], [0.0, 1.0]]), P2, 0.1)
    with pytest.raises(fs.InvalidInputError):
        fs.FeshbachInput(H2, np.array([[1.0, 1.0], [0.0, 0.0]]), 0.1)
    with pytest.raises(fs.InvalidInputError):
        fs.FeshbachInput(H2, P2, beta=2.5)  # perp block 4 < 2 beta
    inp = fs.FeshbachInput(H2, P2, beta=2.0)
    with pytest.raises(fs.OutOfWindowError):
        fs.schur_complement(inp, 4.0)
    with pytest.raises(fs.OutOfWindowError):
        fs.verify_window_bound(inp, fs.dress(inp), 2.0)


@given(st.integers(0, 2**32 - 1), st.integers(1, 6), st.booleans())
def test_schur_identity_and_window_bound(seed, rank, complex_):
    rng = np.random.default_rng(seed)
    beta = float(rng.uniform(0.3, 2.0))
    inp = fs.random_instance(rng, n=12, rank=rank, beta=beta, complex_=complex_)
    ev = np.linalg.eigvalsh(inp.H)
    assert ev.min() > -1e-10
    for E in (0.0, 0.5 * beta, 0.9 * beta):
        if np.abs(ev - E).min() < 1e-2 * beta:
            continue
        lhs = inp.Q.conj().T @ np.linalg.solve(inp.H - E * np.eye(12), inp.Q)
        rhs = np.linalg.inv(fs.schur_complement(inp, E))
        assert np.linalg.norm(lhs - rhs, 2) < 1e-9 * max(1.0, np.linalg.norm(rhs, 2))
    res = fs.dress(inp)
    assert fs.verify_window_bound(inp, res, 0.95 * beta, spec_H=ev).passed


@given(st.integers(0, 2**32 - 1))
def test_resolvent_route_matches_dense(seed):
    rng = np.random.default_rng(seed)
    inp = fs.random_instance(rng, n=10, rank=3, beta=1.0)
    ev = np.linalg.eigvalsh(inp.H)
    if ev.min() < 1e-3:
        return
    X = np.linalg.solve(inp.H, inp.Q)
    r1 = fs.dress(inp)
    r2 = fs.dress_from_resolvent(inp.Q.conj().T @ X, X.conj().T @ X)
    np.testing.assert_allclose(r2.Htilde, r1.Htilde, atol=1e-9)
    np.testing.assert_allclose(r2.Y, r1.Y, atol=1e-9)


def test_hausdorff_examples():
    assert fs.hausdorff([0, 1], [0.1]) == pytest.approx(0.9)
    assert fs.hausdorff([], []) == 0.0
    assert fs.hausdorff([1.0], []) == float("inf")
    assert fs.hausdorff([0.0, 2.0], [0.0, 2.0]) == 0.0


finite = st.lists(st.floats(-10, 10), min_size=1, max_size=8)


@given(finite, finite, finite)
def test_hausdorff_is_a_metric(a, b, c):
    d = fs.hausdorff
    assert d(a, b) == pytest.approx(d(b, a))
    assert d(a, a) == 0.0
    assert d(a, c) <= d(a, b) + d(b, c) + 1e-12


def _gap_family(etas):
    out = []
    rng = np.random.default_rng(3)
    C = 0.3 * rng.standard_normal((2, 4))
    for eta in etas:
        H = np.zeros((6, 6))
        H[:2, :2] = eta * np.diag([1.0, 3.0])
        H[2:, 2:] = 4 * np.eye(4)
        H[:2, 2:] = eta * C
        H[2:, :2] = eta * C.T
        out.append((eta, H, np.diag([1.0, 1, 0, 0, 0, 0])))
    return out


def test_gap_certificates_are_sound():
    fam = _gap_family([0.001, 0.005, 0.02])
    certs = fs.gap_certificate(fam, 1.5, 2.5)
    assert certs[0].certified and certs[0].C0 > 0
    for cert, (eta, H, _) in zip(certs, fam):
        if cert.certified:
            lo, hi = cert.interval
            ev = np.linalg.eigvalsh(H)
            assert not np.any((ev > lo) & (ev < hi))


def test_gap_certificate_reports_reduced_hit():
    fam = _gap_family([0.01])
    certs = fs.gap_certificate(fam, 0.5, 1.5)
    assert not certs[0].certified and "meets" in certs[0].diagnostic


def test_shrunken_gap():
    inp = fs.FeshbachInput(np.diag([0.1, 0.9, 5.0, 5.0]) + 0.01 * (np.eye(4, k=2) + np.eye(4, k=-2)),
                           np.diag([1.0, 1, 0, 0]), beta=2.0)
    res = fs.dress(inp)
    gap = fs.shrunken_gap(res, 0.2, 0.8, 1.0)
    assert gap is not None
    ev = np.linalg.eigvalsh(inp.H)
    assert not np.any((ev > gap[0]) & (ev < gap[1]))


def test_selftest_suite_small():
    recs = fs.selftest_suite(seed=1, n_instances=10, n=12)
    assert all(r["passed"] for r in recs)
    assert max(r["identity_residual"] for r in recs) < 1e-9
