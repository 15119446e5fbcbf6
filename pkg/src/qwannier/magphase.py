"""Magnetic phase factors.

Conventions: ``Lambda^A(x, y) = exp(-i * int_[x,y] A)`` along the oriented
segment and ``Omega^B(x, y, z) = exp(-i * int_<x,y,z> B)`` over the oriented
triangle.  The constant part ``eps*B0`` uses the transverse gauge
``A0(x) = (b/2)(-x2, x1)``; the slowly varying part ``kappa*A(eps*x)`` uses
the radial (Poincare) gauge ``A(y) = int_0^1 s B(s y) ds (-y2, y1)`` whose
curl is ``B``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .lattice import wedge

_GL_T, _GL_W = np.polynomial.legendre.leggauss(16)
_GL_T = 0.5 * (_GL_T + 1)
_GL_W = 0.5 * _GL_W


class QuadratureError(RuntimeError):
    pass


@dataclass(frozen=True)
class FieldSpec:
    """Field ``B^{eps,kappa}(x) = eps*B0 + kappa*eps*B(eps*x)``.

    The profile is ``B(y) = sum_j c_j cos(<q_j, y> + phi_j)``; a term with
    ``q = (0, 0)`` and ``phi = 0`` is a constant.
    """

    B0: float = 0.5
    profile: tuple = ((0.5, (0.0, 0.0), 0.0), (0.5, (1.0, 0.0), 0.0))
    epsilon: float = 0.0
    kappa: float = 0.0

    def __post_init__(self):
        if not self.B0 > 0:
            raise ValueError("B0 must be positive")
        prof = tuple((float(c), (float(q[0]), float(q[1])), float(ph)) for c, q, ph in self.profile)
        object.__setattr__(self, "profile", prof)

    def with_(self, **kw) -> "FieldSpec":
        d = dict(B0=self.B0, profile=self.profile, epsilon=self.epsilon, kappa=self.kappa)
        d.update(kw)
        return FieldSpec(**d)

    @property
    def b(self) -> float:
        """Constant flux density ``eps*B0``."""
        return self.epsilon * self.B0

    @property
    def profile_sup(self) -> float:
        return float(sum(abs(c) for c, _, _ in self.profile))

    def profile_B(self, y) -> np.ndarray:
        y = np.asarray(y, dtype=float)
        out = np.zeros(y.shape[:-1])
        for c, q, ph in self.profile:
            out = out + c * np.cos(y[..., 0] * q[0] + y[..., 1] * q[1] + ph)
        return out

    def total_B(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        return self.epsilon * self.B0 + self.kappa * self.epsilon * self.profile_B(self.epsilon * x)

    def to_dict(self) -> dict:
        return {"B0": self.B0, "profile": [[c, list(q), ph] for c, q, ph in self.profile],
                "epsilon": self.epsilon, "kappa": self.kappa}

    @classmethod
    def from_dict(cls, d) -> "FieldSpec":
        prof = tuple((c, tuple(q), ph) for c, q, ph in d.get("profile", cls.profile))
        return cls(B0=d.get("B0", 0.5), profile=prof, epsilon=d.get("epsilon", 0.0),
                   kappa=d.get("kappa", 0.0))


def _s_moment(u, ph):
    """``int_0^1 s cos(s u + ph) ds`` elementwise."""
    u = np.asarray(u, dtype=float)
    if ph == 0 and not np.any(u):
        return np.full(u.shape, 0.5)
    out = np.empty(u.shape)
    small = np.abs(u) < 1e-2
    big = ~small
    ub = u[big]
    out[big] = np.sin(ub + ph) / ub + (np.cos(ub + ph) - np.cos(ph)) / ub ** 2
    if small.any():
        # Taylor series of int_0^1 s exp(i s u) ds = sum (iu)^n / (n! (n+2))
        us = u[small]
        ser = np.zeros(us.shape, dtype=complex)
        term = np.ones(us.shape, dtype=complex)
        for k in range(8):
            ser = ser + term / (k + 2)
            term = term * 1j * us / (k + 1)
        out[small] = np.real(np.exp(1j * ph) * ser)
    return out


def _radial_weight(y, field: FieldSpec) -> np.ndarray:
    """``w(y) = int_0^1 s B(s y) ds`` so that ``A(y) = w(y) (-y2, y1)``."""
    y = np.asarray(y, dtype=float)
    w = np.zeros(y.shape[:-1])
    for c, q, ph in field.profile:
        w = w + c * _s_moment(y[..., 0] * q[0] + y[..., 1] * q[1], ph)
    return w


def profile_potential(y, field: FieldSpec) -> np.ndarray:
    """Radial-gauge potential ``A(y)`` of the profile, curl ``A = B``."""
    y = np.asarray(y, dtype=float)
    w = _radial_weight(y, field)
    return np.stack([-w * y[..., 1], w * y[..., 0]], axis=-1)


def lambda_const(x, y, b: float) -> np.ndarray:
    """Transverse-gauge phase ``exp(-i (b/2) x ^ y)``."""
    return np.exp(-0.5j * b * wedge(x, y))


def omega_const(x, y, z, b: float) -> np.ndarray:
    """Constant-field triangle factor ``exp(-i (b/2) (y-x) ^ (z-x))``."""
    x = np.asarray(x, dtype=float)
    return np.exp(-0.5j * b * wedge(np.asarray(y) - x, np.asarray(z) - x))


def profile_line_integral(x, y, field: FieldSpec) -> np.ndarray:
    """``int_[x,y] A(eps z) . dz`` by 16-point Gauss-Legendre.

    Along the segment ``z ^ (y - x) = x ^ y`` is constant, so the radial
    gauge reduces the integrand to ``eps (x ^ y) w(eps z)``.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    x, y = np.broadcast_arrays(x, y)
    d = y - x
    eps = field.epsilon
    acc = np.zeros(x.shape[:-1])
    for t, w in zip(_GL_T, _GL_W):
        acc = acc + w * _radial_weight(eps * (x + t * d), field)
    return eps * wedge(x, y) * acc


def lambda_tilde(x, y, field: FieldSpec) -> np.ndarray:
    """Slowly varying factor ``exp(-i kappa int_[x,y] A(eps z) dz)``."""
    if field.kappa == 0 or field.epsilon == 0:
        shape = np.broadcast_shapes(np.shape(x)[:-1], np.shape(y)[:-1])
        return np.ones(shape, dtype=complex)
    return np.exp(-1j * field.kappa * profile_line_integral(x, y, field))


def lambda_general(x, y, field: FieldSpec) -> np.ndarray:
    """``Lambda^{eps,kappa}(x, y)`` as the product of both factors."""
    return lambda_tilde(x, y, field) * lambda_const(x, y, field.b)


# collapsed (Duffy) tensor rule on the reference triangle
def _triangle_rule(n: int = 12):
    t, w = np.polynomial.legendre.leggauss(n)
    t = 0.5 * (t + 1)
    w = 0.5 * w
    U, V = np.meshgrid(t, t, indexing="ij")
    W = np.outer(w, w)
    # (u, v) -> (u, (1-u) v), Jacobian (1-u)
    return U.ravel(), ((1 - U) * V).ravel(), (W * (1 - U)).ravel()


_TRI = _triangle_rule()


def triangle_flux(x, y, z, field: FieldSpec) -> np.ndarray:
    """Oriented ``int_<x,y,z> B^{eps,kappa}``."""
    x, y, z = (np.asarray(a, dtype=float) for a in (x, y, z))
    x, y, z = np.broadcast_arrays(x, y, z)
    area2 = wedge(y - x, z - x)  # twice the signed area
    const = 0.5 * field.b * area2
    if field.kappa == 0 or field.epsilon == 0:
        return const
    u, v, w = _TRI
    pts = (x[..., None, :] + u[:, None] * (y - x)[..., None, :] + v[:, None] * (z - x)[..., None, :])
    prof = field.kappa * field.epsilon * field.profile_B(field.epsilon * pts)
    return const + area2 * np.sum(prof * w, axis=-1)


def omega_general(x, y, z, field: FieldSpec) -> np.ndarray:
    return np.exp(-1j * triangle_flux(x, y, z, field))


def flux_constant_estimate(x, y, z, field: FieldSpec) -> float:
    """Measured ``|Omega - 1| / (sup|B| |(y-x)^(z-x)|)`` (one triple)."""
    area = abs(float(wedge(np.subtract(y, x), np.subtract(z, x))))
    bmax = abs(field.b) + abs(field.kappa * field.epsilon) * field.profile_sup
    if area == 0 or bmax == 0:
        return 0.0
    return float(abs(omega_general(x, y, z, field) - 1) / (bmax * area))


def gauge_kernel_a(x, z, field: FieldSpec, n_quad: int = 16) -> np.ndarray:
    """``a(x, z) = int_0^1 s B(z + s(x-z)) ds (-(x-z)_2, (x-z)_1)``.

    Uses the total field ``B^{eps,kappa}``; its curl in ``x`` is ``B`` and it
    vanishes at ``x = z``.
    """
    x = np.asarray(x, dtype=float)
    z = np.asarray(z, dtype=float)
    x, z = np.broadcast_arrays(x, z)
    d = x - z
    t, w = np.polynomial.legendre.leggauss(n_quad)
    t = 0.5 * (t + 1)
    w = 0.5 * w
    m = np.zeros(d.shape[:-1])
    for s, ws in zip(t, w):
        m = m + ws * s * field.total_B(z + s * d)
    return np.stack([-m * d[..., 1], m * d[..., 0]], axis=-1)
