"""Two-dimensional Bravais lattice geometry.

Conventions: the dual basis satisfies ``<estar_j, e_k> = 2*pi*delta_jk`` and the
elementary cell is the half-open parallelogram ``sum t_j e_j`` with
``t_j in [-1/2, 1/2)``.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class InvalidLatticeError(ValueError):
    pass


def wedge(u, v) -> float:
    """Return the scalar cross product ``u1*v2 - u2*v1``."""
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    return u[..., 0] * v[..., 1] - u[..., 1] * v[..., 0]


def dual_basis(e1, e2) -> tuple[np.ndarray, np.ndarray]:
    try:
        e = np.array([e1, e2], dtype=float)
    except ValueError as exc:
        raise InvalidLatticeError("generators must be 2-vectors") from exc
    if e.shape != (2, 2):
        raise InvalidLatticeError("generators must be 2-vectors")
    det = wedge(e[0], e[1])
    if not np.isfinite(det) or abs(det) < 1e-14 * max(1.0, np.abs(e).max() ** 2):
        raise InvalidLatticeError(f"degenerate generators {e.tolist()}")
    # rows of estar solve estar @ e.T = 2 pi I
    estar = 2 * np.pi * np.linalg.inv(e).T
    return estar[0].copy(), estar[1].copy()


@dataclass(frozen=True)
class Lattice2D:
    e1: np.ndarray
    e2: np.ndarray
    estar1: np.ndarray = field(init=False)
    estar2: np.ndarray = field(init=False)

    def __post_init__(self):
        object.__setattr__(self, "e1", np.asarray(self.e1, dtype=float))
        object.__setattr__(self, "e2", np.asarray(self.e2, dtype=float))
        s1, s2 = dual_basis(self.e1, self.e2)
        object.__setattr__(self, "estar1", s1)
        object.__setattr__(self, "estar2", s2)

    @classmethod
    def square(cls, a: float = 2 * np.pi) -> "Lattice2D":
        return cls(np.array([a, 0.0]), np.array([0.0, a]))

    @property
    def basis(self) -> np.ndarray:
        """Generators as rows, shape (2, 2)."""
        return np.array([self.e1, self.e2])

    @property
    def dual(self) -> np.ndarray:
        return np.array([self.estar1, self.estar2])

    @property
    def cell_area(self) -> float:
        return abs(float(wedge(self.e1, self.e2)))

    @property
    def dual_cell_area(self) -> float:
        return abs(float(wedge(self.estar1, self.estar2)))

    def to_cartesian(self, coeffs) -> np.ndarray:
        """Map integer (or fractional) coefficients ``(..., 2)`` to points."""
        return np.asarray(coeffs, dtype=float) @ self.basis

    def dual_to_cartesian(self, coeffs) -> np.ndarray:
        return np.asarray(coeffs, dtype=float) @ self.dual

    def fractional(self, x) -> np.ndarray:
        """Coordinates ``t`` with ``x = t @ basis``."""
        return np.asarray(x, dtype=float) @ self.dual.T / (2 * np.pi)

    def dual_fractional(self, theta) -> np.ndarray:
        return np.asarray(theta, dtype=float) @ self.basis.T / (2 * np.pi)

    def cell_decompose(self, x) -> tuple[np.ndarray, np.ndarray]:
        """Split ``x = gamma + y`` with gamma integer coefficients, y in the cell.

        Returns ``(n, y)`` where ``n`` has integer dtype.
        """
        t = self.fractional(x)
        n = np.floor(t + 0.5)
        # points that land exactly on +1/2 after rounding noise roll forward
        r = t - n
        n = np.where(r >= 0.5, n + 1, n)
        n = np.where(r < -0.5, n - 1, n)
        y = np.asarray(x, dtype=float) - n @ self.basis
        return n.astype(np.int64), y


def lattice_points(radius: int) -> np.ndarray:
    """Integer pairs ``(n1, n2)`` with ``max(|n1|,|n2|) <= radius``, row-major."""
    r = np.arange(-radius, radius + 1)
    n1, n2 = np.meshgrid(r, r, indexing="ij")
    return np.stack([n1.ravel(), n2.ravel()], axis=1)
