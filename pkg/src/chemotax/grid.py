"""Uniform node-centred grid on [0, L] and nodal state fields."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = ["Grid", "StateField"]


@dataclass(frozen=True)
class Grid:
    n_cells: int
    length: float

    def __post_init__(self):
        if int(self.n_cells) != self.n_cells or self.n_cells < 2:
            raise ValueError(f"n_cells must be an integer >= 2, got {self.n_cells}")
        if not self.length > 0:
            raise ValueError(f"length must be positive, got {self.length}")

    @property
    def spacing(self) -> float:
        return self.length / self.n_cells

    @property
    def n_nodes(self) -> int:
        return self.n_cells + 1

    @property
    def nodes(self) -> np.ndarray:
        return np.arange(self.n_nodes) * self.spacing

    @property
    def weights(self) -> np.ndarray:
        """Trapezoid quadrature weights (h/2 at the ends, h inside)."""
        w = np.full(self.n_nodes, self.spacing)
        w[0] = w[-1] = 0.5 * self.spacing
        return w

    def integrate(self, f: np.ndarray) -> float:
        return float(np.dot(self.weights, f))

    def cosine(self, k: int) -> np.ndarray:
        return np.cos(k * np.pi * self.nodes / self.length)

    def laplacian_eigenvalue(self, k: int) -> float:
        """Eigenvalue of the discrete Neumann Laplacian for mode ``k``: (4/h^2) sin^2(k pi h / 2L)."""
        h = self.spacing
        return 4.0 / h**2 * np.sin(k * np.pi * h / (2.0 * self.length)) ** 2


@dataclass
class StateField:
    u: np.ndarray
    v: np.ndarray

    def __post_init__(self):
        self.u = np.asarray(self.u, dtype=float)
        self.v = np.asarray(self.v, dtype=float)
        if self.u.shape != self.v.shape or self.u.ndim != 1:
            raise ValueError("u and v must be 1-D arrays of equal length")
        if not (np.all(np.isfinite(self.u)) and np.all(np.isfinite(self.v))):
            raise ValueError("state contains non-finite entries")

    @classmethod
    def constant(cls, grid: Grid, u: float, v: float) -> "StateField":
        return cls(np.full(grid.n_nodes, float(u)), np.full(grid.n_nodes, float(v)))

    @classmethod
    def from_vector(cls, z: np.ndarray) -> "StateField":
        z = np.asarray(z, dtype=float)
        return cls(z[0::2].copy(), z[1::2].copy())

    def to_vector(self) -> np.ndarray:
        """Interleaved unknowns (u0, v0, u1, v1, ...)."""
        z = np.empty(2 * self.u.size)
        z[0::2] = self.u
        z[1::2] = self.v
        return z

    def reflected(self) -> "StateField":
        return StateField(self.u[::-1].copy(), self.v[::-1].copy())

    def copy(self) -> "StateField":
        return StateField(self.u.copy(), self.v.copy())

    def __len__(self) -> int:
        return self.u.size
