"""Banded matrices and bordered solves by block elimination."""
from __future__ import annotations

import logging

import numpy as np
import scipy.sparse as sp
from scipy.linalg import LinAlgError, solve_banded
from scipy.sparse.linalg import spsolve

__all__ = ["BandedMatrix", "SingularSystem", "bordered_solve"]

log = logging.getLogger(__name__)


class SingularSystem(LinAlgError):
    pass


class BandedMatrix:
    """Square matrix stored in LAPACK band form: ab[u + i - j, j] = A[i, j]."""

    def __init__(self, ab: np.ndarray, lower: int, upper: int):
        self.ab = ab
        self.lower = lower
        self.upper = upper

    @classmethod
    def from_entries(cls, n, rows, cols, vals, lower, upper):
        rows = np.asarray(rows)
        cols = np.asarray(cols)
        off = upper + rows - cols
        if np.any(off < 0) or np.any(off > lower + upper):
            raise ValueError("entry outside the declared band")
        ab = np.zeros((lower + upper + 1, n))
        np.add.at(ab, (off, cols), vals)
        return cls(ab, lower, upper)

    @property
    def n(self) -> int:
        return self.ab.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self.n, self.n

    def to_sparse(self) -> sp.csr_matrix:
        diags, offsets = [], []
        for d in range(-self.lower, self.upper + 1):
            row = self.upper - d
            if d >= 0:
                diags.append(self.ab[row, d:])
            else:
                diags.append(self.ab[row, : self.n + d])
            offsets.append(d)
        return sp.diags(diags, offsets, shape=self.shape, format="csr")

    def to_dense(self) -> np.ndarray:
        return self.to_sparse().toarray()

    def matvec(self, x: np.ndarray) -> np.ndarray:
        return self.to_sparse() @ x

    def __matmul__(self, x):
        return self.matvec(x)

    def max_abs(self) -> float:
        return float(np.max(np.abs(self.ab)))

    def add_diagonal(self, value) -> "BandedMatrix":
        ab = self.ab.copy()
        ab[self.upper] += value
        return BandedMatrix(ab, self.lower, self.upper)

    def scaled(self, factor: float) -> "BandedMatrix":
        return BandedMatrix(self.ab * factor, self.lower, self.upper)

    def solve(self, b: np.ndarray) -> np.ndarray:
        try:
            x = solve_banded((self.lower, self.upper), self.ab, b, check_finite=False)
        except LinAlgError as exc:
            raise SingularSystem(str(exc)) from exc
        if not np.all(np.isfinite(x)):
            raise SingularSystem("banded solve produced non-finite values")
        return x


def bordered_solve(A: BandedMatrix, B, C, D, f, g):
    """Solve [[A, B], [C, D]] [x; y] = [f; g] with m = len(g) border rows.

    Block elimination on the banded factor, one step of iterative refinement,
    and a sparse direct solve of the full system when A itself is singular or
    elimination loses accuracy.
    """
    B = np.asarray(B, dtype=float).reshape(A.n, -1)
    C = np.asarray(C, dtype=float).reshape(-1, A.n)
    D = np.atleast_2d(np.asarray(D, dtype=float))
    f = np.asarray(f, dtype=float)
    g = np.atleast_1d(np.asarray(g, dtype=float))
    m = B.shape[1]

    def residual(x, y):
        r1 = A.matvec(x) + B @ y - f
        r2 = C @ x + D @ y - g
        return np.concatenate([r1, r2])

    def eliminate(f_, g_):
        rhs = np.column_stack([f_, B])
        sol = A.solve(rhs)
        xf, xb = sol[:, 0], sol[:, 1:]
        schur = D - C @ xb
        y = np.linalg.solve(schur, g_ - C @ xf)
        return xf - xb @ y, y

    scale = max(np.max(np.abs(f)) if f.size else 0.0, np.max(np.abs(g)), 1e-300)
    try:
        x, y = eliminate(f, g)
        r = residual(x, y)
        if np.max(np.abs(r)) > 1e-10 * scale:
            dx, dy = eliminate(-r[: A.n], -r[A.n :])
            x, y = x + dx, y + dy
            r = residual(x, y)
        if np.all(np.isfinite(r)) and np.max(np.abs(r)) <= 1e-8 * scale:
            return x, y
    except (SingularSystem, np.linalg.LinAlgError):
        pass
    log.debug("bordered solve: falling back to sparse LU of the full system")
    full = sp.bmat([[A.to_sparse(), sp.csr_matrix(B)], [sp.csr_matrix(C), sp.csr_matrix(D)]], format="csc")
    sol = spsolve(full, np.concatenate([f, g]))
    if not np.all(np.isfinite(sol)):
        raise SingularSystem("bordered system is singular")
    return sol[: A.n], sol[A.n :].reshape(m)
