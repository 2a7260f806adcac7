"""Smooth energy parts ``J0`` and their restrictions to single blocks.

Every smooth part offers ``value``, ``gradient``, ``hessian`` on the whole
vector and ``local(w, k)``, which returns the function
``xi -> J0(w + P_k xi) - J0(w)`` on block ``k``.  Local restrictions only
touch the matrix rows (or difference terms) coupled to the block.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .core import BlockSparseMatrix, BlockStructure, UsageError


class LocalQuadratic:
    """``xi -> <g, xi> + 1/2 <A xi, xi>`` on a single block."""

    def __init__(self, matrix: np.ndarray, grad: np.ndarray):
        self.matrix = matrix
        self.grad = grad

    def value(self, xi):
        return float(self.grad @ xi + 0.5 * xi @ (self.matrix @ xi))

    def gradient(self, xi):
        return self.grad + self.matrix @ xi

    def hessian(self, xi):
        return self.matrix

    def directional(self, xi, d):
        """Slope and curvature of ``t -> value(xi + t d)`` at ``t = 0``."""
        Ad = self.matrix @ d
        return float((self.grad + self.matrix @ xi) @ d), float(d @ Ad)


class LocalDifference:
    """``xi -> sum_i w_i (gamma(s_i + c_i . xi) - gamma(s_i))`` on a single block."""

    def __init__(self, density, weights, coeffs, shifts):
        self.density = density
        self.weights = weights
        self.coeffs = coeffs
        self.shifts = shifts
        self._base = density.value(shifts)

    def value(self, xi):
        z = self.shifts + self.coeffs @ xi
        return float(self.weights @ (self.density.value(z) - self._base))

    def gradient(self, xi):
        z = self.shifts + self.coeffs @ xi
        return self.coeffs.T @ (self.weights * self.density.d1(z))

    def hessian(self, xi):
        z = self.shifts + self.coeffs @ xi
        return self.coeffs.T @ ((self.weights * self.density.d2(z))[:, None] * self.coeffs)

    def directional(self, xi, d):
        z = self.shifts + self.coeffs @ xi
        cd = self.coeffs @ d
        return (float(self.weights @ (self.density.d1(z) * cd)),
                float(self.weights @ (self.density.d2(z) * cd * cd)))

    def curvature_bound(self) -> np.ndarray:
        """``sum_i L w_i c_i c_i^T`` with ``L`` the Lipschitz constant of ``gamma'``."""
        lw = self.density.lipschitz * self.weights
        return self.coeffs.T @ (lw[:, None] * self.coeffs)


class QuadraticSmooth:
    """``J0(v) = 1/2 <A v, v> - <b, v>`` with a symmetric block-sparse ``A``."""

    def __init__(self, A: BlockSparseMatrix, b=None):
        self.A = A
        self.structure = A.structure
        self.b = np.zeros(A.shape[0]) if b is None else np.asarray(b, dtype=float)
        if self.b.shape != (A.shape[0],):
            raise UsageError("right-hand side does not match the matrix")

    def value(self, v):
        return float(0.5 * v @ (self.A.csr @ v) - self.b @ v)

    def gradient(self, v):
        return self.A.csr @ v - self.b

    def hessian(self, v=None):
        return self.A

    def local(self, w, k) -> LocalQuadratic:
        cols, rows = self.A.row_blocks[k]
        sl = self.structure.slice(k)
        grad = rows @ w[cols] - self.b[sl]
        return LocalQuadratic(self.A.diagonal_blocks[k], grad)


@dataclass(frozen=True)
class MinimalSurfaceDensity:
    """``gamma(z) = sqrt(1 + z^2)``; ``gamma''`` is bounded by 1."""

    lipschitz: float = 1.0

    @staticmethod
    def value(z):
        return np.sqrt(1.0 + np.square(z))

    @staticmethod
    def d1(z):
        return z / np.sqrt(1.0 + np.square(z))

    @staticmethod
    def d2(z):
        return (1.0 + np.square(z)) ** -1.5


class DifferenceEnergy:
    """``J0(v) = sum_i w_i gamma(D_i v + c_i)`` for scalar rows ``D_i``.

    The affine shifts ``c`` carry Dirichlet boundary values folded into the
    difference quotients.
    """

    def __init__(self, structure: BlockStructure, D, weights, shifts, density):
        self.structure = structure
        self.D = sp.csr_matrix(D, dtype=float)
        if self.D.shape[1] != structure.n:
            raise UsageError("difference operator does not match the structure")
        self.weights = np.asarray(weights, dtype=float)
        self.shifts = np.asarray(shifts, dtype=float)
        self.density = density
        csc = self.D.tocsc()
        self._local_rows = []
        for k in range(structure.num_blocks):
            sl = structure.slice(k)
            rows = np.unique(csc[:, sl].indices)
            sub = self.D[rows]
            cols = np.unique(sub.indices)
            self._local_rows.append(
                (rows, cols, sub[:, cols].toarray(), sub[:, sl].toarray()))

    def _args(self, v):
        return self.D @ v + self.shifts

    def value(self, v):
        return float(self.weights @ self.density.value(self._args(v)))

    def gradient(self, v):
        return self.D.T @ (self.weights * self.density.d1(self._args(v)))

    def hessian(self, v):
        curv = self.weights * self.density.d2(self._args(v))
        H = (self.D.T @ sp.diags(curv) @ self.D).tocsr()
        return BlockSparseMatrix(self.structure, 0.5 * (H + H.T))

    def local(self, w, k) -> LocalDifference:
        rows, cols, coupling, coeffs = self._local_rows[k]
        shifts = coupling @ w[cols] + self.shifts[rows]
        return LocalDifference(self.density, self.weights[rows], coeffs, shifts)

    def curvature_bound(self) -> sp.csr_matrix:
        """Global ``sum_i L w_i D_i^T D_i``."""
        lw = self.density.lipschitz * self.weights
        return (self.D.T @ sp.diags(lw) @ self.D).tocsr()


def max_eigenvalue(A: BlockSparseMatrix) -> float:
    """Largest eigenvalue of a symmetric matrix (dense below 400 unknowns)."""
    n = A.shape[0]
    if A.csr.nnz == 0:
        return 0.0
    if n <= 400:
        return float(np.linalg.eigvalsh(A.toarray())[-1])
    from scipy.sparse.linalg import eigsh
    return float(eigsh(A.csr, k=1, which="LA", return_eigenvectors=False)[0])
