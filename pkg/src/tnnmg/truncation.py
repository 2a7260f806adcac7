"""Truncated correction spaces and the truncated gradient/Hessian.

The correction space is a product of per-block subspaces on which the
energy is twice differentiable near the current iterate.  Everything is
represented in full coordinates; the block-diagonal orthogonal projection
``Pi`` extends the restricted derivatives by zero.
"""

from __future__ import annotations

from functools import cached_property

import numpy as np
import scipy.sparse as sp

from .core import BlockSparseMatrix, BlockStructure, SeparableFunctional, UsageError
from .nonsmooth import DEFAULT_CURVATURE_CAP, DEFAULT_EPS, TruncationBlock


class TruncationPattern:
    """Per-block subspaces with their projection blocks."""

    def __init__(self, structure: BlockStructure, blocks: list[TruncationBlock]):
        if len(blocks) != structure.num_blocks:
            raise UsageError("one truncation block per structure block is required")
        self.structure = structure
        self.blocks = list(blocks)

    @classmethod
    def full(cls, structure: BlockStructure) -> "TruncationPattern":
        return cls(structure, [TruncationBlock.full(s) for s in structure.block_sizes])

    @cached_property
    def matrix(self) -> sp.csr_matrix:
        """Block-diagonal projection ``Pi`` as a sparse matrix."""
        n = self.structure.n
        N = self.structure.block_size
        if N is not None:
            P = np.stack([b.projection for b in self.blocks])
            k, r, c = np.nonzero(P)
            off = self.structure.offsets[k]
            return sp.csr_matrix((P[k, r, c], (off + r, off + c)), shape=(n, n))
        rows, cols, vals = [], [], []
        for k, blk in enumerate(self.blocks):
            o = int(self.structure.offsets[k])
            r, c = np.nonzero(blk.projection)
            rows.append(r + o)
            cols.append(c + o)
            vals.append(blk.projection[r, c])
        return sp.csr_matrix(
            (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(n, n))

    @property
    def rank(self) -> int:
        return sum(b.rank for b in self.blocks)

    @property
    def truncated_fraction(self) -> float:
        """Dimension of the orthogonal complement relative to ``n``."""
        return (self.structure.n - self.rank) / self.structure.n

    @property
    def is_full(self) -> bool:
        return all(b.kind == "full" for b in self.blocks)

    def project(self, v: np.ndarray) -> np.ndarray:
        return self.matrix @ self.structure.check(v)


def build_pattern(f: SeparableFunctional, u: np.ndarray, eps: float = DEFAULT_EPS,
                  curvature_cap: float = DEFAULT_CURVATURE_CAP) -> TruncationPattern:
    """Largest shipped subspace around ``u`` on which ``J`` is smooth."""
    return TruncationPattern(f.structure, f.truncation_blocks(u, eps, curvature_cap))


def project(pattern: TruncationPattern, v: np.ndarray) -> np.ndarray:
    return pattern.project(v)


def _nonsmooth_derivatives(f, u, pattern):
    """Gradient and block-diagonal Hessian of the terms on the pattern."""
    grad = np.zeros(f.n)
    rows, cols, vals = [], [], []
    for k, (term, blk) in enumerate(zip(f.terms, pattern.blocks)):
        if blk.kind == "empty" or not term.has_derivatives:
            continue
        sl = f.structure.slice(k)
        g, h = term.derivatives(u[sl], blk)
        grad[sl] = g
        r, c = np.nonzero(h)
        if r.size:
            rows.append(r + sl.start)
            cols.append(c + sl.start)
            vals.append(h[r, c])
    if rows:
        hess = sp.csr_matrix(
            (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
            shape=(f.n, f.n))
    else:
        hess = None
    return grad, hess


def truncated_gradient(f: SeparableFunctional, u: np.ndarray,
                       pattern: TruncationPattern) -> np.ndarray:
    """``Pi^T J'(u)``, zero outside the correction space."""
    grad, _ = _nonsmooth_derivatives(f, u, pattern)
    return pattern.matrix.T @ (f.gradient(u) + grad)


def truncated_hessian(f: SeparableFunctional, u: np.ndarray,
                      pattern: TruncationPattern) -> BlockSparseMatrix:
    """``Pi^T J''(u) Pi`` with the sparsity pattern of ``J0''(u)``."""
    H = f.hessian(u).csr
    _, extra = _nonsmooth_derivatives(f, u, pattern)
    if extra is not None:
        H = H + extra
    Pi = pattern.matrix
    Ht = (Pi.T @ H @ Pi).tocsr()
    return BlockSparseMatrix(f.structure, 0.5 * (Ht + Ht.T))
