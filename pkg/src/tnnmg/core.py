"""Block structures, block-sparse symmetric matrices and separable functionals.

Vectors are plain one-dimensional float64 arrays; a :class:`BlockStructure`
knows how to cut them into contiguous blocks.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
import scipy.sparse as sp


class UsageError(ValueError):
    """Invalid arguments or preconditions violated by the caller."""


class NumericError(ArithmeticError):
    """Non-finite values or a failed factorization."""


class InternalError(RuntimeError):
    """A solver stage broke one of its own guarantees (e.g. monotonicity)."""


@dataclass(frozen=True)
class BlockStructure:
    """Partition of ``n`` coefficients into ``M`` contiguous blocks."""

    block_sizes: tuple[int, ...]
    offsets: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        sizes = tuple(int(s) for s in self.block_sizes)
        if not sizes:
            raise UsageError("a block structure needs at least one block")
        if any(s < 1 for s in sizes):
            raise UsageError(f"block sizes must be positive, got {sizes}")
        object.__setattr__(self, "block_sizes", sizes)
        offsets = np.zeros(len(sizes) + 1, dtype=np.intp)
        np.cumsum(sizes, out=offsets[1:])
        offsets.flags.writeable = False
        object.__setattr__(self, "offsets", offsets)

    @classmethod
    def uniform(cls, num_blocks: int, block_size: int = 1) -> "BlockStructure":
        return cls((block_size,) * num_blocks)

    @property
    def num_blocks(self) -> int:
        return len(self.block_sizes)

    @property
    def n(self) -> int:
        return int(self.offsets[-1])

    @property
    def block_size(self) -> int | None:
        """Common block size, or None if the sizes differ."""
        first = self.block_sizes[0]
        return first if all(s == first for s in self.block_sizes) else None

    def slice(self, k: int) -> slice:
        return slice(int(self.offsets[k]), int(self.offsets[k + 1]))

    def block(self, v: np.ndarray, k: int) -> np.ndarray:
        """View of block ``k`` of ``v`` (writes go through to ``v``)."""
        return v[self.offsets[k]:self.offsets[k + 1]]

    def blocks(self, v: np.ndarray) -> list[np.ndarray]:
        return [self.block(v, k) for k in range(self.num_blocks)]

    def check(self, v) -> np.ndarray:
        v = np.asarray(v, dtype=float)
        if v.ndim != 1 or v.shape[0] != self.n:
            raise UsageError(
                f"vector of shape {v.shape} does not match structure with n={self.n}")
        return v

    def zeros(self) -> np.ndarray:
        return np.zeros(self.n)


class BlockSparseMatrix:
    """Square sparse matrix with a block structure on rows and columns.

    Entries live in a CSR matrix; blocks are extracted as small dense
    arrays on demand.  The per-block row data used by Gauss-Seidel type
    sweeps is cached, so instances should be treated as immutable.
    """

    def __init__(self, structure: BlockStructure, matrix):
        csr = sp.csr_matrix(matrix, dtype=float)
        n = structure.n
        if csr.shape != (n, n):
            raise UsageError(
                f"matrix of shape {csr.shape} does not match structure with n={n}")
        csr.sum_duplicates()
        csr.sort_indices()
        self.structure = structure
        self.csr = csr

    @classmethod
    def from_blocks(cls, structure: BlockStructure, blocks) -> "BlockSparseMatrix":
        """Assemble from a mapping ``(i, j) -> dense N_i x N_j block``."""
        rows, cols, vals = [], [], []
        off = structure.offsets
        for (i, j), blk in blocks.items():
            blk = np.asarray(blk, dtype=float)
            shape = (structure.block_sizes[i], structure.block_sizes[j])
            if blk.shape != shape:
                raise UsageError(f"block ({i},{j}) has shape {blk.shape}, expected {shape}")
            r, c = np.meshgrid(np.arange(shape[0]), np.arange(shape[1]), indexing="ij")
            rows.append((r + off[i]).ravel())
            cols.append((c + off[j]).ravel())
            vals.append(blk.ravel())
        n = structure.n
        if rows:
            coo = sp.coo_matrix(
                (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                shape=(n, n))
        else:
            coo = sp.coo_matrix((n, n))
        return cls(structure, coo)

    @classmethod
    def zeros(cls, structure: BlockStructure) -> "BlockSparseMatrix":
        return cls(structure, sp.csr_matrix((structure.n, structure.n)))

    @property
    def shape(self) -> tuple[int, int]:
        return self.csr.shape

    def apply(self, v: np.ndarray) -> np.ndarray:
        v = self.structure.check(v)
        return self.csr @ v

    def __matmul__(self, v):
        return self.apply(v)

    def toarray(self) -> np.ndarray:
        return self.csr.toarray()

    def block(self, i: int, j: int) -> np.ndarray:
        s = self.structure
        return self.csr[s.slice(i), s.slice(j)].toarray()

    @cached_property
    def row_blocks(self) -> list[tuple[np.ndarray, np.ndarray]]:
        """Per block row ``k``: (column indices, dense rows restricted to them)."""
        csr = self.csr
        indptr, indices, data = csr.indptr, csr.indices, csr.data
        off = self.structure.offsets
        out = []
        for k in range(self.structure.num_blocks):
            r0, r1 = off[k], off[k + 1]
            lo, hi = indptr[r0], indptr[r1]
            if r1 - r0 == 1:
                out.append((indices[lo:hi], data[lo:hi][None, :]))
                continue
            cols = np.unique(indices[lo:hi])
            dense = np.zeros((r1 - r0, cols.size))
            for r in range(r0, r1):
                a, b = indptr[r], indptr[r + 1]
                dense[r - r0, np.searchsorted(cols, indices[a:b])] = data[a:b]
            out.append((cols, dense))
        return out

    @cached_property
    def diagonal_stack(self) -> np.ndarray | None:
        """Diagonal blocks as an ``(M, N, N)`` array when all blocks have size ``N``."""
        s = self.structure
        N = s.block_size
        if N is None:
            return None
        base = s.offsets[:-1]
        out = np.empty((s.num_blocks, N, N))
        for i in range(N):
            for j in range(N):
                out[:, i, j] = np.asarray(self.csr[base + i, base + j]).ravel()
        return out

    @cached_property
    def diagonal_blocks(self) -> list[np.ndarray]:
        if self.diagonal_stack is not None:
            return list(self.diagonal_stack)
        s = self.structure
        out = []
        for k, (cols, rows) in enumerate(self.row_blocks):
            lo, hi = s.offsets[k], s.offsets[k + 1]
            blk = np.zeros((hi - lo, hi - lo))
            mask = (cols >= lo) & (cols < hi)
            blk[:, cols[mask] - lo] = rows[:, mask]
            out.append(blk)
        return out

    def diagonal_block(self, k: int) -> np.ndarray:
        return self.diagonal_blocks[k]

    def block_pattern(self) -> set[tuple[int, int]]:
        """Nonzero block positions; diagonal blocks are always included."""
        s = self.structure
        owner = np.repeat(np.arange(s.num_blocks), s.block_sizes)
        coo = self.csr.tocoo()
        pattern = set(zip(owner[coo.row].tolist(), owner[coo.col].tolist()))
        pattern.update((k, k) for k in range(s.num_blocks))
        return pattern

    def block_rows(self) -> list[list[tuple[int, np.ndarray]]]:
        """Per block row, the sorted list of (column block, dense block)."""
        rows: list[list[tuple[int, np.ndarray]]] = [[] for _ in range(self.structure.num_blocks)]
        for i, j in sorted(self.block_pattern()):
            rows[i].append((j, self.block(i, j)))
        return rows

    def symmetry_error(self) -> float:
        """max |A - A^T| relative to max |A| (0 for the zero matrix)."""
        diff = abs(self.csr - self.csr.T)
        scale = abs(self.csr).max() if self.csr.nnz else 0.0
        if scale == 0.0:
            return 0.0
        return float(diff.max()) / float(scale) if diff.nnz else 0.0

    def __repr__(self):
        return (f"BlockSparseMatrix(n={self.structure.n}, "
                f"blocks={self.structure.num_blocks}, nnz={self.csr.nnz})")


def apply(m: BlockSparseMatrix, v: np.ndarray) -> np.ndarray:
    return m.apply(v)


def galerkin_product(P, A: BlockSparseMatrix,
                     coarse: BlockStructure | None = None) -> BlockSparseMatrix:
    """Coarse matrix ``P^T A P``.

    ``coarse`` defaults to a uniform structure with the fine block size,
    which is what block-wise (Kronecker) prolongations produce.
    """
    P = sp.csr_matrix(P, dtype=float)
    if P.shape[0] != A.shape[0]:
        raise UsageError(f"prolongation with {P.shape[0]} rows cannot act on n={A.shape[0]}")
    if coarse is None:
        bs = A.structure.block_size
        if bs is None or P.shape[1] % bs:
            raise UsageError("cannot infer the coarse block structure")
        coarse = BlockStructure.uniform(P.shape[1] // bs, bs)
    elif coarse.n != P.shape[1]:
        raise UsageError("coarse structure does not match prolongation columns")
    Ac = (P.T @ A.csr @ P).tocsr()
    # symmetrize away round-off so the coarse operator is exactly symmetric
    Ac = 0.5 * (Ac + Ac.T)
    return BlockSparseMatrix(coarse, Ac)


@dataclass
class SeparableFunctional:
    """``J(v) = J0(v) + sum_k phi_k(v_k)`` over a block structure."""

    smooth: object
    terms: list
    structure: BlockStructure

    def __post_init__(self):
        self.terms = list(self.terms)
        if len(self.terms) != self.structure.num_blocks:
            raise UsageError(
                f"{len(self.terms)} nonsmooth terms for {self.structure.num_blocks} blocks")
        for k, (term, size) in enumerate(zip(self.terms, self.structure.block_sizes)):
            if term.size != size:
                raise UsageError(f"term {k} has size {term.size}, block has size {size}")
        # group equal-kind terms so they can be evaluated on stacked blocks
        groups: dict = {}
        for k, term in enumerate(self.terms):
            groups.setdefault(term.batch_key(), []).append(k)
        off = self.structure.offsets
        self._batches = []
        for ks in groups.values():
            ks = np.array(ks)
            size = self.terms[ks[0]].size
            index = off[ks][:, None] + np.arange(size)
            batch = type(self.terms[ks[0]]).make_batch([self.terms[k] for k in ks])
            self._batches.append((ks, index, batch))

    @property
    def n(self) -> int:
        return self.structure.n

    def nonsmooth_value(self, v: np.ndarray) -> float:
        total = 0.0
        for _, index, batch in self._batches:
            val = batch.value(v[index])
            if val == math.inf:
                return math.inf
            total += val
        return total

    def value(self, v: np.ndarray) -> float:
        v = self.structure.check(v)
        phi = self.nonsmooth_value(v)
        if phi == math.inf:
            return math.inf
        j0 = float(self.smooth.value(v))
        if not math.isfinite(j0):
            raise NumericError(f"smooth part evaluated to {j0}")
        return j0 + phi

    def is_feasible(self, v: np.ndarray) -> bool:
        return self.nonsmooth_value(self.structure.check(v)) < math.inf

    def project(self, v: np.ndarray) -> np.ndarray:
        """Block-wise Euclidean projection onto the closure of dom J."""
        v = self.structure.check(v)
        out = np.empty_like(v)
        for _, index, batch in self._batches:
            out[index] = batch.project(v[index])
        return out

    def max_step(self, v: np.ndarray, d: np.ndarray) -> float:
        """Largest ``t >= 0`` keeping ``v + t d`` in the domain (may be ``inf``)."""
        v, d = self.structure.check(v), self.structure.check(d)
        return min((batch.max_step(v[index], d[index]) for _, index, batch in self._batches),
                   default=math.inf)

    def truncation_blocks(self, v: np.ndarray, eps: float, curvature_cap: float) -> list:
        """Per-block truncation patterns at ``v``, in block order."""
        v = self.structure.check(v)
        out = [None] * self.structure.num_blocks
        for ks, index, batch in self._batches:
            for k, blk in zip(ks, batch.patterns(v[index], eps, curvature_cap)):
                out[k] = blk
        return out

    def gradient(self, v: np.ndarray) -> np.ndarray:
        g = np.asarray(self.smooth.gradient(self.structure.check(v)), dtype=float)
        if not np.all(np.isfinite(g)):
            raise NumericError("non-finite entries in the smooth gradient")
        return g

    def hessian(self, v: np.ndarray) -> BlockSparseMatrix:
        H = self.smooth.hessian(self.structure.check(v))
        if not np.all(np.isfinite(H.csr.data)):
            raise NumericError("non-finite entries in the smooth Hessian")
        return H

    def local(self, w: np.ndarray, k: int):
        """Smooth part restricted to block ``k`` around ``w``."""
        return self.smooth.local(w, k)


def evaluate(f: SeparableFunctional, v: np.ndarray) -> float:
    """Energy ``J(v)``; ``math.inf`` outside the domain."""
    return f.value(v)


def gradient(f: SeparableFunctional, v: np.ndarray) -> np.ndarray:
    """Gradient of the smooth part only."""
    return f.gradient(v)


def hessian(f: SeparableFunctional, v: np.ndarray) -> BlockSparseMatrix:
    """Hessian of the smooth part only."""
    return f.hessian(v)
