"""Linear solvers for the truncated Newton system ``H v = -g``.

``H`` is symmetric positive semidefinite: truncation zeroes rows and
columns (or projects blocks), so every solver here targets the
pseudo-inverse solution and finally projects onto the correction space.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .core import BlockSparseMatrix, BlockStructure, InternalError, NumericError, UsageError, galerkin_product

log = logging.getLogger(__name__)

# diagonal entries below this fraction of the largest one count as zero
ZERO_DIAGONAL_RTOL = 1e-13
PINV_RCOND = 1e-12


@dataclass(frozen=True)
class LinearSolverConfig:
    kind: str = "vcycle"
    pre_smoothing: int = 1
    post_smoothing: int = 1
    alpha: float = 1e-8
    cycles: int = 1
    cg_maxit: int = 1000
    cg_tol: float = 1e-12
    dense_cap: int = 2000
    coarse_rcond: float = PINV_RCOND

    def __post_init__(self):
        if self.kind not in ("vcycle", "cg", "dense"):
            raise UsageError(f"unknown linear solver {self.kind!r}")
        if self.pre_smoothing < 0 or self.post_smoothing < 0:
            raise UsageError("smoothing step counts must be non-negative")
        if self.cycles < 1:
            raise UsageError("at least one cycle is required")
        if not self.alpha > 0:
            raise UsageError("regularization alpha must be positive")
        if not 1e-14 <= self.alpha <= 1e-4:
            warnings.warn(f"smoother regularization alpha={self.alpha:g} outside [1e-14, 1e-4]",
                          stacklevel=3)


def interval_prolongation(n_coarse: int) -> sp.csr_matrix:
    """Linear interpolation from ``n_coarse`` to ``2 n_coarse + 1`` interior nodes."""
    n_fine = 2 * n_coarse + 1
    rows, cols, vals = [], [], []
    for i in range(n_coarse):
        f = 2 * i + 1
        rows += [f - 1, f, f + 1]
        cols += [i, i, i]
        vals += [0.5, 1.0, 0.5]
    return sp.csr_matrix((vals, (rows, cols)), shape=(n_fine, n_coarse))


def square_prolongation(n_coarse: int) -> sp.csr_matrix:
    """Bilinear interpolation on a square grid of ``n_coarse^2`` interior nodes."""
    P = interval_prolongation(n_coarse)
    return sp.kron(P, P, format="csr")


class GridHierarchy:
    """Nested levels ``0..J`` with prolongations from level ``k-1`` to ``k``.

    ``prolongations[k-1]`` maps level ``k-1`` to level ``k``; the finest
    level is last.
    """

    def __init__(self, structures: list[BlockStructure], prolongations: list):
        if len(prolongations) != len(structures) - 1:
            raise UsageError("need one prolongation between consecutive levels")
        self.structures = list(structures)
        self.prolongations = [sp.csr_matrix(P, dtype=float) for P in prolongations]
        for k, P in enumerate(self.prolongations):
            expected = (structures[k + 1].n, structures[k].n)
            if P.shape != expected:
                raise UsageError(f"prolongation {k} has shape {P.shape}, expected {expected}")

    @classmethod
    def single(cls, structure: BlockStructure) -> "GridHierarchy":
        return cls([structure], [])

    @classmethod
    def interval(cls, level: int, block_size: int = 1, coarsest: int = 1) -> "GridHierarchy":
        """Uniform refinements of (0, 1); level ``j`` has ``2^j - 1`` nodes."""
        return cls._uniform(level, block_size, coarsest, lambda j: 2 ** j - 1,
                            interval_prolongation)

    @classmethod
    def square(cls, level: int, block_size: int = 1, coarsest: int = 1) -> "GridHierarchy":
        """Uniform refinements of (0, 1)^2; level ``j`` has ``(2^j - 1)^2`` nodes."""
        return cls._uniform(level, block_size, coarsest, lambda j: (2 ** j - 1) ** 2,
                            square_prolongation)

    @classmethod
    def _uniform(cls, level, block_size, coarsest, nodes, prolongation):
        if not 1 <= coarsest <= level:
            raise UsageError(f"need 1 <= coarsest ({coarsest}) <= level ({level})")
        structures, prolongations = [], []
        eye = sp.identity(block_size, format="csr")
        for j in range(coarsest, level + 1):
            structures.append(BlockStructure.uniform(nodes(j), block_size))
            if j > coarsest:
                n1d = 2 ** (j - 1) - 1
                prolongations.append(sp.kron(prolongation(n1d), eye, format="csr"))
        return cls(structures, prolongations)

    @property
    def num_levels(self) -> int:
        return len(self.structures)

    @property
    def finest(self) -> BlockStructure:
        return self.structures[-1]

    def galerkin(self, A: BlockSparseMatrix) -> list[BlockSparseMatrix]:
        """Matrices on all levels, coarsest first, from the finest-level ``A``."""
        if A.structure.n != self.finest.n:
            raise UsageError("matrix does not match the finest level of the hierarchy")
        mats = [A]
        for k in range(self.num_levels - 1, 0, -1):
            mats.append(galerkin_product(self.prolongations[k - 1], mats[-1], self.structures[k - 1]))
        return mats[::-1]


def _regularized_inverses(A: BlockSparseMatrix, alpha: float):
    """Inverses of the regularized diagonal blocks, ``None`` for zero blocks."""
    cache = A.__dict__.setdefault("_dtilde_inverses", {})
    if alpha in cache:
        return cache[alpha]
    D = A.diagonal_stack
    if D is None:
        D = A.diagonal_blocks
    if len(D) == 0:
        cache[alpha] = []
        return []
    diag = [np.diag(b) for b in D]
    scale = max(float(np.max(np.abs(d))) for d in diag)
    zero_tol = ZERO_DIAGONAL_RTOL * scale
    if isinstance(D, np.ndarray):
        d = np.diagonal(D, axis1=1, axis2=2)
        zero = np.abs(d) <= zero_tol
        skip = zero.all(axis=1)
        Dt = D.copy()
        idx = np.arange(D.shape[1])
        Dt[:, idx, idx] = np.where(zero, alpha, (1.0 + alpha) * d)
        inv = np.zeros_like(Dt)
        keep = ~skip
        try:
            C = np.linalg.cholesky(Dt[keep])
        except np.linalg.LinAlgError as exc:
            raise NumericError("regularized diagonal block is not positive definite") from exc
        Ci = np.linalg.inv(C)
        inv[keep] = np.swapaxes(Ci, 1, 2) @ Ci
        out = [None if sk else blk for sk, blk in zip(skip, inv)]
    else:
        out = []
        for k, (blk, d) in enumerate(zip(D, diag)):
            zero = np.abs(d) <= zero_tol
            if zero.all():
                out.append(None)
                continue
            Dt = blk.copy()
            np.fill_diagonal(Dt, np.where(zero, alpha, (1.0 + alpha) * d))
            try:
                C = np.linalg.cholesky(Dt)
            except np.linalg.LinAlgError as exc:
                raise NumericError(f"regularized diagonal block {k} is not positive definite") from exc
            Ci = np.linalg.inv(C)
            out.append(Ci.T @ Ci)
    cache[alpha] = out
    return out


def semidefinite_block_gs_sweep(A: BlockSparseMatrix, r: np.ndarray, alpha: float = 1e-8,
                                x: np.ndarray | None = None,
                                backward: bool = False) -> np.ndarray:
    """One block Gauss-Seidel sweep for ``A x = r`` with regularized diagonal blocks.

    Zero diagonal entries are replaced by ``alpha``, nonzero ones scaled by
    ``1 + alpha``.  Blocks whose diagonal vanishes entirely are skipped.
    Returns the updated iterate (starting from zero if ``x`` is None).
    """
    s = A.structure
    r = s.check(r)
    x = np.zeros(s.n) if x is None else s.check(x).copy()
    inverses = _regularized_inverses(A, alpha)
    row_blocks = A.row_blocks
    off = s.offsets
    order = range(s.num_blocks - 1, -1, -1) if backward else range(s.num_blocks)
    for k in order:
        inv = inverses[k]
        if inv is None:
            continue
        cols, rows = row_blocks[k]
        lo, hi = off[k], off[k + 1]
        x[lo:hi] += inv @ (r[lo:hi] - rows @ x[cols])
    return x


def dense_pseudoinverse_solve(A, r: np.ndarray, cap: int = 2000,
                              rcond: float = PINV_RCOND) -> np.ndarray:
    """``A^+ r`` via a symmetric eigendecomposition."""
    M = A.toarray() if hasattr(A, "toarray") else np.asarray(A, dtype=float)
    n = M.shape[0]
    if n > cap:
        raise UsageError(f"dense pseudo-inverse limited to n <= {cap}, got {n}")
    lam, Q = np.linalg.eigh(0.5 * (M + M.T))
    top = np.max(np.abs(lam)) if n else 0.0
    keep = lam > rcond * top
    if not keep.any():
        return np.zeros(n)
    Qk = Q[:, keep]
    return Qk @ ((Qk.T @ r) / lam[keep])


def cg_solve(A, r: np.ndarray, tol: float = 1e-12, maxit: int = 1000,
             precond=None) -> tuple[np.ndarray, bool]:
    """Conjugate gradients from a zero start; returns ``(v, converged)``.

    Works on semidefinite systems with ``r`` in the range: iterates stay
    in the Krylov space of ``r``.  Stops early if a search direction has
    no curvature.
    """
    op = A.csr if isinstance(A, BlockSparseMatrix) else A
    r = np.asarray(r, dtype=float)
    v = np.zeros_like(r)
    res = r.copy()
    rnorm0 = float(np.linalg.norm(r))
    if rnorm0 == 0.0:
        return v, True
    z = precond(res) if precond else res
    p = z.copy()
    rz = float(res @ z)
    for _ in range(maxit):
        Ap = op @ p
        pAp = float(p @ Ap)
        if not np.isfinite(pAp):
            raise NumericError("CG breakdown (non-finite curvature)")
        if pAp <= 0.0:
            break
        step = rz / pAp
        v += step * p
        res -= step * Ap
        if float(np.linalg.norm(res)) <= tol * rnorm0:
            return v, True
        z = precond(res) if precond else res
        rz_new = float(res @ z)
        p = z + (rz_new / rz) * p
        rz = rz_new
    converged = float(np.linalg.norm(r - op @ v)) <= tol * rnorm0
    return v, converged


def _vcycle(mats, hierarchy, r, level, cfg):
    A = mats[level]
    if level == 0:
        return dense_pseudoinverse_solve(A, r, cfg.dense_cap, cfg.coarse_rcond)
    x = None
    for _ in range(cfg.pre_smoothing):
        x = semidefinite_block_gs_sweep(A, r, cfg.alpha, x)
    if x is None:
        x = np.zeros_like(r)
    P = hierarchy.prolongations[level - 1]
    coarse = P.T @ (r - A.csr @ x)
    x = x + P @ _vcycle(mats, hierarchy, coarse, level - 1, cfg)
    for _ in range(cfg.post_smoothing):
        x = semidefinite_block_gs_sweep(A, r, cfg.alpha, x, backward=True)
    return x


def vcycle(hierarchy: GridHierarchy, A: BlockSparseMatrix, r: np.ndarray, pattern=None,
           cfg: LinearSolverConfig | None = None, matrices=None) -> np.ndarray:
    """One V-cycle from a zero initial value, projected onto the correction space."""
    cfg = cfg or LinearSolverConfig()
    if A.structure.n != hierarchy.finest.n or np.shape(r) != (A.structure.n,):
        raise UsageError("hierarchy, matrix and right-hand side dimensions disagree")
    mats = matrices if matrices is not None else hierarchy.galerkin(A)
    v = _vcycle(mats, hierarchy, np.asarray(r, dtype=float), len(mats) - 1, cfg)
    return pattern.project(v) if pattern is not None else v


def solve_correction(H: BlockSparseMatrix, g: np.ndarray, pattern, hierarchy: GridHierarchy | None,
                     cfg: LinearSolverConfig | None = None) -> np.ndarray:
    """Approximate ``-H^+ g`` with the configured solver, projected onto ``W``."""
    cfg = cfg or LinearSolverConfig()
    r = -g
    if not np.any(r):
        return np.zeros_like(r)
    if cfg.kind == "dense":
        v = dense_pseudoinverse_solve(H, r, cfg.dense_cap)
    elif cfg.kind == "cg":
        v, converged = cg_solve(H, r, cfg.cg_tol, cfg.cg_maxit)
        if not converged:
            log.debug("CG stopped before reaching tolerance %g", cfg.cg_tol)
    else:
        if hierarchy is None:
            hierarchy = GridHierarchy.single(H.structure)
        mats = hierarchy.galerkin(H)
        v = np.zeros_like(r)
        for _ in range(cfg.cycles):
            v = v + vcycle(hierarchy, H, r - H.csr @ v, None, cfg, matrices=mats)
    v = pattern.project(v)
    slope = float(g @ v)
    if slope > 1e-10 * float(np.linalg.norm(g)) * float(np.linalg.norm(v)):
        raise InternalError(f"linear correction is not a descent direction (slope {slope:.3e})")
    return v
