"""Model problems on uniform 1D and 2D grids.

Level ``J`` has ``2^J - 1`` interior nodes per direction with mesh size
``h = 2^-J`` on the unit interval or square.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .core import BlockSparseMatrix, BlockStructure, SeparableFunctional, UsageError
from .linsolve import GridHierarchy
from .nonsmooth import IntervalIndicator, SimplexIndicator, WeightedNorm
from .smooth import DifferenceEnergy, MinimalSurfaceDensity, QuadraticSmooth

# elasticity-like coupling of the two displacement components
FRICTION_COUPLING = np.array([[1.0, 0.25], [0.25, 0.5]])


@dataclass
class ProblemInstance:
    name: str
    level: int
    functional: SeparableFunctional
    hierarchy: GridHierarchy
    initial: np.ndarray

    @property
    def structure(self) -> BlockStructure:
        return self.functional.structure

    @property
    def n(self) -> int:
        return self.functional.n


def _nodes(level: int) -> tuple[int, float]:
    if level < 1:
        raise UsageError(f"level must be >= 1, got {level}")
    return 2 ** level - 1, 2.0 ** -level


def laplacian_1d(n: int, h: float) -> sp.csr_matrix:
    """P1 stiffness matrix ``(1/h) tridiag(-1, 2, -1)``."""
    return (sp.diags([-1.0, 2.0, -1.0], [-1, 0, 1], shape=(n, n)) / h).tocsr()


def mass_1d(n: int, h: float) -> sp.csr_matrix:
    return (sp.diags([1.0, 4.0, 1.0], [-1, 0, 1], shape=(n, n)) * (h / 6.0)).tocsr()


def laplacian_2d(n: int, h: float) -> sp.csr_matrix:
    """Q1 stiffness matrix on an ``n x n`` grid of interior nodes."""
    K, M = laplacian_1d(n, h), mass_1d(n, h)
    return (sp.kron(K, M) + sp.kron(M, K)).tocsr()


def _instance(name, level, smooth, terms, hierarchy, start=0.0):
    f = SeparableFunctional(smooth, terms, hierarchy.finest)
    return ProblemInstance(name, level, f, hierarchy, f.project(np.full(f.n, start)))


def build_obstacle_1d(level: int, lower: float = -0.15, upper: float = 0.15,
                      load: float = -10.0) -> ProblemInstance:
    """``1/2 <A v, v> - <b, v>`` with ``lower <= v <= upper``."""
    if lower > upper:
        raise UsageError("lower obstacle above upper obstacle")
    n, h = _nodes(level)
    hier = GridHierarchy.interval(level)
    A = BlockSparseMatrix(hier.finest, laplacian_1d(n, h))
    b = np.full(n, h * load)
    terms = [IntervalIndicator(lower, upper) for _ in range(n)]
    return _instance("obstacle1d", level, QuadraticSmooth(A, b), terms, hier)


def build_obstacle_2d(level: int, lower: float = -0.15, upper: float = 0.15,
                      load: float = -10.0) -> ProblemInstance:
    if lower > upper:
        raise UsageError("lower obstacle above upper obstacle")
    n, h = _nodes(level)
    hier = GridHierarchy.square(level)
    A = BlockSparseMatrix(hier.finest, laplacian_2d(n, h))
    b = np.full(n * n, h * h * load)
    terms = [IntervalIndicator(lower, upper) for _ in range(n * n)]
    return _instance("obstacle2d", level, QuadraticSmooth(A, b), terms, hier)


def build_minsurf_box_1d(level: int, lower: float = 0.0, upper: float = 1.0,
                         left: float = 0.0, right: float = 1.0) -> ProblemInstance:
    """Discrete arc length ``sum_i h sqrt(1 + ((v_{i+1} - v_i)/h)^2)`` with box bounds."""
    if lower > upper:
        raise UsageError("lower bound above upper bound")
    n, h = _nodes(level)
    hier = GridHierarchy.interval(level)
    # cell i joins nodes i-1 and i (nodes -1 and n are the boundary)
    D = sp.diags([-1.0, 1.0], [-1, 0], shape=(n + 1, n)) / h
    shifts = np.zeros(n + 1)
    shifts[0] = -left / h
    shifts[-1] = right / h
    energy = DifferenceEnergy(hier.finest, D, np.full(n + 1, h), shifts, MinimalSurfaceDensity())
    terms = [IntervalIndicator(lower, upper) for _ in range(n)]
    # start inside the box: from a bound the smoother frees one node per sweep
    start = 0.5 * (lower + upper) if np.isfinite(lower + upper) else 0.0
    return _instance("minsurf1d", level, energy, terms, hier, start)


def _smooth_field(points: np.ndarray, components: int, amplitude: float,
                  rng: np.random.Generator) -> np.ndarray:
    """Sum of a few low-frequency sines per component, shape ``(len(points), L)``."""
    points = np.atleast_2d(points.T).T
    out = np.zeros((points.shape[0], components))
    for l in range(components):
        for _ in range(3):
            freq = rng.integers(1, 4, size=points.shape[1])
            phase = rng.uniform(0.0, 2.0 * np.pi)
            weight = rng.uniform(0.5, 1.0)
            out[:, l] += weight * np.sin(np.pi * points @ freq + phase)
    return amplitude * out / 3.0


def _phasefield(name, level, A_lap, points, hier, components, c, amplitude, seed):
    n = A_lap.shape[0]
    A = sp.kron(A_lap, sp.identity(components)) + c * sp.identity(n * components)
    rng = np.random.default_rng(seed)
    b = _smooth_field(points, components, amplitude, rng).ravel()
    smooth = QuadraticSmooth(BlockSparseMatrix(hier.finest, A.tocsr()), b)
    terms = [SimplexIndicator(components) for _ in range(n)]
    return _instance(name, level, smooth, terms, hier)


def build_phasefield_simplex_1d(level: int, L: int = 3, c: float = 1.0,
                                amplitude: float = 2.0, seed: int = 0) -> ProblemInstance:
    """``1/2 <(A (x) I_L + c I) v, v> - <b, v>`` with every node block in the Gibbs simplex."""
    if not c > 0:
        raise UsageError("mass coefficient c must be positive")
    n, h = _nodes(level)
    hier = GridHierarchy.interval(level, block_size=L)
    x = h * np.arange(1, n + 1)
    return _phasefield("phasefield1d", level, laplacian_1d(n, h), x, hier, L, c, amplitude, seed)


def build_phasefield_simplex_2d(level: int, L: int = 3, c: float = 1.0,
                                amplitude: float = 2.0, seed: int = 0) -> ProblemInstance:
    if not c > 0:
        raise UsageError("mass coefficient c must be positive")
    n, h = _nodes(level)
    hier = GridHierarchy.square(level, block_size=L)
    x = h * np.arange(1, n + 1)
    X, Y = np.meshgrid(x, x, indexing="ij")
    points = np.column_stack([X.ravel(), Y.ravel()])
    return _phasefield("phasefield2d", level, laplacian_2d(n, h), points, hier, L, c,
                       amplitude, seed)


def build_friction_norm_1d(level: int, omega: float = 10.0, load: float = 10.0) -> ProblemInstance:
    """Vector-valued P1 quadratic with a nodal friction term ``h omega ||v_k||``.

    The load traction is ``load * (sin(2 pi x), cos(3 pi x))``.
    """
    if not omega > 0:
        raise UsageError("friction weight must be positive")
    n, h = _nodes(level)
    hier = GridHierarchy.interval(level, block_size=2)
    A = sp.kron(laplacian_1d(n, h), sp.csr_matrix(FRICTION_COUPLING)).tocsr()
    x = h * np.arange(1, n + 1)
    b = h * load * np.column_stack([np.sin(2 * np.pi * x), np.cos(3 * np.pi * x)]).ravel()
    smooth = QuadraticSmooth(BlockSparseMatrix(hier.finest, A), b)
    terms = [WeightedNorm(h * omega, 2) for _ in range(n)]
    return _instance("friction1d", level, smooth, terms, hier)


PROBLEMS = {
    "obstacle1d": build_obstacle_1d,
    "obstacle2d": build_obstacle_2d,
    "minsurf1d": build_minsurf_box_1d,
    "phasefield1d": build_phasefield_simplex_1d,
    "phasefield2d": build_phasefield_simplex_2d,
    "friction1d": build_friction_norm_1d,
}


def build(name: str, level: int, **kwargs) -> ProblemInstance:
    try:
        builder = PROBLEMS[name]
    except KeyError:
        raise UsageError(f"unknown problem {name!r}; choose from {sorted(PROBLEMS)}") from None
    return builder(level, **kwargs)
