"""Truncated nonsmooth Newton multigrid for block-separable convex minimization."""

from .core import (BlockSparseMatrix, BlockStructure, InternalError, NumericError,
                   SeparableFunctional, UsageError)
from .driver import IterationReport, SolveConfig, nested_solve, solve, tnnmg_step
from .linsolve import GridHierarchy, LinearSolverConfig
from .problems import PROBLEMS, ProblemInstance, build
from .smoother import SmootherConfig

__all__ = [
    "BlockSparseMatrix", "BlockStructure", "GridHierarchy", "InternalError", "IterationReport",
    "LinearSolverConfig", "NumericError", "PROBLEMS", "ProblemInstance", "SeparableFunctional",
    "SmootherConfig", "SolveConfig", "UsageError", "build", "nested_solve", "solve", "tnnmg_step",
]
