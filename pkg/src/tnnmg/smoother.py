"""Nonlinear block Gauss-Seidel smoothing."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import InternalError, SeparableFunctional, UsageError
from .localsolve import LOCAL_SOLVERS, LocalProblem, default_kind

# relative energy slack for the per-block monotonicity check
MONOTONE_SLACK = 1e-12


@dataclass(frozen=True)
class SmootherConfig:
    """``kind`` is ``"auto"``, ``"exact"``, ``"pgs"`` or ``"model"``."""

    kind: str = "auto"
    sweeps: int = 1
    order: str = "forward"

    def __post_init__(self):
        if self.kind != "auto" and self.kind not in LOCAL_SOLVERS:
            raise UsageError(f"unknown local solver kind {self.kind!r}")
        if self.sweeps < 1:
            raise UsageError("at least one smoothing sweep is required")
        if self.order not in ("forward", "symmetric"):
            raise UsageError(f"unknown sweep order {self.order!r}")


def local_problem(f: SeparableFunctional, w: np.ndarray, k: int) -> LocalProblem:
    sl = f.structure.slice(k)
    return LocalProblem(f.local(w, k), f.terms[k], w[sl].copy())


def smooth(f: SeparableFunctional, u: np.ndarray, cfg: SmootherConfig | None = None) -> np.ndarray:
    """Sweep over all blocks, replacing each by an (inexact) local minimizer.

    Block updates that do not strictly lower the energy are discarded.
    An increase larger than the round-off slack means the local solver is
    broken and raises :class:`InternalError`.
    """
    cfg = cfg or SmootherConfig()
    w = f.structure.check(u).copy()
    energy = f.value(w)
    if energy == math.inf:
        raise UsageError("smoothing needs a feasible starting point")
    slack = MONOTONE_SLACK * (1.0 + abs(energy))
    M = f.structure.num_blocks
    order = list(range(M))
    if cfg.order == "symmetric":
        order += order[::-1]
    for _ in range(cfg.sweeps):
        for k in order:
            problem = local_problem(f, w, k)
            kind = default_kind(problem) if cfg.kind == "auto" else cfg.kind
            xi = LOCAL_SOLVERS[kind](problem)
            if not np.any(xi):
                continue
            before = problem.value(np.zeros_like(xi))
            after = problem.value(xi)
            if after > before + slack:
                raise InternalError(
                    f"local solver {kind!r} increased the energy of block {k} "
                    f"by {after - before:.3e}")
            if after < before:
                w[f.structure.slice(k)] += xi
    return w
