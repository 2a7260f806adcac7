"""Projection of the linear correction into the domain and line search."""

from __future__ import annotations

import math

import numpy as np

from .core import SeparableFunctional, UsageError
from .localsolve import bisect_scalar

RHO_MAX = 4.0
DAMPING_TOL = 1e-12
DAMPING_SLACK = 1e-14


def project_into_domain(f: SeparableFunctional, u: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Correction ``w`` with ``u + w`` the block-wise projection of ``u + v``."""
    u = f.structure.check(u)
    v = f.structure.check(v)
    target = u + v
    w = f.project(target)
    # keep v bit-exact where the projection did not move anything
    return np.where(w == target, v, w - u)


def _ray(f, u, v):
    """Energy and right derivative of ``t -> J(u + t v)``."""
    moving = [k for k in range(f.structure.num_blocks)
              if f.terms[k].has_derivatives and np.any(v[f.structure.slice(k)])]

    def g(t):
        return f.value(u + t * v)

    def dg(t):
        w = u + t * v
        slope = float(f.gradient(w) @ v)
        for k in moving:
            sl = f.structure.slice(k)
            slope += f.terms[k].right_derivative(w[sl], v[sl])
        return slope

    return g, dg


def damp(f: SeparableFunctional, u: np.ndarray, v: np.ndarray, rho_max: float = RHO_MAX,
         tol: float = DAMPING_TOL) -> float:
    """Damping factor ``rho`` in ``[0, rho_max]`` with ``J(u + rho v) <= J(u)``.

    Bisection on the directional derivative over the feasible part of
    ``[0, rho_max]``; if that does not decrease the energy (nonconvex
    ray), halving backtracking from ``rho = 1``; otherwise ``0``.
    """
    if not rho_max > 0:
        raise UsageError("rho_max must be positive")
    u = f.structure.check(u)
    v = f.structure.check(v)
    if not np.any(v):
        return 0.0
    g, dg = _ray(f, u, v)
    j0 = g(0.0)
    if j0 == math.inf:
        raise UsageError("damping needs a feasible base point")
    # u and u + v are both feasible, so [0, 1] always is
    upper = min(rho_max, max(1.0, f.max_step(u, v)))
    while upper > 1.0 and g(upper) == math.inf:
        upper = max(1.0, 0.5 * upper)
    slack = DAMPING_SLACK * (1.0 + abs(j0))
    rho = bisect_scalar(g, dg, 0.0, upper, tol=tol)
    if rho > 0.0 and g(rho) <= j0 + slack:
        return rho
    t = 1.0
    for _ in range(60):
        if g(t) < j0:
            return t
        t *= 0.5
    return 0.0
