"""Brute-force reference solvers for verification.

Nothing here is used by the solver itself.  The block solves are written
independently of :mod:`tnnmg.localsolve` so that agreement between the
two is meaningful.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np

from .core import SeparableFunctional, UsageError
from .nonsmooth import BoxIndicator, SimplexIndicator, WeightedNorm
from .smooth import LocalQuadratic, QuadraticSmooth

MAX_SWEEPS = 10 ** 6
BOX_ENUM_CAP = 10
SIMPLEX_ENUM_CAP = 4
KKT_TOL = 1e-10


@dataclass
class OracleResult:
    u: np.ndarray
    energy: float
    sweeps: int
    converged: bool


def oracle_box_qp_enumeration(A, b, lower, upper) -> np.ndarray:
    """Minimize ``1/2 z^T A z - b^T z`` over a box by trying all activity patterns."""
    A = np.atleast_2d(np.asarray(A, dtype=float))
    b = np.atleast_1d(np.asarray(b, dtype=float))
    n = b.size
    if n > BOX_ENUM_CAP:
        raise UsageError(f"box enumeration limited to n <= {BOX_ENUM_CAP}, got {n}")
    lower = np.broadcast_to(np.asarray(lower, dtype=float), (n,))
    upper = np.broadcast_to(np.asarray(upper, dtype=float), (n,))
    best, best_val, best_kkt = None, math.inf, False
    for pattern in itertools.product((0, 1, 2), repeat=n):
        pattern = np.array(pattern)
        at_lo, at_up, free = pattern == 1, pattern == 2, pattern == 0
        if np.any(~np.isfinite(lower[at_lo])) or np.any(~np.isfinite(upper[at_up])):
            continue
        z = np.zeros(n)
        z[at_lo] = lower[at_lo]
        z[at_up] = upper[at_up]
        if free.any():
            rhs = b[free] - A[np.ix_(free, ~free)] @ z[~free]
            try:
                z[free] = np.linalg.solve(A[np.ix_(free, free)], rhs)
            except np.linalg.LinAlgError:
                continue
        scale = 1.0 + np.abs(z)
        if np.any(z < lower - KKT_TOL * scale) or np.any(z > upper + KKT_TOL * scale):
            continue
        z = np.clip(z, lower, upper)
        g = A @ z - b
        gtol = KKT_TOL * (1.0 + np.abs(b).max(initial=0.0))
        kkt = np.all(g[at_lo] >= -gtol) and np.all(g[at_up] <= gtol)
        val = 0.5 * z @ A @ z - b @ z
        # prefer KKT points; among those (or if none pass) the lowest value
        if (kkt and not best_kkt) or (kkt == best_kkt and val < best_val):
            best, best_val, best_kkt = z, val, kkt
    if best is None:
        raise UsageError("no feasible activity pattern (empty box?)")
    return best


def _simplex_qp_enum(A, r) -> np.ndarray:
    """Minimize ``1/2 z^T A z - r^T z`` on the Gibbs simplex over all supports."""
    L = r.size
    best, best_val = None, math.inf
    for m in range(1, L + 1):
        for S in itertools.combinations(range(L), m):
            S = list(S)
            ASS = A[np.ix_(S, S)]
            try:
                p = np.linalg.solve(ASS, r[S])
                q = np.linalg.solve(ASS, np.ones(m))
            except np.linalg.LinAlgError:
                continue
            # z_S = p - mu q with sum(z_S) = 1
            mu = (p.sum() - 1.0) / q.sum()
            zS = p - mu * q
            if np.any(zS < -KKT_TOL):
                continue
            z = np.zeros(L)
            z[S] = np.maximum(zS, 0.0)
            z /= z.sum()
            val = 0.5 * z @ A @ z - r @ z
            if val < best_val:
                best, best_val = z, val
    return best


def oracle_simplex_projection_enum(r) -> np.ndarray:
    """Euclidean projection onto the Gibbs simplex by support enumeration (``L <= 4``)."""
    r = np.asarray(r, dtype=float)
    if r.ndim != 1 or not 1 <= r.size <= SIMPLEX_ENUM_CAP:
        raise UsageError(f"simplex enumeration needs 1 <= L <= {SIMPLEX_ENUM_CAP}")
    return _simplex_qp_enum(np.eye(r.size), r)


def _norm_qp(A, c, omega) -> np.ndarray:
    """Minimize ``1/2 y^T A y - c^T y + omega ||y||`` by bisection on the multiplier."""
    if np.linalg.norm(c) <= omega:
        return np.zeros_like(c)
    mu, Q = np.linalg.eigh(A)
    cq = Q.T @ c
    pairs = list(zip(mu.tolist(), cq.tolist()))

    def size(lam):
        return lam * math.sqrt(sum((ci / (mi + lam)) ** 2 for mi, ci in pairs))

    # lam ||y(lam)|| grows from 0 to ||c||; find where it equals omega
    lo, hi = 0.0, 1.0
    while size(hi) < omega:
        hi *= 2.0
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if size(mid) < omega:
            lo = mid
        else:
            hi = mid
        if hi - lo <= 1e-16 * hi:
            break
    return Q @ (cq / (mu + 0.5 * (lo + hi)))


def _scalar_line(local, lo, hi):
    """Minimize a smooth convex scalar function over ``[lo, hi]``.

    Newton steps safeguarded by a sign-change bracket on the derivative,
    then a final comparison with the interval ends.
    """

    def g(t):
        return float(local.value(np.array([t])))

    def dg(t):
        return float(local.gradient(np.array([t]))[0])

    def d2g(t):
        return float(local.hessian(np.array([t]))[0, 0])

    if not math.isfinite(lo) or not math.isfinite(hi):
        step = 1.0
        while not math.isfinite(hi) and dg(step) < 0.0:
            step *= 2.0
        hi = min(hi, step)
        step = 1.0
        while not math.isfinite(lo) and dg(-step) > 0.0:
            step *= 2.0
        lo = max(lo, -step)
    if dg(lo) >= 0.0:
        return lo
    if dg(hi) <= 0.0:
        return hi
    a, b = lo, hi
    t = min(max(0.0, a), b)
    for _ in range(200):
        slope = dg(t)
        if slope < 0.0:
            a = t
        else:
            b = t
        curv = d2g(t)
        nxt = t - slope / curv if curv > 0.0 else math.nan
        if not a < nxt < b:
            nxt = 0.5 * (a + b)
        if abs(nxt - t) <= 1e-16 * (1.0 + abs(t)) or b - a <= 1e-16 * (1.0 + abs(t)):
            t = nxt
            break
        t = nxt
    return min((lo, t, hi), key=g)


def oracle_block_minimize(f: SeparableFunctional, w: np.ndarray, k: int) -> np.ndarray:
    """Exact minimizer of ``J`` over block ``k`` with all other blocks frozen."""
    sl = f.structure.slice(k)
    x = w[sl].copy()
    term = f.terms[k]
    local = f.local(w, k)
    quadratic = isinstance(local, LocalQuadratic)
    if quadratic:
        A = local.matrix
        c = A @ x - local.grad
    if isinstance(term, BoxIndicator):
        lower, upper = term.lower, term.upper
        if quadratic:
            if term.size == 1:
                return np.clip(c / A[0, 0], lower, upper)
            return oracle_box_qp_enumeration(A, c, lower, upper)
        if term.size == 1:
            return x + _scalar_line(local, lower[0] - x[0], upper[0] - x[0])
    elif quadratic and isinstance(term, SimplexIndicator):
        return _simplex_qp_enum(A, c)
    elif quadratic and isinstance(term, WeightedNorm):
        return _norm_qp(A, c, term.omega)
    raise UsageError(f"oracle has no block solver for {type(term).__name__}")


def _scalar_quadratic_sweeps(f, u, tol, max_sweeps):
    """Fast path: scalar blocks, quadratic ``J0``, interval constraints."""
    A = f.smooth.A.csr
    b = f.smooth.b
    indptr, indices, data = A.indptr, A.indices, A.data
    diag = A.diagonal()
    lower = np.array([t.lower[0] for t in f.terms])
    upper = np.array([t.upper[0] for t in f.terms])
    u = u.tolist()
    energy = f.value(np.array(u))
    for sweep in range(1, max_sweeps + 1):
        for i in range(len(u)):
            s = -b[i]
            for p in range(indptr[i], indptr[i + 1]):
                j = indices[p]
                if j != i:
                    s += data[p] * u[j]
            u[i] = min(max(-s / diag[i], lower[i]), upper[i])
        new = f.value(np.array(u))
        if energy - new < tol * tol:
            return np.array(u), new, sweep, True
        energy = new
    return np.array(u), energy, max_sweeps, False


def oracle_coordinate_descent(f: SeparableFunctional, u0: np.ndarray, tol: float = 1e-13,
                              max_sweeps: int = MAX_SWEEPS) -> OracleResult:
    """Exact block relaxation until a sweep lowers the energy by less than ``tol^2``."""
    u = f.structure.check(u0).astype(float, copy=True)
    if not f.is_feasible(u):
        raise UsageError("oracle needs a feasible starting point")
    scalar_box = (isinstance(f.smooth, QuadraticSmooth)
                  and all(isinstance(t, BoxIndicator) and t.size == 1 for t in f.terms))
    if scalar_box:
        u, energy, sweeps, ok = _scalar_quadratic_sweeps(f, u, tol, max_sweeps)
        return OracleResult(u, energy, sweeps, ok)
    energy = f.value(u)
    for sweep in range(1, max_sweeps + 1):
        for k in range(f.structure.num_blocks):
            sl = f.structure.slice(k)
            x = u[sl]
            y = oracle_block_minimize(f, u, k)
            term = f.terms[k]
            if f.local(u, k).value(y - x) + term.value(y) <= term.value(x):
                u[sl] = y
        new = f.value(u)
        if energy - new < tol * tol:
            return OracleResult(u, new, sweep, True)
        energy = new
    return OracleResult(u, energy, max_sweeps, False)
