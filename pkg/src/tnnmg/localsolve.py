"""Inexact and exact solvers for the block subproblems of the smoother.

A block subproblem is ``min_xi f0(xi) + phi_k(x + xi)`` where ``f0`` is the
smooth energy restricted to the block (see :mod:`tnnmg.smooth`) and ``x``
the current block value.  Solvers return the correction ``xi``.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy.optimize import brentq

from .core import NumericError, UsageError
from .nonsmooth import (BoxIndicator, NonsmoothTerm, SimplexIndicator, WeightedNorm,
                        simplex_project)
from .smooth import DifferenceEnergy, LocalDifference, LocalQuadratic, QuadraticSmooth, max_eigenvalue

BISECTION_TOL = 1e-12
BISECTION_MAXITER = 200
MODEL_TOL = 1e-12


class ToleranceWarning(UserWarning):
    """An iterative local solve hit its iteration cap."""


def bisect_scalar(g, dg, a: float, b: float, tol: float = BISECTION_TOL,
                  maxiter: int = BISECTION_MAXITER) -> float:
    """Minimize a convex scalar function on ``[a, b]`` by bisection.

    ``dg`` is the right derivative.  The returned point is never worse
    than ``a`` or ``b``; if the cap is hit a :class:`ToleranceWarning` is
    issued and the best point found so far is returned.
    """
    if not a <= b:
        raise UsageError(f"empty interval [{a}, {b}]")
    if not (math.isfinite(a) and math.isfinite(b)):
        raise UsageError("bisection needs a finite interval")
    if a == b:
        return a
    width = tol * (1.0 + abs(a) + abs(b))
    lo, hi = a, b
    if dg(a) < 0.0:
        it = 0
        while hi - lo > width:
            if it == maxiter:
                warnings.warn(f"bisection stopped after {maxiter} steps", ToleranceWarning,
                              stacklevel=2)
                break
            mid = 0.5 * (lo + hi)
            if dg(mid) < 0.0:
                lo = mid
            else:
                hi = mid
            it += 1
        candidate = 0.5 * (lo + hi)
    else:
        candidate = a
    best, gbest = a, g(a)
    for t in (candidate, b):
        gt = g(t)
        if gt < gbest:
            best, gbest = t, gt
    return best


def bracket_minimizer(dg, lo: float, hi: float, start: float = 0.0,
                      step: float = 1.0, maxdoubling: int = 200) -> tuple[float, float]:
    """Shrink a possibly infinite interval around ``start`` to a finite bracket."""
    a, b = lo, hi
    if not math.isfinite(b):
        t, s = start, step
        for _ in range(maxdoubling):
            t = start + s
            if dg(t) >= 0.0:
                break
            s *= 2.0
        else:
            raise NumericError("local problem appears unbounded below")
        b = t
    if not math.isfinite(a):
        t, s = start, step
        for _ in range(maxdoubling):
            t = start - s
            if dg(t) < 0.0:
                break
            s *= 2.0
        else:
            raise NumericError("local problem appears unbounded below")
        a = t
    return a, b


def exact_interval_quadratic(a: float, b: float, lower: float, upper: float) -> float:
    """Minimizer of ``a/2 t^2 - b t`` over ``[lower, upper]``."""
    if not a > 0:
        raise UsageError(f"curvature must be positive, got {a}")
    return min(max(b / a, lower), upper)


def polyhedral_gs_directions(term: NonsmoothTerm) -> list[np.ndarray]:
    """Search directions along the edges of the term's polyhedral domain.

    Coordinate axes for boxes, ``e_i - e_j`` (``i < j``, lexicographic) for
    the simplex, nothing for the norm.
    """
    return term.edge_directions()


@dataclass
class LocalProblem:
    """``xi -> f0(xi) + phi(x + xi)`` on a single block."""

    smooth: LocalQuadratic | LocalDifference
    term: NonsmoothTerm
    x: np.ndarray

    @property
    def size(self) -> int:
        return self.x.size

    def value(self, xi) -> float:
        phi = self.term.value(self.x + xi)
        if phi == math.inf:
            return math.inf
        return self.smooth.value(xi) + phi

    def minimize_along(self, xi, d) -> float:
        """Exact step ``t`` minimizing ``value(xi + t d)``."""
        y = self.x + xi
        t_hi = self.term.max_step(y, d)
        t_lo = -self.term.max_step(y, -d)
        if t_hi <= 0.0 and t_lo >= 0.0:
            return 0.0
        if isinstance(self.smooth, LocalQuadratic) and isinstance(
                self.term, (BoxIndicator, SimplexIndicator)):
            slope, curv = self.smooth.directional(xi, d)
            if curv > 0.0:
                return min(max(-slope / curv, t_lo), t_hi)
            t = t_hi if slope < 0.0 else t_lo if slope > 0.0 else 0.0
            if not math.isfinite(t):
                raise NumericError("local problem is unbounded along a search direction")
            return t

        def g(t):
            return self.value(xi + t * d)

        def dg(t):
            slope, _ = self.smooth.directional(xi + t * d, d)
            return slope + self.term.right_derivative(self.x + xi + t * d, d)

        a, b = bracket_minimizer(dg, t_lo, t_hi)
        return bisect_scalar(g, dg, a, b)


@dataclass
class FirstOrderModel:
    """``v -> c + <g, v> + 1/2 <B v, v> + phi(x + v)``."""

    gradient: np.ndarray
    matrix: np.ndarray
    term: NonsmoothTerm
    x: np.ndarray
    constant: float = 0.0

    def smooth_value(self, v) -> float:
        return self.constant + float(self.gradient @ v + 0.5 * v @ (self.matrix @ v))

    def value(self, v) -> float:
        phi = self.term.value(self.x + v)
        if phi == math.inf:
            return math.inf
        return self.smooth_value(v) + phi


def _scaled_identity(B: np.ndarray) -> float | None:
    alpha = float(B[0, 0])
    if np.array_equal(B, alpha * np.eye(B.shape[0])):
        return alpha
    return None


def gershgorin_bound(B: np.ndarray) -> float:
    return float(np.max(np.sum(np.abs(B), axis=1)))


def _box_model_descent(model: FirstOrderModel, lower, upper, tol=MODEL_TOL,
                       maxsweeps=10_000) -> np.ndarray:
    B, g, x = model.matrix, model.gradient, model.x
    y = x.copy()
    energy = model.smooth_value(y - x)
    for _ in range(maxsweeps):
        changed = False
        for i in range(y.size):
            slope = g[i] + B[i] @ (y - x)
            a = B[i, i]
            if a > 0.0:
                yi = min(max(y[i] - slope / a, lower[i]), upper[i])
            elif slope > 0.0:
                yi = lower[i]
            elif slope < 0.0:
                yi = upper[i]
            else:
                yi = y[i]
            if not math.isfinite(yi):
                raise NumericError("box model is unbounded below")
            if yi != y[i]:
                y[i] = yi
                changed = True
        new = model.smooth_value(y - x)
        if not changed or energy - new <= tol * (1.0 + abs(new)):
            break
        energy = new
    else:
        warnings.warn("box model descent hit its sweep cap", ToleranceWarning, stacklevel=3)
    return y - x


def solve_dominating_model(model: FirstOrderModel) -> np.ndarray:
    """Exact minimizer of a quadratic first-order model.

    Fast paths: shrinkage for the weighted norm and simplex projection for
    the Gibbs simplex (both need ``B = alpha I``); projected coordinate
    descent for boxes.
    """
    term, x, g, B = model.term, model.x, model.gradient, model.matrix
    if isinstance(term, WeightedNorm):
        alpha = _scaled_identity(B)
        if alpha is None or alpha <= 0.0:
            raise UsageError("norm models need B = alpha I with alpha > 0")
        r = alpha * x - g
        nr = float(np.linalg.norm(r))
        if nr == 0.0:
            return -x
        s = max(0.0, (nr - term.omega) / alpha)
        return s * r / nr - x
    if isinstance(term, SimplexIndicator):
        alpha = _scaled_identity(B)
        if alpha is None or alpha <= 0.0:
            raise UsageError("simplex models need B = alpha I with alpha > 0")
        return simplex_project(x - g / alpha) - x
    if isinstance(term, BoxIndicator):
        return _box_model_descent(model, term.lower, term.upper)
    raise UsageError(f"no model solver for {type(term).__name__}")


def curvature_bound_matrix(smooth) -> sp.csr_matrix:
    """Global matrix ``B`` dominating the smooth part's curvature.

    ``sum_i L_i D_i^T D_i`` for difference energies, ``lambda_max(A) I``
    for quadratics.
    """
    if isinstance(smooth, DifferenceEnergy):
        return smooth.curvature_bound()
    if isinstance(smooth, QuadraticSmooth):
        n = smooth.A.shape[0]
        return (max_eigenvalue(smooth.A) * sp.identity(n, format="csr"))
    raise UsageError(f"no curvature bound known for {type(smooth).__name__}")


def local_model(problem: LocalProblem) -> FirstOrderModel:
    """Dominating quadratic model of a block problem at ``xi = 0``.

    Boxes keep the full local curvature matrix (exact for quadratics);
    norm and simplex terms use ``alpha I`` with a Gershgorin bound.
    """
    smooth = problem.smooth
    if isinstance(smooth, LocalQuadratic):
        B = smooth.matrix
        grad = smooth.grad
    else:
        B = smooth.curvature_bound()
        grad = smooth.gradient(np.zeros(problem.size))
    if not isinstance(problem.term, BoxIndicator):
        B = gershgorin_bound(B) * np.eye(problem.size)
    return FirstOrderModel(grad, B, problem.term, problem.x)


def solve_model(problem: LocalProblem) -> np.ndarray:
    return solve_dominating_model(local_model(problem))


def _simplex_edge_sweep(A: np.ndarray, g: np.ndarray, x: np.ndarray) -> np.ndarray:
    """Edge line minimizations for a quadratic on the simplex, in scalar arithmetic.

    Along ``e_i - e_j`` the step is bounded by ``-y_i <= t <= y_j``.
    """
    L = x.size
    a = A.tolist()
    grad = g.tolist()
    y = x.tolist()
    xi = [0.0] * L
    for i in range(L):
        for j in range(i + 1, L):
            slope = grad[i] - grad[j]
            curv = a[i][i] + a[j][j] - 2.0 * a[i][j]
            t_lo, t_hi = -max(y[i], 0.0), max(y[j], 0.0)
            if t_hi <= 0.0 and t_lo >= 0.0:
                continue
            if curv > 0.0:
                t = min(max(-slope / curv, t_lo), t_hi)
            else:
                t = t_hi if slope < 0.0 else t_lo if slope > 0.0 else 0.0
            if t == 0.0:
                continue
            xi[i] += t
            xi[j] -= t
            y[i] += t
            y[j] -= t
            for m in range(L):
                grad[m] += t * (a[m][i] - a[m][j])
    return np.array(xi)


def solve_polyhedral(problem: LocalProblem) -> np.ndarray:
    """One pass of exact line minimizations along the domain's edges."""
    if isinstance(problem.smooth, LocalQuadratic) and isinstance(problem.term, SimplexIndicator):
        return _simplex_edge_sweep(problem.smooth.matrix, problem.smooth.grad, problem.x)
    directions = polyhedral_gs_directions(problem.term)
    if not directions:
        return solve_model(problem)
    xi = np.zeros(problem.size)
    for d in directions:
        t = problem.minimize_along(xi, d)
        if t != 0.0:
            xi = xi + t * d
    return xi


def _exact_norm_quadratic(A, r, omega) -> np.ndarray:
    """argmin 1/2 z^T A z - r^T z + omega ||z|| for SPD ``A``."""
    nr = float(np.linalg.norm(r))
    if nr <= omega:
        return np.zeros_like(r)
    mu, Q = np.linalg.eigh(A)
    if mu[0] <= 0.0:
        raise UsageError("exact norm solve needs a positive definite block")
    rho = Q.T @ r

    def residual(lam):
        return lam * float(np.linalg.norm(rho / (mu + lam))) - omega

    lam_hi = omega * (mu[-1] + 1.0) / (nr - omega) + 1.0
    while residual(lam_hi) < 0.0:
        lam_hi *= 2.0
    lam = brentq(residual, 0.0, lam_hi, xtol=1e-15, rtol=4 * np.finfo(float).eps)
    return Q @ (rho / (mu + lam))


def _exact_simplex_quadratic(A, r) -> np.ndarray:
    """argmin 1/2 z^T A z - r^T z over the Gibbs simplex (support enumeration)."""
    L = r.size
    best, best_val = None, math.inf
    for mask in range(1, 2 ** L):
        S = [i for i in range(L) if mask >> i & 1]
        m = len(S)
        K = np.zeros((m + 1, m + 1))
        K[:m, :m] = A[np.ix_(S, S)]
        K[:m, m] = 1.0
        K[m, :m] = 1.0
        rhs = np.append(r[S], 1.0)
        sol = np.linalg.lstsq(K, rhs, rcond=None)[0]
        zS = sol[:m]
        if np.any(zS < -1e-14) or abs(zS.sum() - 1.0) > 1e-12:
            continue
        z = np.zeros(L)
        z[S] = np.maximum(zS, 0.0)
        z /= z.sum()
        val = 0.5 * z @ A @ z - r @ z
        if val < best_val:
            best, best_val = z, val
    return best


def solve_exact(problem: LocalProblem) -> np.ndarray:
    """Exact block minimization for the term/smooth combinations that allow it."""
    term, x, smooth = problem.term, problem.x, problem.smooth
    quadratic = isinstance(smooth, LocalQuadratic)
    if isinstance(term, BoxIndicator) and term.size == 1:
        if quadratic and smooth.matrix[0, 0] > 0.0:
            a = float(smooth.matrix[0, 0])
            b = a * x[0] - float(smooth.grad[0])
            y = exact_interval_quadratic(a, b, term.lower[0], term.upper[0])
            return np.array([y - x[0]])
        return problem.minimize_along(np.zeros(1), np.ones(1)) * np.ones(1)
    if quadratic and isinstance(term, WeightedNorm):
        A = smooth.matrix
        return _exact_norm_quadratic(A, A @ x - smooth.grad, term.omega) - x
    if quadratic and isinstance(term, SimplexIndicator):
        A = smooth.matrix
        return _exact_simplex_quadratic(A, A @ x - smooth.grad) - x
    if quadratic and isinstance(term, BoxIndicator):
        return solve_model(problem)
    raise UsageError(
        f"no exact local solver for {type(term).__name__} with {type(smooth).__name__}")


def default_kind(problem: LocalProblem) -> str:
    """Local solver used when the smoother is configured with ``"auto"``."""
    term = problem.term
    if isinstance(term, WeightedNorm):
        return "model"
    if isinstance(term, BoxIndicator):
        return "exact" if isinstance(problem.smooth, LocalQuadratic) else "model"
    return "pgs"


LOCAL_SOLVERS = {
    "exact": solve_exact,
    "pgs": solve_polyhedral,
    "model": solve_model,
}
