"""Per-block convex nonsmooth terms.

Each term acts on one block ``x`` of length ``size`` and knows its value
(``math.inf`` outside the domain), the Euclidean projection onto its
domain, step lengths to the domain boundary, and which subspace around
``x`` it is twice differentiable on (its truncation pattern).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Callable, Sequence

import numpy as np

from .core import UsageError

# absolute slack for domain membership; absorbs round-off from projections
FEAS_TOL = 1e-12

DEFAULT_EPS = 1e-10
DEFAULT_CURVATURE_CAP = 1e8


@dataclass(frozen=True, eq=False)
class TruncationBlock:
    """Subspace of one block on which the term is smooth, with its projection.

    ``kind`` is one of ``"full"``, ``"empty"``, ``"mask"`` (coordinate
    subspace) or ``"edges"`` (span of simplex edges between inactive
    components).  ``active`` lists the components that were found active.
    """

    kind: str
    projection: np.ndarray
    active: frozenset = frozenset()

    @property
    def size(self) -> int:
        return self.projection.shape[0]

    @property
    def rank(self) -> int:
        return int(round(float(np.trace(self.projection))))

    @property
    def support(self) -> np.ndarray:
        """Components touched by the subspace."""
        return np.diag(self.projection) > 0.0

    def __post_init__(self):
        self.projection.flags.writeable = False

    @classmethod
    def full(cls, n: int) -> "TruncationBlock":
        return _full_block(int(n))

    @classmethod
    def empty(cls, n: int, active=None) -> "TruncationBlock":
        return _empty_block(int(n), frozenset(range(n) if active is None else active))

    @classmethod
    def coordinates(cls, free) -> "TruncationBlock":
        return _mask_block(tuple(bool(f) for f in free))

    @classmethod
    def simplex_edges(cls, n: int, active) -> "TruncationBlock":
        """Projection onto span{e_i - e_j : i, j inactive}."""
        return _edge_block(int(n), frozenset(active))


# Truncation blocks are immutable and few distinct ones occur per term
# type, so they are built once and shared.

@lru_cache(maxsize=None)
def _full_block(n):
    return TruncationBlock("full", np.eye(n))


@lru_cache(maxsize=None)
def _empty_block(n, active):
    return TruncationBlock("empty", np.zeros((n, n)), active)


@lru_cache(maxsize=None)
def _mask_block(free):
    free = np.array(free, dtype=bool)
    if free.all():
        return _full_block(free.size)
    active = frozenset(np.flatnonzero(~free).tolist())
    if not free.any():
        return _empty_block(free.size, active)
    return TruncationBlock("mask", np.diag(free.astype(float)), active)


@lru_cache(maxsize=None)
def _edge_block(n, active):
    inactive = [i for i in range(n) if i not in active]
    if len(inactive) < 2:
        return _empty_block(n, active)
    P = np.zeros((n, n))
    P[np.ix_(inactive, inactive)] = np.eye(len(inactive)) - 1.0 / len(inactive)
    return TruncationBlock("edges", P, active)


def simplex_project(r) -> np.ndarray:
    """Euclidean projection onto ``{z : z >= 0, sum(z) = 1}``.

    Sort descending, find the last index ``k`` with
    ``u_k > (sum_{i<=k} u_i - 1) / k`` and shift by that threshold.
    """
    r = np.asarray(r, dtype=float)
    if r.ndim != 1 or r.size < 1:
        raise UsageError("simplex projection needs a non-empty vector")
    return simplex_project_rows(r[None, :])[0]


def simplex_project_rows(R) -> np.ndarray:
    """Row-wise :func:`simplex_project` of a 2D array."""
    R = np.asarray(R, dtype=float)
    u = -np.sort(-R, axis=1)
    css = np.cumsum(u, axis=1) - 1.0
    k = np.arange(1, R.shape[1] + 1)
    cond = u - css / k > 0
    # last index where the condition holds (it always holds at index 0)
    rho = R.shape[1] - 1 - np.argmax(cond[:, ::-1], axis=1)
    theta = css[np.arange(R.shape[0]), rho] / (rho + 1)
    return np.maximum(R - theta[:, None], 0.0)


class NonsmoothTerm:
    """Interface shared by all per-block terms."""

    size: int
    # indicators contribute no derivatives on their truncation patterns
    has_derivatives = False

    def value(self, x) -> float:
        raise NotImplementedError

    def contains(self, x) -> bool:
        return self.value(x) < math.inf

    def domain_project(self, x) -> np.ndarray:
        raise NotImplementedError

    def max_step(self, x, d) -> float:
        """Largest ``t >= 0`` with ``x + t d`` in the domain (may be ``inf``)."""
        raise NotImplementedError

    def right_derivative(self, x, d) -> float:
        """One-sided derivative of ``t -> phi(x + t d)`` at ``t = 0+``."""
        raise NotImplementedError

    def active_set(self, x, eps: float = DEFAULT_EPS,
                   curvature_cap: float = DEFAULT_CURVATURE_CAP) -> frozenset:
        raise NotImplementedError

    def truncation_pattern(self, x, eps: float = DEFAULT_EPS,
                           curvature_cap: float = DEFAULT_CURVATURE_CAP) -> TruncationBlock:
        raise NotImplementedError

    def derivatives(self, x, block: TruncationBlock) -> tuple[np.ndarray, np.ndarray]:
        """Gradient and Hessian of the term on the pattern's support (zero elsewhere)."""
        return np.zeros(self.size), np.zeros((self.size, self.size))

    def edge_directions(self) -> list[np.ndarray]:
        return []

    def batch_key(self):
        """Terms with equal keys can be evaluated together by one batch."""
        return (type(self), self.size)

    @classmethod
    def make_batch(cls, terms) -> "TermBatch":
        return TermBatch(terms)

    def _check(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if x.shape != (self.size,):
            raise UsageError(f"block of shape {x.shape} for a term of size {self.size}")
        return x

    def _require_feasible(self, x):
        if not self.contains(x):
            raise UsageError(f"{type(self).__name__}: point {x} is outside the domain")


def _ratio_step(gap_up, gap_down, d) -> float:
    """Largest t >= 0 keeping ``-gap_down <= t d <= gap_up`` componentwise."""
    t = math.inf
    with np.errstate(divide="ignore", invalid="ignore"):
        up = d > 0
        if up.any():
            t = min(t, float(np.min(np.maximum(gap_up[up], 0.0) / d[up])))
        down = d < 0
        if down.any():
            t = min(t, float(np.min(np.maximum(gap_down[down], 0.0) / -d[down])))
    return t


class BoxIndicator(NonsmoothTerm):
    """Indicator of a box ``prod_i [lower_i, upper_i]`` (bounds may be infinite)."""

    def __init__(self, lower, upper):
        self.lower = np.atleast_1d(np.asarray(lower, dtype=float))
        self.upper = np.atleast_1d(np.asarray(upper, dtype=float))
        if self.lower.shape != self.upper.shape or self.lower.ndim != 1:
            raise UsageError("box bounds must be vectors of equal length")
        if np.any(self.lower > self.upper):
            raise UsageError("box lower bound exceeds upper bound")
        self.size = self.lower.size
        self._tol_lo = FEAS_TOL * (1.0 + np.where(np.isfinite(self.lower), np.abs(self.lower), 0.0))
        self._tol_up = FEAS_TOL * (1.0 + np.where(np.isfinite(self.upper), np.abs(self.upper), 0.0))

    def __repr__(self):
        return f"{type(self).__name__}({self.lower.tolist()}, {self.upper.tolist()})"

    def value(self, x) -> float:
        x = self._check(x)
        if np.all(x >= self.lower - self._tol_lo) and np.all(x <= self.upper + self._tol_up):
            return 0.0
        return math.inf

    def domain_project(self, x) -> np.ndarray:
        return np.clip(self._check(x), self.lower, self.upper)

    def max_step(self, x, d) -> float:
        x, d = self._check(x), self._check(d)
        return _ratio_step(self.upper - x, x - self.lower, d)

    def right_derivative(self, x, d) -> float:
        d = self._check(d)
        if not np.any(d) or self.max_step(x, d) > 0.0:
            return 0.0
        return math.inf

    def active_set(self, x, eps=DEFAULT_EPS, curvature_cap=DEFAULT_CURVATURE_CAP) -> frozenset:
        x = self._check(x)
        self._require_feasible(x)
        hit = (x - self.lower <= eps) | (self.upper - x <= eps)
        return frozenset(np.flatnonzero(hit).tolist())

    def truncation_pattern(self, x, eps=DEFAULT_EPS, curvature_cap=DEFAULT_CURVATURE_CAP):
        free = np.ones(self.size, dtype=bool)
        free[list(self.active_set(x, eps, curvature_cap))] = False
        return TruncationBlock.coordinates(free)

    def edge_directions(self) -> list[np.ndarray]:
        return [e for e in np.eye(self.size)]

    @classmethod
    def make_batch(cls, terms) -> "TermBatch":
        return BoxBatch(terms)


class IntervalIndicator(BoxIndicator):
    """Indicator of a closed interval on a scalar block."""

    def __init__(self, lower: float = -math.inf, upper: float = math.inf):
        super().__init__([lower], [upper])

    def __repr__(self):
        return f"IntervalIndicator({self.lower[0]}, {self.upper[0]})"


class SimplexIndicator(NonsmoothTerm):
    """Indicator of the Gibbs simplex ``{z in R^L : z >= 0, sum(z) = 1}``."""

    def __init__(self, dim: int):
        if dim < 2:
            raise UsageError("the Gibbs simplex needs dimension >= 2")
        self.size = int(dim)

    def __repr__(self):
        return f"SimplexIndicator({self.size})"

    def value(self, x) -> float:
        x = self._check(x)
        tol = FEAS_TOL * self.size
        if np.all(x >= -tol) and abs(x.sum() - 1.0) <= tol:
            return 0.0
        return math.inf

    def domain_project(self, x) -> np.ndarray:
        return simplex_project(self._check(x))

    def max_step(self, x, d) -> float:
        x, d = self._check(x), self._check(d)
        if abs(d.sum()) > FEAS_TOL * (1.0 + np.abs(d).sum()):
            return 0.0
        return _ratio_step(np.full(self.size, math.inf), x, d)

    def right_derivative(self, x, d) -> float:
        d = self._check(d)
        if not np.any(d) or self.max_step(x, d) > 0.0:
            return 0.0
        return math.inf

    def active_set(self, x, eps=DEFAULT_EPS, curvature_cap=DEFAULT_CURVATURE_CAP) -> frozenset:
        x = self._check(x)
        self._require_feasible(x)
        return frozenset(np.flatnonzero(x <= eps).tolist())

    def truncation_pattern(self, x, eps=DEFAULT_EPS, curvature_cap=DEFAULT_CURVATURE_CAP):
        return TruncationBlock.simplex_edges(self.size, self.active_set(x, eps, curvature_cap))

    def edge_directions(self) -> list[np.ndarray]:
        eye = np.eye(self.size)
        return [eye[i] - eye[j] for i in range(self.size) for j in range(i + 1, self.size)]

    @classmethod
    def make_batch(cls, terms) -> "TermBatch":
        return SimplexBatch(terms)


class WeightedNorm(NonsmoothTerm):
    """``x -> omega * ||x||_2``; smooth everywhere except at the origin."""

    has_derivatives = True

    def __init__(self, omega: float, size: int = 2):
        if not omega > 0:
            raise UsageError("norm weight must be positive")
        self.omega = float(omega)
        self.size = int(size)

    def __repr__(self):
        return f"WeightedNorm({self.omega}, size={self.size})"

    def value(self, x) -> float:
        return self.omega * float(np.linalg.norm(self._check(x)))

    def domain_project(self, x) -> np.ndarray:
        return self._check(x).copy()

    def max_step(self, x, d) -> float:
        return math.inf

    def right_derivative(self, x, d) -> float:
        x, d = self._check(x), self._check(d)
        nx = np.linalg.norm(x)
        if nx == 0.0:
            return self.omega * float(np.linalg.norm(d))
        return self.omega * float(x @ d) / nx

    def active_set(self, x, eps=DEFAULT_EPS, curvature_cap=DEFAULT_CURVATURE_CAP) -> frozenset:
        x = self._check(x)
        return frozenset(range(self.size)) if np.linalg.norm(x) <= eps else frozenset()

    def truncation_pattern(self, x, eps=DEFAULT_EPS, curvature_cap=DEFAULT_CURVATURE_CAP):
        if self.active_set(x, eps, curvature_cap):
            return TruncationBlock.empty(self.size)
        return TruncationBlock.full(self.size)

    def derivatives(self, x, block):
        x = self._check(x)
        if block.kind == "empty":
            return super().derivatives(x, block)
        nx = float(np.linalg.norm(x))
        xh = x / nx
        return self.omega * xh, self.omega * (np.eye(self.size) - np.outer(xh, xh)) / nx

    @classmethod
    def make_batch(cls, terms) -> "TermBatch":
        return NormBatch(terms)


@dataclass(frozen=True)
class ScalarFunction:
    """Convex scalar function with first and second derivative callbacks."""

    value: Callable[[float], float]
    d1: Callable[[float], float]
    d2: Callable[[float], float]


def entropy(theta: float = 1.0) -> ScalarFunction:
    """``z -> theta z log z``; first and second derivatives blow up at 0."""

    def value(z):
        return theta * z * math.log(z) if z > 0 else 0.0

    def d1(z):
        return theta * (math.log(z) + 1.0) if z > 0 else -math.inf

    def d2(z):
        return theta / z if z > 0 else math.inf

    return ScalarFunction(value, d1, d2)


class SmoothSingularSum(NonsmoothTerm):
    """``chi_K(x) + sum_j f_j(x_j)`` with each ``f_j`` singular at 0.

    ``constraint`` defaults to the Gibbs simplex of matching dimension.
    Components where ``f_j''`` exceeds the curvature cap are treated as
    active, in addition to the constraint's own active components.
    """

    has_derivatives = True

    def __init__(self, functions: Sequence[ScalarFunction], constraint: NonsmoothTerm | None = None):
        self.functions = list(functions)
        self.size = len(self.functions)
        self.constraint = SimplexIndicator(self.size) if constraint is None else constraint
        if self.constraint.size != self.size:
            raise UsageError("constraint size does not match the number of functions")

    def __repr__(self):
        return f"SmoothSingularSum({self.size}, constraint={self.constraint!r})"

    def value(self, x) -> float:
        x = self._check(x)
        if self.constraint.value(x) == math.inf:
            return math.inf
        return float(sum(f.value(max(z, 0.0)) for f, z in zip(self.functions, x)))

    def domain_project(self, x) -> np.ndarray:
        return self.constraint.domain_project(x)

    def max_step(self, x, d) -> float:
        return self.constraint.max_step(x, d)

    def right_derivative(self, x, d) -> float:
        x, d = self._check(x), self._check(d)
        base = self.constraint.right_derivative(x, d)
        if base == math.inf:
            return base
        total = base
        for f, z, dz in zip(self.functions, x, d):
            if dz != 0.0:
                total += f.d1(max(z, 0.0)) * dz
        return total

    def active_set(self, x, eps=DEFAULT_EPS, curvature_cap=DEFAULT_CURVATURE_CAP) -> frozenset:
        x = self._check(x)
        active = set(self.constraint.active_set(x, eps, curvature_cap))
        for j, (f, z) in enumerate(zip(self.functions, x)):
            if j not in active and f.d2(z) > curvature_cap:
                active.add(j)
        return frozenset(active)

    def truncation_pattern(self, x, eps=DEFAULT_EPS, curvature_cap=DEFAULT_CURVATURE_CAP):
        active = self.active_set(x, eps, curvature_cap)
        if isinstance(self.constraint, SimplexIndicator):
            return TruncationBlock.simplex_edges(self.size, active)
        free = np.ones(self.size, dtype=bool)
        free[list(active)] = False
        return TruncationBlock.coordinates(free)

    def derivatives(self, x, block):
        x = self._check(x)
        grad = np.zeros(self.size)
        hess = np.zeros((self.size, self.size))
        for j in np.flatnonzero(block.support):
            grad[j] = self.functions[j].d1(x[j])
            hess[j, j] = self.functions[j].d2(x[j])
        return grad, hess

    def edge_directions(self) -> list[np.ndarray]:
        return self.constraint.edge_directions()


class TermBatch:
    """Terms of one type and size acting on the rows of an ``(m, size)`` array.

    The generic batch loops over its terms; subclasses vectorize.
    """

    def __init__(self, terms):
        self.terms = list(terms)

    def value(self, X) -> float:
        total = 0.0
        for term, x in zip(self.terms, X):
            val = term.value(x)
            if val == math.inf:
                return math.inf
            total += val
        return total

    def project(self, X) -> np.ndarray:
        return np.array([t.domain_project(x) for t, x in zip(self.terms, X)]).reshape(X.shape)

    def max_step(self, X, D) -> float:
        t = math.inf
        for term, x, d in zip(self.terms, X, D):
            if np.any(d):
                t = min(t, term.max_step(x, d))
        return t

    def patterns(self, X, eps, curvature_cap) -> list[TruncationBlock]:
        return [t.truncation_pattern(x, eps, curvature_cap) for t, x in zip(self.terms, X)]


class BoxBatch(TermBatch):
    def __init__(self, terms):
        super().__init__(terms)
        self.lower = np.array([t.lower for t in self.terms])
        self.upper = np.array([t.upper for t in self.terms])
        self.tol_lo = np.array([t._tol_lo for t in self.terms])
        self.tol_up = np.array([t._tol_up for t in self.terms])

    def _feasible(self, X) -> bool:
        return bool(np.all(X >= self.lower - self.tol_lo) and np.all(X <= self.upper + self.tol_up))

    def value(self, X) -> float:
        return 0.0 if self._feasible(X) else math.inf

    def project(self, X) -> np.ndarray:
        return np.clip(X, self.lower, self.upper)

    def max_step(self, X, D) -> float:
        return _ratio_step(self.upper - X, X - self.lower, D)

    def patterns(self, X, eps, curvature_cap) -> list[TruncationBlock]:
        if not self._feasible(X):
            raise UsageError("box term: point outside the domain")
        hit = (X - self.lower <= eps) | (self.upper - X <= eps)
        if hit.shape[1] == 1:
            full, empty = TruncationBlock.full(1), TruncationBlock.empty(1)
            return [empty if h else full for h in hit[:, 0]]
        return [TruncationBlock.coordinates(~h) for h in hit]


class SimplexBatch(TermBatch):
    def __init__(self, terms):
        super().__init__(terms)
        self.size = self.terms[0].size

    def _feasible(self, X) -> bool:
        tol = FEAS_TOL * self.size
        return bool(np.all(X >= -tol) and np.all(np.abs(X.sum(axis=1) - 1.0) <= tol))

    def value(self, X) -> float:
        return 0.0 if self._feasible(X) else math.inf

    def project(self, X) -> np.ndarray:
        return simplex_project_rows(X)

    def max_step(self, X, D) -> float:
        moving = np.any(D != 0.0, axis=1)
        if not moving.any():
            return math.inf
        X, D = X[moving], D[moving]
        if np.any(np.abs(D.sum(axis=1)) > FEAS_TOL * (1.0 + np.abs(D).sum(axis=1))):
            return 0.0
        return _ratio_step(np.full(X.shape, math.inf), X, D)

    def patterns(self, X, eps, curvature_cap) -> list[TruncationBlock]:
        if not self._feasible(X):
            raise UsageError("simplex term: point outside the domain")
        hit = X <= eps
        return [TruncationBlock.simplex_edges(self.size, np.flatnonzero(h).tolist()) for h in hit]


class NormBatch(TermBatch):
    def __init__(self, terms):
        super().__init__(terms)
        self.omega = np.array([t.omega for t in self.terms])

    def value(self, X) -> float:
        return float(self.omega @ np.linalg.norm(X, axis=1))

    def project(self, X) -> np.ndarray:
        return np.array(X, dtype=float)

    def max_step(self, X, D) -> float:
        return math.inf
