import itertools
import math

import numpy as np
import pytest

from tnnmg.core import BlockSparseMatrix, BlockStructure, SeparableFunctional, UsageError
from tnnmg.nonsmooth import IntervalIndicator, SimplexIndicator
from tnnmg.postprocess import RHO_MAX, damp, project_into_domain
from tnnmg.problems import PROBLEMS
from tnnmg.smooth import QuadraticSmooth


def _quadratic(A, b, terms, sizes=None):
    s = BlockStructure(sizes or [1] * len(b))
    return SeparableFunctional(QuadraticSmooth(BlockSparseMatrix(s, np.asarray(A, float)),
                                               np.asarray(b, float)), terms, s)


def _product_simplex_projection(y, L):
    """Projection onto a product of simplices via joint support enumeration and KKT solves."""
    n = y.size
    m = n // L
    best, best_val = None, math.inf
    supports = [S for r in range(1, L + 1) for S in itertools.combinations(range(L), r)]
    for choice in itertools.product(supports, repeat=m):
        free = [k * L + i for k, S in enumerate(choice) for i in S]
        # minimize 1/2 |z - y|^2 on the free set subject to block sums 1
        C = np.zeros((m, len(free)))
        for col, idx in enumerate(free):
            C[idx // L, col] = 1.0
        K = np.block([[np.eye(len(free)), C.T], [C, np.zeros((m, m))]])
        sol = np.linalg.solve(K, np.concatenate([y[free], np.ones(m)]))
        z = np.zeros(n)
        z[free] = sol[:len(free)]
        if z.min() < -1e-12:
            continue
        val = 0.5 * np.sum((z - y) ** 2)
        if val < best_val:
            best, best_val = z, val
    return best


def test_feasible_correction_unchanged():
    f = _quadratic(np.eye(3), np.zeros(3), [IntervalIndicator(-1, 1)] * 3)
    u = np.array([0.0, 0.5, -0.5])
    v = np.array([0.2, 0.1, -0.4])
    assert np.array_equal(project_into_domain(f, u, v), v)


def test_obstacle_component_clamped():
    f = _quadratic(np.eye(3), np.zeros(3), [IntervalIndicator(-0.15, 0.15)] * 3)
    u = np.array([0.0, -0.1, 0.1])
    v = np.array([0.05, -0.2, 0.01])
    vt = project_into_domain(f, u, v)
    assert np.allclose(vt, [0.05, -0.05, 0.01], atol=1e-16)


@pytest.mark.parametrize("blocks", [2, 3, 4])
def test_simplex_blocks_match_whole_vector_oracle(blocks, rng):
    L = 3
    n = blocks * L
    terms = [SimplexIndicator(L) for _ in range(blocks)]
    f = _quadratic(np.eye(n), np.zeros(n), terms, [L] * blocks)
    for _ in range(5):
        u = f.project(rng.normal(size=n))
        v = rng.normal(size=n)
        vt = project_into_domain(f, u, v)
        ref = _product_simplex_projection(u + v, L)
        assert np.abs(u + vt - ref).max() <= 1e-12


def _ray_quadratic(t_star):
    # J(t v) = t^2/2 - t_star t along v = e_1
    f = _quadratic(np.eye(2), [t_star, 0.0], [IntervalIndicator()] * 2)
    return f, np.zeros(2), np.array([1.0, 0.0])


def test_damping_quadratic_minimum():
    f, u, v = _ray_quadratic(0.3)
    assert abs(damp(f, u, v, rho_max=2.0) - 0.3) <= 1e-10


def test_damping_overrelaxation_capped():
    f, u, v = _ray_quadratic(10.0)
    assert damp(f, u, v) == pytest.approx(RHO_MAX, abs=1e-10)


def test_damping_ascent_direction_rejected():
    f, u, v = _ray_quadratic(-1.0)
    assert damp(f, u, v) == 0.0


def test_damping_zero_correction():
    f, u, _ = _ray_quadratic(1.0)
    assert damp(f, u, np.zeros(2)) == 0.0


def test_damping_respects_domain():
    f = _quadratic(np.eye(1), [10.0], [IntervalIndicator(0, 1)])
    rho = damp(f, np.array([0.0]), np.array([0.5]))
    assert rho == pytest.approx(2.0, abs=1e-10)


def test_damping_validation():
    f, u, v = _ray_quadratic(1.0)
    with pytest.raises(UsageError):
        damp(f, u, v, rho_max=0.0)
    g = _quadratic(np.eye(1), [0.0], [IntervalIndicator(0, 1)])
    with pytest.raises(UsageError):
        damp(g, np.array([2.0]), np.array([-1.0]))


def _energy_on_grid(f, u, v, ts):
    return np.array([f.value(u + t * v) for t in ts])


@pytest.mark.parametrize("name", sorted(PROBLEMS))
def test_damping_vs_grid_search(name, rng):
    inst = PROBLEMS[name](2 if name.endswith("2d") else 3)
    f = inst.functional
    ts = np.linspace(0.0, RHO_MAX, 801)
    for _ in range(10):
        u = f.project(inst.initial + 0.3 * rng.normal(size=f.n))
        vt = project_into_domain(f, u, 0.5 * rng.normal(size=f.n))
        rho = damp(f, u, vt)
        j = f.value(u + rho * vt)
        j0, j1 = f.value(u), f.value(u + vt)
        assert math.isfinite(j)
        assert j <= min(j0, j1) + 1e-12 * (1 + abs(j0))
        assert j <= _energy_on_grid(f, u, vt, ts).min() + 1e-10 * (1 + abs(j0))


def test_projection_beats_pure_damping_in_corner_geometry(rng):
    # unit square, iterate near the lower right corner, Newton step leaving
    # through the right face; near-isotropic convex quadratics
    u = np.array([0.875, 0.125])
    target = np.array([1.375, 0.875])
    v = target - u
    terms = [IntervalIndicator(0.0, 1.0)] * 2
    for _ in range(200):
        theta = rng.uniform(0, np.pi)
        Q = np.array([[np.cos(theta), -np.sin(theta)], [np.sin(theta), np.cos(theta)]])
        A = Q @ np.diag([1.0, rng.uniform(1.0, 3.0)]) @ Q.T
        f = _quadratic(A, A @ target, terms)
        vt = project_into_domain(f, u, v)
        j_proj = f.value(u + damp(f, u, vt) * vt)
        ts = np.linspace(0.0, f.max_step(u, v), 4001)
        Z = u + ts[:, None] * v
        j_pure = (0.5 * np.einsum("ti,ij,tj->t", Z, A, Z) - Z @ (A @ target)).min()
        assert j_proj <= j_pure + 1e-12
