import math

import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings
from hypothesis import strategies as st

from tnnmg.core import (BlockSparseMatrix, BlockStructure, NumericError, SeparableFunctional,
                        UsageError, apply, evaluate, galerkin_product, gradient, hessian)
from tnnmg.linsolve import interval_prolongation
from tnnmg.nonsmooth import IntervalIndicator, WeightedNorm
from tnnmg.problems import PROBLEMS, laplacian_1d
from tnnmg.smooth import DifferenceEnergy, MinimalSurfaceDensity, QuadraticSmooth


class Free:
    """phi = 0 on a block (test helper)."""

    has_derivatives = False

    def __init__(self, size=1):
        self.size = size

    def value(self, x):
        return 0.0

    def domain_project(self, x):
        return np.asarray(x, dtype=float)

    def batch_key(self):
        return (Free, self.size)

    @classmethod
    def make_batch(cls, terms):
        from tnnmg.nonsmooth import TermBatch
        return TermBatch(terms)


def quadratic(A, b=None, terms=None, sizes=None):
    s = BlockStructure(sizes or [1] * A.shape[0])
    terms = terms or [Free(n) for n in s.block_sizes]
    return SeparableFunctional(QuadraticSmooth(BlockSparseMatrix(s, A), b), terms, s)


@given(st.lists(st.integers(1, 4), min_size=1, max_size=12))
def test_block_views_reassemble(sizes):
    s = BlockStructure(sizes)
    assert s.offsets[0] == 0 and s.offsets[-1] == s.n == sum(sizes)
    v = np.arange(s.n, dtype=float)
    parts = s.blocks(v)
    assert [p.size for p in parts] == sizes
    assert np.array_equal(np.concatenate(parts), v)
    owner = np.repeat(np.arange(len(sizes)), sizes)
    assert owner.size == s.n


def test_structure_rejects_bad_input():
    with pytest.raises(UsageError):
        BlockStructure([2, 0])
    with pytest.raises(UsageError):
        BlockStructure.uniform(3, 2).check(np.zeros(5))


def test_evaluate_quadratic_identity():
    f = quadratic(np.eye(2))
    assert evaluate(f, np.array([3.0, 4.0])) == 12.5


def test_evaluate_infeasible_is_inf():
    f = quadratic(np.eye(2), terms=[IntervalIndicator(0.0, 1.0), Free()])
    assert evaluate(f, np.array([2.0, 0.0])) == math.inf


def test_evaluate_minimal_surface_flat():
    s = BlockStructure.uniform(3)
    D = sp.csr_matrix(np.array([[1.0, -1.0, 0.0], [0.0, 1.0, -1.0]]))
    energy = DifferenceEnergy(s, D, np.ones(2), np.zeros(2), MinimalSurfaceDensity())
    f = SeparableFunctional(energy, [Free() for _ in range(3)], s)
    assert evaluate(f, np.full(3, 0.7)) == 2.0


def test_evaluate_non_finite_smooth_part():
    f = quadratic(np.eye(2))
    with pytest.raises(NumericError):
        evaluate(f, np.array([np.nan, 0.0]))


def test_evaluate_structure_mismatch():
    f = quadratic(np.eye(2))
    with pytest.raises(UsageError):
        evaluate(f, np.zeros(3))


def test_gradient_at_zero_is_minus_b():
    b = np.array([1.0, -2.0, 0.5])
    f = quadratic(np.diag([1.0, 2.0, 3.0]), b)
    assert np.array_equal(gradient(f, np.zeros(3)), -b)


def test_minimal_surface_density_derivatives_at_zero():
    gam = MinimalSurfaceDensity()
    assert gam.d1(0.0) == 0.0
    assert gam.d2(0.0) == 1.0


def test_quadratic_hessian_constant(rng):
    M = rng.normal(size=(4, 4))
    A = M @ M.T + np.eye(4)
    f = quadratic(A)
    for _ in range(3):
        assert np.allclose(hessian(f, rng.normal(size=4)).toarray(), A, atol=1e-15)


def _fd_checks(f, v, rng, ndirs=10):
    J0 = f.smooth.value
    g = gradient(f, v)
    H = hessian(f, v)
    for _ in range(ndirs):
        d = rng.normal(size=v.size)
        d /= np.linalg.norm(d)
        h = 1e-6
        fd = (J0(v + h * d) - J0(v - h * d)) / (2 * h)
        assert abs(fd - g @ d) <= 1e-6 * (1 + abs(J0(v)))
        hd = (gradient(f, v + h * d) - gradient(f, v - h * d)) / (2 * h)
        assert np.linalg.norm(hd - H @ d) <= 1e-5 * (1 + np.linalg.norm(H @ d))


def test_random_quadratic_finite_differences(rng):
    M = rng.normal(size=(6, 6))
    f = quadratic(M @ M.T + np.eye(6), rng.normal(size=6))
    _fd_checks(f, rng.normal(size=6), rng)


@pytest.mark.parametrize("name", sorted(PROBLEMS))
def test_problem_finite_differences(name, rng):
    inst = PROBLEMS[name](3)
    f = inst.functional
    for _ in range(5):
        v = f.project(inst.initial + 0.1 * rng.normal(size=f.n))
        _fd_checks(f, v, rng, ndirs=4)


def test_galerkin_identity_prolongation():
    s = BlockStructure.uniform(5)
    A = BlockSparseMatrix(s, laplacian_1d(5, 1 / 6))
    assert np.allclose(galerkin_product(sp.identity(5), A).toarray(), A.toarray(), atol=0)


def test_galerkin_matches_dense_triple_product():
    A = BlockSparseMatrix(BlockStructure.uniform(7), sp.diags([-1.0, 2.0, -1.0], [-1, 0, 1], shape=(7, 7)))
    P = interval_prolongation(3)
    dense = P.toarray().T @ A.toarray() @ P.toarray()
    Ac = galerkin_product(P, A)
    assert np.abs(Ac.toarray() - dense).max() <= 1e-12 * np.abs(dense).max()
    assert Ac.symmetry_error() == 0.0
    # coarse stencil of the linear-interpolation Galerkin product
    assert np.allclose(np.diag(Ac.toarray()), 1.0)
    assert np.allclose(np.diag(Ac.toarray(), 1), -0.5)


def test_galerkin_dimension_mismatch():
    A = BlockSparseMatrix(BlockStructure.uniform(7), sp.identity(7))
    with pytest.raises(UsageError):
        galerkin_product(sp.identity(5), A)


def test_apply_zero():
    A = BlockSparseMatrix(BlockStructure.uniform(4, 2), sp.random(8, 8, 0.5, random_state=1))
    assert np.array_equal(apply(A, np.zeros(8)), np.zeros(8))


def test_block_sparse_pattern_and_blocks(rng):
    s = BlockStructure([1, 2, 2])
    blocks = {(0, 1): rng.normal(size=(1, 2)), (1, 0): None, (2, 2): rng.normal(size=(2, 2))}
    blocks[(1, 0)] = blocks[(0, 1)].T
    A = BlockSparseMatrix.from_blocks(s, blocks)
    pattern = A.block_pattern()
    assert {(k, k) for k in range(3)} <= pattern
    for i, j in pattern:
        assert (j, i) in pattern
    assert np.array_equal(A.block(0, 1), blocks[(0, 1)])
    rows = A.block_rows()
    assert [j for j, _ in rows[1]] == [0, 1]
    assert np.array_equal(A.diagonal_block(2), blocks[(2, 2)])


def test_diagonal_stack_matches_blocks(rng):
    s = BlockStructure.uniform(6, 3)
    M = sp.random(18, 18, 0.4, random_state=3).toarray()
    A = BlockSparseMatrix(s, M + M.T)
    for k in range(6):
        sl = s.slice(k)
        assert np.array_equal(A.diagonal_stack[k], (M + M.T)[sl, sl])


def test_infinite_exactly_when_block_infeasible(rng):
    terms = [IntervalIndicator(-1, 1), WeightedNorm(1.0, 2), IntervalIndicator(0, 2)]
    f = quadratic(np.eye(4), sizes=[1, 2, 1], terms=terms)
    for _ in range(200):
        v = rng.uniform(-2, 3, size=4)
        infeasible = not (-1 <= v[0] <= 1) or not (0 <= v[3] <= 2)
        assert (evaluate(f, v) == math.inf) == infeasible


def test_term_size_mismatch():
    with pytest.raises(UsageError):
        quadratic(np.eye(2), terms=[WeightedNorm(1.0, 2), Free()])
