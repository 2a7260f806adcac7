import math

import numpy as np
import pytest

from tnnmg.core import BlockSparseMatrix, SeparableFunctional, UsageError
from tnnmg.driver import SolveConfig, solve, tnnmg_step
from tnnmg.linsolve import LinearSolverConfig
from tnnmg.nonsmooth import BoxIndicator
from tnnmg.oracle import oracle_block_minimize
from tnnmg.problems import (PROBLEMS, build, build_friction_norm_1d, build_minsurf_box_1d,
                            build_obstacle_1d, build_obstacle_2d, build_phasefield_simplex_1d,
                            build_phasefield_simplex_2d)

# energies from converged runs; the level-6 obstacle value also matches the
# coordinate descent oracle
PINNED = {
    ("obstacle1d", 4): -1.147578125,
    ("obstacle1d", 6): -1.1532400790127844,
    ("obstacle2d", 4): -0.8781308905735629,
    ("minsurf1d", 4): math.sqrt(2.0),
    ("phasefield1d", 4): 3.954806956327559,
    ("phasefield2d", 4): -58.47079154715122,
    ("friction1d", 4): -0.019545339517987315,
}


def _solve(inst, cfg=None):
    return solve(inst.functional, inst.initial, cfg or SolveConfig(), inst.hierarchy)


def test_obstacle_single_node_clamps():
    inst = build_obstacle_1d(1)
    f = inst.functional
    assert f.n == 1
    assert f.smooth.A.toarray()[0, 0] == 4.0
    assert f.smooth.b[0] == -5.0
    # unconstrained minimizer -5/4 lies below the obstacle
    u, report = _solve(inst)
    assert u[0] == -0.15


def test_obstacle_without_load():
    for build_fn in (build_obstacle_1d, build_obstacle_2d):
        inst = build_fn(3, load=0.0)
        u, report = _solve(inst)
        assert np.abs(u).max() <= 1e-12


def test_obstacle_bounds_validated():
    with pytest.raises(UsageError):
        build_obstacle_1d(3, lower=1.0, upper=0.0)
    with pytest.raises(UsageError):
        build_obstacle_2d(3, lower=1.0, upper=0.0)
    with pytest.raises(UsageError):
        build_obstacle_1d(0)


def test_minimal_surface_is_straight_line():
    inst = build_minsurf_box_1d(5)
    u, report = _solve(inst)
    x = np.arange(1, inst.n + 1) / 2 ** 5
    assert np.abs(u - x).max() <= 1e-8
    assert abs(report.final_energy - math.sqrt(2.0)) <= 1e-12


def test_minimal_surface_box_active():
    inst = build_minsurf_box_1d(4, upper=0.5, right=1.0)
    u, report = _solve(inst)
    assert report.converged
    assert u.max() == 0.5
    assert np.all(np.diff(u) >= -1e-12)


@pytest.mark.parametrize("build_fn", [build_phasefield_simplex_1d, build_phasefield_simplex_2d])
def test_phasefield_symmetric_data(build_fn):
    inst = build_fn(3, amplitude=0.0)
    u, report = _solve(inst)
    assert np.abs(u - 1 / 3).max() <= 1e-10


def test_phasefield_blocks_sum_to_one():
    inst = build_phasefield_simplex_1d(4, L=4, seed=3)
    u, report = _solve(inst)
    assert np.abs(u.reshape(-1, 4).sum(axis=1) - 1.0).max() <= 1e-15
    assert u.min() >= 0.0
    with pytest.raises(UsageError):
        build_phasefield_simplex_1d(3, c=0.0)


def test_phasefield_seed_changes_data():
    a = build_phasefield_simplex_1d(3, seed=0).functional.smooth.b
    b = build_phasefield_simplex_1d(3, seed=1).functional.smooth.b
    assert not np.array_equal(a, b)
    assert np.array_equal(a, build_phasefield_simplex_1d(3, seed=0).functional.smooth.b)


def test_friction_large_weight_sticks():
    inst = build_friction_norm_1d(4, omega=1e3)
    f = inst.functional
    zero = np.zeros(f.n)
    # 0 is in the subdifferential: every exact block solve stays at 0
    for k in range(f.structure.num_blocks):
        assert not np.any(oracle_block_minimize(f, zero, k))
    u, report = _solve(inst)
    assert not np.any(u)


def test_friction_without_weight_is_newton():
    inst = build_friction_norm_1d(4)
    f = inst.functional
    free = [BoxIndicator([-math.inf] * 2, [math.inf] * 2) for _ in range(f.structure.num_blocks)]
    g = SeparableFunctional(f.smooth, free, f.structure)
    u0 = np.zeros(g.n)
    u1, _ = tnnmg_step(g, u0, SolveConfig(linear=LinearSolverConfig(kind="dense")))
    assert np.linalg.norm(g.gradient(u1)) <= 1e-10 * np.linalg.norm(g.gradient(u0))
    with pytest.raises(UsageError):
        build_friction_norm_1d(3, omega=0.0)


def test_friction_has_stuck_and_sliding_nodes():
    inst = build_friction_norm_1d(5)
    u, report = _solve(inst)
    norms = np.linalg.norm(u.reshape(-1, 2), axis=1)
    assert 0 < np.count_nonzero(norms == 0.0) < norms.size


@pytest.mark.parametrize("name", sorted(PROBLEMS))
def test_instances_consistent(name):
    inst = build(name, 3)
    f = inst.functional
    assert inst.hierarchy.finest.n == f.n == inst.n
    assert inst.structure is f.structure
    assert f.is_feasible(inst.initial)
    assert math.isfinite(f.value(inst.initial))
    H = f.hessian(inst.initial).toarray()
    assert np.array_equal(H, H.T)
    assert np.linalg.eigvalsh(H).min() > 0.0


def test_unknown_problem():
    with pytest.raises(UsageError, match="unknown problem"):
        build("nosuch", 3)


@pytest.mark.parametrize("key", sorted(PINNED))
def test_pinned_energies(key):
    name, level = key
    u, report = _solve(build(name, level))
    assert report.converged
    assert abs(report.final_energy - PINNED[key]) <= 1e-9 * (1 + abs(PINNED[key]))


def test_pinned_obstacle_matches_oracle(oracle_runs):
    inst, u, report, ref = oracle_runs["obstacle1d"]
    assert inst.level == 6
    assert abs(ref.energy - PINNED[("obstacle1d", 6)]) <= 1e-8
