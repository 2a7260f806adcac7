import numpy as np
import pytest

from tnnmg import SolveConfig, build, solve
from tnnmg.oracle import oracle_coordinate_descent

# problem name -> level used for the oracle comparisons
ORACLE_LEVELS = {"obstacle1d": 6, "minsurf1d": 5, "phasefield1d": 5, "friction1d": 5}


def compute_oracle_runs():
    out = {}
    for name, level in ORACLE_LEVELS.items():
        inst = build(name, level)
        u, report = solve(inst.functional, inst.initial, SolveConfig(), inst.hierarchy)
        ref = oracle_coordinate_descent(inst.functional, inst.initial, tol=1e-13)
        out[name] = (inst, u, report, ref)
    return out


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def oracle_runs():
    """TNNMG and oracle solutions for the small reference problems, computed once."""
    return compute_oracle_runs()
