import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

import itertools

from grouprbf.data import Dataset
from grouprbf.groups import GroupStructure
from grouprbf.kernel import AngleSet, ImportanceVector, RbfState, angle_bounds
from grouprbf.priors import FactorState, Hyperparams


def random_groups(rng, p):
    """Random contiguous partition of p predictors."""
    cuts = sorted(rng.choice(np.arange(1, p), size=rng.integers(0, p), replace=False)) if p > 1 else []
    bounds = [0, *cuts, p]
    return GroupStructure([list(range(a, b)) for a, b in itertools.pairwise(bounds)])


def random_angles(rng, p):
    ub = angle_bounds(p)
    return AngleSet(np.tril(rng.uniform(size=(p, p)) * ub, -1))


def random_instance(rng, n, p, v, K, r=2, gs=None, all_on=True, missing=0.0):
    """A small fully specified (data, rbf, factor) triple."""
    gs = gs or random_groups(rng, p)
    X = rng.uniform(size=(n, p))
    Y = rng.normal(size=(n, v))
    if missing:
        Y[rng.uniform(size=Y.shape) < missing] = np.nan
    gamma = np.ones(gs.M) if all_on else rng.integers(0, 2, gs.M)
    rho = np.ones(p) if all_on else rng.integers(0, 2, p)
    imp = ImportanceVector(gs, gamma, rho, rng.normal(size=p), rng.uniform(0.5, 2.0, gs.M),
                           rng.uniform(0.1, 0.9, gs.M))
    rbf = RbfState(rng.normal(size=(v, K)), rng.uniform(size=(v, K, p)), imp, random_angles(rng, p))
    factor = FactorState(
        Lambda=rng.normal(size=(v, r)),
        eta=rng.normal(size=(n, r)),
        sig1=rng.uniform(0.5, 2.0, r),
        sig2=rng.uniform(0.5, 2.0, v),
        phi=rng.uniform(0.5, 2.0, (v, r)),
        delta=rng.uniform(0.5, 2.0, r),
    )
    return Dataset(X, Y), gs, rbf, factor


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture
def hp():
    return Hyperparams()


@pytest.fixture
def record(pytestconfig):
    """Append one acceptance verdict line; they are echoed at the end of the session."""
    lines = pytestconfig.stash.setdefault(_LINES, [])

    def emit(name, ok, detail):
        line = f"{name}: {'PASS' if ok else 'FAIL'}  {detail}"
        print(line)
        lines.append(line)
        return ok
    return emit


_LINES = pytest.StashKey[list]()


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(_LINES, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
