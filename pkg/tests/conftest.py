import functools
import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from wpstab.bohm import BohmParams, solve_bohm  # noqa: E402


@functools.lru_cache(maxsize=None)
def bohm(p, q, alpha, n_points=4001):
    """Solves are the slow part of the suite; share them across modules."""
    return solve_bohm(BohmParams(p, q, alpha, n_points=n_points))


@pytest.fixture(scope="session")
def solve():
    return bohm
