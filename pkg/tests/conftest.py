import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from balanced_lowrank.manifold import ConstraintBasis, random_feasible

settings.register_profile(
    "repo", deadline=None, max_examples=40, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("repo")


def orthonormal(rng, d, k):
    if k == 0:
        return np.zeros((d, 0))
    q, _ = np.linalg.qr(rng.standard_normal((d, k)))
    return q


def basis_and_point(rng, d, r, k):
    """A random constraint basis and a feasible point against it."""
    g = orthonormal(rng, d, k)
    basis = ConstraintBasis(g)
    return basis, random_feasible(basis, d, r, rng)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def pytest_terminal_summary(terminalreporter):
    import sys

    module = sys.modules.get("test_acceptance")
    lines = getattr(module, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)
