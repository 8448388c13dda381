import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile("default", max_examples=60, deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


def cdf_w1(atoms_a, weights_a, atoms_b, weights_b) -> float:
    """1-D Wasserstein distance as the integral of |F_a - F_b|; independent of any LP."""
    pts = np.unique(np.concatenate([atoms_a, atoms_b]))
    Fa = np.array([np.sum(weights_a[atoms_a <= t]) for t in pts[:-1]])
    Fb = np.array([np.sum(weights_b[atoms_b <= t]) for t in pts[:-1]])
    return float(np.sum(np.abs(Fa - Fb) * np.diff(pts)))


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def pytest_terminal_summary(terminalreporter):
    mod = __import__("sys").modules.get("test_acceptance")
    results = getattr(mod, "RESULTS", None)
    if results:
        terminalreporter.section("acceptance criteria")
        for n in sorted(results):
            terminalreporter.write_line(results[n])
