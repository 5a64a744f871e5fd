import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from magnusctl import system

settings.register_profile(
    "default",
    deadline=None,
    max_examples=25,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.load_profile("default")

# filled by tests/test_acceptance.py, printed once at the end of the run
ACCEPTANCE_LINES = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[key])


def random_hermitian(rng, d, scale=1.0):
    a = rng.normal(size=(d, d)) + 1j * rng.normal(size=(d, d))
    return scale * (a + a.conj().T) / 2


def random_unit(rng, d):
    v = rng.normal(size=d) + 1j * rng.normal(size=d)
    return v / np.linalg.norm(v)


def random_spec(rng, dims, coupling_scale=0.1, with_terms=False, hbar=1.0):
    """Generic system with random Hermitian local parts and couplings on every pair."""
    dims = tuple(dims)
    kinetic = [random_hermitian(rng, d) for d in dims]
    control = [random_hermitian(rng, d, 0.5) for d in dims]
    couplings = []
    for i in range(len(dims)):
        for j in range(i + 1, len(dims)):
            if with_terms:
                terms = []
                for _ in range(2):
                    terms.append((coupling_scale * rng.normal(), random_hermitian(rng, dims[i]), random_hermitian(rng, dims[j])))
                matrix = sum(c * np.kron(a, b) for c, a, b in terms)
                couplings.append(system.Coupling(i, j, matrix, tuple(terms)))
            else:
                couplings.append(system.Coupling(i, j, random_hermitian(rng, dims[i] * dims[j], coupling_scale)))
    return system.SystemSpec(dims, kinetic, control, tuple(couplings), hbar=hbar)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
