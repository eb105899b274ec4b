import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from pulsed_bhd.fockstate import DensityMatrix

settings.register_profile(
    "default", deadline=None, max_examples=25, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("default")


def random_density_matrix(dim: int, rng: np.random.Generator, rank: int | None = None) -> DensityMatrix:
    """Haar-ish random mixed state: G G^dagger / tr with a complex Gaussian G."""
    rank = dim if rank is None else rank
    g = rng.standard_normal((dim, rank)) + 1j * rng.standard_normal((dim, rank))
    r = g @ g.conj().T
    return DensityMatrix(r / np.trace(r).real)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# lines recorded by test_acceptance.py, echoed in the terminal summary
ACCEPTANCE: list[str] = []


def record_acceptance(number: int, ok: bool, detail: str) -> bool:
    line = f"[criterion {number}] {'PASS' if ok else 'FAIL'}: {detail}"
    print(line)
    ACCEPTANCE.append(line)
    return ok


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE:
            terminalreporter.write_line(line)
