import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile(
    "default", deadline=None, max_examples=40,
    suppress_health_check=[HealthCheck.too_slow, HealthCheck.function_scoped_fixture],
)
settings.load_profile("default")


@pytest.fixture(scope="session")
def db2():
    from trimult.wavelet_frame import build_wavelet_system
    return build_wavelet_system(2, 8)


@pytest.fixture(scope="session")
def db3():
    from trimult.wavelet_frame import build_wavelet_system
    return build_wavelet_system(3, 8)


@pytest.fixture(scope="session")
def haar():
    from trimult.wavelet_frame import build_wavelet_system
    return build_wavelet_system(1, 8)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


_CRITERIA: dict[int, str] = {}


@pytest.fixture
def criterion():
    """Record one PASS/FAIL line per acceptance criterion; returns the verdict."""
    def record(num: int, ok: bool, detail: str) -> bool:
        line = f"{'PASS' if ok else 'FAIL'} criterion {num}: {detail}"
        _CRITERIA[num] = line
        print(line)
        return ok
    return record


def pytest_terminal_summary(terminalreporter):
    if _CRITERIA:
        terminalreporter.section("acceptance criteria")
        for num in sorted(_CRITERIA):
            terminalreporter.write_line(_CRITERIA[num])
