import pytest

from capstep.calibration import calibrate
from capstep.plant import PlantConfig

# (criterion, passed, detail) lines filled in by the acceptance suite
ACCEPTANCE = []


@pytest.fixture(scope="session")
def default_cal():
    return calibrate(PlantConfig())


@pytest.fixture(scope="session")
def ideal_cal():
    return calibrate(PlantConfig.ideal())


@pytest.fixture
def verdict():
    def record(n: int, ok: bool, detail: str) -> bool:
        ACCEPTANCE.append((n, ok, detail))
        print(f"criterion {n}: {'PASS' if ok else 'FAIL'}  {detail}")
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n, ok, detail in sorted(ACCEPTANCE):
        terminalreporter.write_line(f"criterion {n}: {'PASS' if ok else 'FAIL'}  {detail}")
