import os
from pathlib import Path

import pytest
from hypothesis import HealthCheck, settings

settings.register_profile("default", deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

ASSET_DIR = Path(os.environ.get("REXFLOW_ASSETS", Path(__file__).resolve().parent.parent / "assets"))


@pytest.fixture
def assets() -> Path:
    return ASSET_DIR


ACCEPTANCE_RESULTS: dict[int, tuple[str, str]] = {}
ACCEPTANCE_COUNT = 7


@pytest.fixture
def record():
    """Store one status line per acceptance criterion for the terminal summary."""
    def _record(criterion: int, ok, detail: str) -> None:
        status = ok if isinstance(ok, str) else ("PASS" if ok else "FAIL")
        ACCEPTANCE_RESULTS[criterion] = (status, detail)
        print(f"criterion {criterion}: {status} {detail}")
    return _record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in range(1, ACCEPTANCE_COUNT + 1):
        status, detail = ACCEPTANCE_RESULTS.get(n, ("FAIL", "did not complete"))
        terminalreporter.write_line(f"criterion {n}: {status}  {detail}")
