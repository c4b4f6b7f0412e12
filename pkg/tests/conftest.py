import numpy as np
import pytest

# criterion number -> (passed, detail); filled by test_acceptance
ACCEPTANCE = {}


def record(number: int, name: str, passed: bool, detail: str = "") -> None:
    ACCEPTANCE[number] = (name, bool(passed), detail)
    print(f"[{'PASS' if passed else 'FAIL'}] criterion {number}: {name} {detail}")


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE):
        name, ok, detail = ACCEPTANCE[k]
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  {k:>2}. {name}  {detail}")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
