import pytest

# criterion id -> (passed, detail); filled by test_acceptance.py
ACCEPTANCE: dict[int, tuple[bool, str]] = {}


def record(criterion: int, passed: bool, detail: str):
    ACCEPTANCE[criterion] = (passed, detail)
    print(f"criterion {criterion}: {'PASS' if passed else 'FAIL'} {detail}")


@pytest.fixture
def acceptance():
    return record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for c in sorted(ACCEPTANCE):
        passed, detail = ACCEPTANCE[c]
        terminalreporter.write_line(f"criterion {c}: {'PASS' if passed else 'FAIL'}  {detail}")
