import pytest

# criterion number -> (passed, detail); filled by test_acceptance.py
ACCEPTANCE: dict = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for num in sorted(ACCEPTANCE):
        passed, detail = ACCEPTANCE[num]
        terminalreporter.write_line(f"criterion {num:2d}: {'PASS' if passed else 'FAIL'}  {detail}")


@pytest.fixture
def record():
    def _record(num: int, passed: bool, detail: str) -> None:
        ACCEPTANCE[num] = (bool(passed), detail)
        print(f"criterion {num}: {'PASS' if passed else 'FAIL'}  {detail}")
        assert passed, detail

    return _record
