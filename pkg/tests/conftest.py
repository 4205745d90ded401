import pytest

# (number, "PASS"/"FAIL", text) lines recorded by the acceptance tests
CRITERIA: list = []


def record(number: int, ok: bool, text: str) -> None:
    line = f"criterion {number:2d}: {'PASS' if ok else 'FAIL'}  {text}"
    CRITERIA.append((number, line))
    print(line)


def pytest_terminal_summary(terminalreporter):
    if not CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for _, line in sorted(CRITERIA):
        terminalreporter.write_line(line)


@pytest.fixture
def criterion():
    return record
