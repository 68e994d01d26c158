import pytest

# acceptance verdicts, printed as one line each at the end of the run
VERDICTS: dict[int, tuple[str, str]] = {}


@pytest.fixture
def verdict():
    def record(n: int, ok: bool, detail: str = "") -> bool:
        VERDICTS[n] = ("PASS" if ok else "FAIL", detail)
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if not VERDICTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(VERDICTS):
        status, detail = VERDICTS[n]
        terminalreporter.write_line(f"criterion {n:2d}: {status}  {detail}")
