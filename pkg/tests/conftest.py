import pytest

_RESULTS: list[tuple[str, bool, str]] = []


@pytest.fixture
def criterion():
    """Record one acceptance line; returns the verdict so tests can assert on it."""
    def record(label: str, ok: bool, detail: str = "") -> bool:
        _RESULTS.append((label, bool(ok), detail))
        print(f"{'PASS' if ok else 'FAIL'}  {label}  {detail}")
        return bool(ok)
    return record


def pytest_terminal_summary(terminalreporter):
    if not _RESULTS:
        return
    terminalreporter.write_sep("=", "acceptance criteria")
    for label, ok, detail in _RESULTS:
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  {label}  {detail}")
