import pytest

_ACCEPTANCE: list[tuple[str, bool, str]] = []


@pytest.fixture
def record():
    """Log one acceptance verdict; the line is repeated in the terminal summary."""
    def _record(name: str, ok: bool, detail: str) -> None:
        _ACCEPTANCE.append((name, ok, detail))
        print(f"{'PASS' if ok else 'FAIL'} {name}: {detail}")
    return _record


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for name, ok, detail in sorted(_ACCEPTANCE):
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'} {name}: {detail}")
