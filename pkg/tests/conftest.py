import pytest

_LINES: dict[int, tuple[bool, str]] = {}


@pytest.fixture(scope="session")
def criterion():
    """Record one pass/fail line per acceptance criterion and return the verdict."""

    def record(n: int, ok: bool, detail: str) -> bool:
        prev = _LINES.get(n)
        if prev is not None:
            ok, detail = prev[0] and ok, f"{prev[1]}; {detail}"
        _LINES[n] = (bool(ok), detail)
        print(f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
        return bool(ok)

    return record


def pytest_terminal_summary(terminalreporter):
    if not _LINES:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_LINES):
        ok, detail = _LINES[n]
        terminalreporter.write_line(f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
