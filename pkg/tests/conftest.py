"""Shared test plumbing: the acceptance-criterion recorder.

Each acceptance test reports its verdict through the `criterion` fixture,
which prints one PASS/FAIL line immediately (visible with -s or in failure
output) and stores it so the terminal summary repeats every line after the
run, where default output capture cannot hide it.
"""

import pytest

_CRITERIA: list[tuple[int, str, bool, str]] = []


@pytest.fixture
def criterion():
    """Record one acceptance verdict; fails the test when ok is False."""

    def record(num: int, name: str, ok: bool, detail: str = "") -> None:
        line = f"criterion {num:02d} [{name}] {'PASS' if ok else 'FAIL'}"
        if detail:
            line += f"  {detail}"
        _CRITERIA.append((num, name, ok, detail))
        print(line)
        if not ok:
            pytest.fail(line)

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not _CRITERIA:
        return
    terminalreporter.write_sep("-", "acceptance criteria")
    for num, name, ok, detail in sorted(_CRITERIA):
        line = f"criterion {num:02d} [{name}] {'PASS' if ok else 'FAIL'}"
        if detail:
            line += f"  {detail}"
        terminalreporter.write_line(line)
