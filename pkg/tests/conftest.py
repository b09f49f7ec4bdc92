"""Shared pytest plumbing for the acceptance gate.

test_acceptance.py records one verdict per numbered criterion through
record_criterion; this hook prints them as a single PASS/FAIL line each at
the end of the run, so the terminal (and any teed log) always carries a
compact per-criterion summary.
"""

_CRITERIA: dict[int, tuple[bool, str]] = {}


def record_criterion(num: int, ok: bool, detail: str) -> None:
    _CRITERIA[num] = (bool(ok), detail)


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for num in sorted(_CRITERIA):
        ok, detail = _CRITERIA[num]
        terminalreporter.write_line(f"criterion {num:2d} {'PASS' if ok else 'FAIL'} - {detail}")
