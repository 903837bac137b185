"""Shared test infrastructure: the acceptance-verdict summary block."""

from __future__ import annotations

# test_acceptance.py records one verdict per numbered criterion here so the
# run always ends with an explicit pass/fail line for each, independent of
# output capture settings.
ACCEPTANCE_VERDICTS: dict[int, tuple[str, bool, str]] = {}


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not ACCEPTANCE_VERDICTS:
        return
    terminalreporter.section("acceptance criteria")
    for num in sorted(ACCEPTANCE_VERDICTS):
        label, passed, detail = ACCEPTANCE_VERDICTS[num]
        verdict = "PASS" if passed else "FAIL"
        line = f"criterion {num} ({label}): {verdict}"
        if detail:
            line += f" -- {detail}"
        terminalreporter.write_line(line)
