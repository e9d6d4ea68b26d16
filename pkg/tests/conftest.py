"""Collects the acceptance verdict lines and prints them after the test run."""
import pytest

ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def verdict():
    def report(criterion: str, checks):
        ok = all(c.passed for c in checks)
        ACCEPTANCE_LINES.append(f"[{'PASS' if ok else 'FAIL'}] {criterion}")
        ACCEPTANCE_LINES.extend(f"    {c.line()}" for c in checks)
        print("\n".join(ACCEPTANCE_LINES[-len(checks) - 1:]))
        return ok

    return report


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
