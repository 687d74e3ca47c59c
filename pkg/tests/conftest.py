from __future__ import annotations

import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

_ACCEPTANCE: list[tuple[int, str, bool, str]] = []


class AcceptanceLog:
    """Collects one line per acceptance check; printed at the end of the session."""

    def record(self, criterion: int, name: str, ok: bool, detail: str = "") -> bool:
        _ACCEPTANCE.append((criterion, name, bool(ok), detail))
        return bool(ok)


@pytest.fixture(scope="session")
def acceptance() -> AcceptanceLog:
    return AcceptanceLog()


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for crit, name, ok, detail in sorted(_ACCEPTANCE, key=lambda r: r[0]):
        tr.write_line(f"[{'PASS' if ok else 'FAIL'}] C{crit:02d} {name}: {detail}")
