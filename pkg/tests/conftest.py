import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

_CRITERIA: list[tuple[str, bool, str]] = []


class CriterionRecorder:
    def __init__(self, name: str):
        self.name = name
        self.detail = ""
        self.passed = False

    def check(self, ok: bool, detail: str) -> None:
        self.detail = detail
        self.passed = bool(ok)
        assert ok, f"{self.name}: {detail}"


@pytest.fixture
def criterion(request):
    rec = CriterionRecorder(request.node.name)
    yield rec
    _CRITERIA.append((rec.name, rec.passed, rec.detail))


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for name, ok, detail in _CRITERIA:
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  {name}  {detail}")
