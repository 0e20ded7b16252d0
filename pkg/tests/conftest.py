import re
import time

import pytest

ACCEPTANCE: dict[int, tuple[bool, str]] = {}


@pytest.fixture
def criterion(request):
    """Record one PASS/FAIL line for an acceptance test named ``test_cNN_*``."""
    number = int(re.match(r"test_c(\d+)_", request.node.name).group(1))
    start = time.perf_counter()
    box = {}

    def report(passed: bool, detail: str) -> bool:
        box["result"] = (bool(passed), f"{detail} [{time.perf_counter() - start:.1f}s]")
        line = f"criterion {number:2d}: {'PASS' if passed else 'FAIL'}  {box['result'][1]}"
        print(line)
        return bool(passed)

    report.elapsed = lambda: time.perf_counter() - start
    yield report
    ACCEPTANCE[number] = box.get("result", (False, "error before a result was recorded"))


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE):
        passed, detail = ACCEPTANCE[number]
        terminalreporter.write_line(f"criterion {number:2d}: {'PASS' if passed else 'FAIL'}  {detail}")
