"""Shared pytest wiring: prints one summary line per acceptance criterion.

Each criterion test in test_acceptance.py gets an immediate best-effort
PASS/FAIL line plus a guaranteed block in the terminal summary, so the
verdicts survive any capture mode, including fixture-stage failures.
"""

import sys

_verdicts: dict[str, str] = {}


def _criterion_label(nodeid: str) -> str | None:
    if "test_acceptance.py" not in nodeid:
        return None
    name = nodeid.rsplit("::", 1)[-1]
    if not name.startswith("test_c"):
        return None
    parts = name[len("test_c"):].split("_", 1)
    num = parts[0].lstrip("0") or "0"
    topic = parts[1].replace("_", " ") if len(parts) > 1 else ""
    return f"criterion {num:>2s} ({topic})"


def pytest_runtest_logreport(report):
    label = _criterion_label(report.nodeid)
    if label is None or label in _verdicts:
        return
    if report.when == "call" or (report.failed and report.when == "setup"):
        verdict = "PASS" if report.passed else ("FAIL" if report.failed else "SKIP")
        _verdicts[label] = verdict
        print(f"[acceptance] {label}: {verdict}", file=sys.__stdout__, flush=True)


def pytest_terminal_summary(terminalreporter):
    if not _verdicts:
        return
    terminalreporter.write_line("")
    terminalreporter.write_line("acceptance criteria")
    for label in sorted(_verdicts, key=lambda s: int(s.split()[1])):
        terminalreporter.write_line(f"  {label}: {_verdicts[label]}")
