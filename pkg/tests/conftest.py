"""Collects acceptance results and prints one line per criterion at the end of the run."""
from collections import OrderedDict

ACCEPTANCE = OrderedDict()  # criterion number -> list of (part, ok, detail)


def record(criterion: int, part: str, ok: bool, detail: str = "") -> None:
    ACCEPTANCE.setdefault(criterion, []).append((part, bool(ok), detail))


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for number in sorted(ACCEPTANCE):
        parts = ACCEPTANCE[number]
        failed = [p for p in parts if not p[1]]
        status = "PASS" if not failed else "FAIL"
        summary = f"{len(parts) - len(failed)}/{len(parts)} checks"
        if failed:
            summary += "; failing: " + ", ".join(f"{p[0]} ({p[2]})" if p[2] else p[0] for p in failed)
        elif len(parts) <= 3:
            summary += "; " + "; ".join(f"{p[0]}: {p[2]}" if p[2] else p[0] for p in parts)
        tr.write_line(f"criterion {number}: {status}  {summary}")
