import re

_CRITERION = re.compile(r"test_acceptance\.py::test_criterion_(\d+)")


def pytest_terminal_summary(terminalreporter):
    """One PASS/FAIL line per acceptance criterion."""
    lines = {}
    for outcome in ("passed", "failed", "error"):
        for rep in terminalreporter.stats.get(outcome, []):
            m = _CRITERION.search(getattr(rep, "nodeid", ""))
            if not m:
                continue
            n = int(m.group(1))
            if outcome == "passed":
                lines.setdefault(n, f"criterion {n:2d}: PASS")
            else:
                crash = getattr(rep.longrepr, "reprcrash", None)
                why = crash.message.splitlines()[0] if crash is not None else outcome
                lines[n] = f"criterion {n:2d}: FAIL  {why}"
    if lines:
        terminalreporter.section("acceptance criteria")
        for n in sorted(lines):
            terminalreporter.write_line(lines[n])
