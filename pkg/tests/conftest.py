from _util import ACCEPTANCE

N_CRITERIA = 9


def _touched_acceptance(reporter) -> bool:
    reports = [r for key in ("passed", "failed", "error") for r in reporter.stats.get(key, [])]
    return any("test_acceptance.py" in getattr(r, "nodeid", "") for r in reports)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE and not _touched_acceptance(terminalreporter):
        return
    terminalreporter.section("acceptance criteria")
    for n in range(1, N_CRITERIA + 1):
        if n in ACCEPTANCE:
            ok, detail = ACCEPTANCE[n]
            terminalreporter.write_line(f"criterion {n}: {'PASS' if ok else 'FAIL'}  {detail}")
        else:
            terminalreporter.write_line(f"criterion {n}: FAIL  (not run or errored)")
