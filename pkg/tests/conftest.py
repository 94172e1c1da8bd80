"""Shared pytest glue: collects acceptance-criterion verdicts and prints one
PASS/FAIL line per criterion in the terminal summary, where output capture
cannot swallow them."""

_CRITERIA = {}


def record_criterion(num, name, ok, detail):
    _CRITERIA[num] = (name, bool(ok), detail)


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for num in sorted(_CRITERIA):
        name, ok, detail = _CRITERIA[num]
        status = "PASS" if ok else "FAIL"
        terminalreporter.write_line(f"[criterion {num}] {status} {name}: {detail}")
