"""Collects the acceptance PASS/FAIL lines and prints them at the end of the session."""

RESULTS: dict[int, tuple[bool, list[str]]] = {}


def record(criterion: int, ok: bool, detail: str, append: bool = False) -> None:
    """Store the outcome of one criterion; append=True merges several checks into one line."""
    if append and criterion in RESULTS:
        prev_ok, details = RESULTS[criterion]
        RESULTS[criterion] = (prev_ok and bool(ok), details + [detail])
    else:
        RESULTS[criterion] = (bool(ok), [detail])
    print(line(criterion))


def line(criterion: int) -> str:
    ok, details = RESULTS[criterion]
    return f"criterion {criterion:2d}: {'PASS' if ok else 'FAIL'}  {' | '.join(details)}"


def pytest_terminal_summary(terminalreporter):
    if not RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for c in sorted(RESULTS):
        terminalreporter.write_line(line(c))
