import pytest

_results: dict[int, list] = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    if report.when == "call" or (report.when == "setup" and not report.passed):
        n = marker.args[0]
        detail = "; ".join(str(v) for k, v in item.user_properties if k == "detail")
        _results.setdefault(n, []).append((item.name, report.outcome, detail))


def pytest_terminal_summary(terminalreporter):
    if not _results:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_results):
        rows = _results[n]
        ok = all(outcome == "passed" for _, outcome, _ in rows)
        details = [d for _, _, d in rows if d]
        line = f"criterion {n}: {'PASS' if ok else 'FAIL'}"
        if details:
            line += "  (" + "; ".join(details) + ")"
        terminalreporter.write_line(line)
