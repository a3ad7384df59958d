import pytest

_OUTCOMES: dict[int, dict] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion checked by the test")


@pytest.fixture
def detail(request):
    """Callable that attaches a one-line measurement to the criterion summary."""
    lines = []
    request.node.criterion_detail = lines
    return lines.append


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None or report.when not in ("setup", "call"):
        return
    number, title = marker.args
    entry = _OUTCOMES.setdefault(number, {"title": title, "passed": True, "detail": []})
    if report.failed:
        entry["passed"] = False
    if report.when == "call":
        entry["detail"] += getattr(item, "criterion_detail", [])


def pytest_terminal_summary(terminalreporter):
    if not _OUTCOMES:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_OUTCOMES):
        entry = _OUTCOMES[number]
        status = "PASS" if entry["passed"] else "FAIL"
        extra = f" ({'; '.join(entry['detail'])})" if entry["detail"] else ""
        terminalreporter.write_line(f"criterion {number:2d} {status}: {entry['title']}{extra}")
