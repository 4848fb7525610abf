import pytest


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion")
    config.criteria = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None:
        return
    if rep.when == "call" or rep.failed:
        details = [v for k, v in item.user_properties if k == "detail"]
        item.config.criteria[mark.args[0]] = (mark.args[1], rep.passed, details)


def pytest_terminal_summary(terminalreporter, config):
    if not config.criteria:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(config.criteria):
        title, passed, details = config.criteria[n]
        terminalreporter.write_line(f"criterion {n:2d}: {'PASS' if passed else 'FAIL'}  {title}")
        for d in details:
            terminalreporter.write_line(f"    {d}")


@pytest.fixture
def detail(request):
    """Attach a line of measured values to the acceptance summary."""
    return lambda msg: request.node.user_properties.append(("detail", msg))
