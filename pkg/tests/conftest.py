import pytest

from adaptkv import _backend, numerics

BACKENDS = sorted(_backend.available_backends())


@pytest.fixture(params=BACKENDS)
def backend(request):
    """Run the test once per available kernel backend."""
    previous = numerics.backend()
    numerics.set_backend(request.param)
    yield request.param
    numerics.set_backend(previous)


_criteria = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    number, title = marker.args
    if rep.when == "call" or (rep.when == "setup" and not rep.passed):
        ok = rep.passed
        prev = _criteria.get(number, (title, True, []))
        detail = [text for name, text in item.user_properties if name == "detail"]
        _criteria[number] = (title, prev[1] and ok, prev[2] + detail)


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for number in sorted(_criteria):
        title, ok, details = _criteria[number]
        extra = f"  [{'; '.join(details)}]" if details else ""
        tr.write_line(f"{'PASS' if ok else 'FAIL'}  {number:>2}. {title}{extra}")
