"""Collects the acceptance-criterion outcomes and prints one line per criterion."""
import pytest

_RESULTS = {}
_DETAILS = {}


@pytest.fixture
def record(request):
    """Attach measured figures to the current acceptance criterion."""
    crit = request.node.get_closest_marker("criterion")

    def _rec(text):
        if crit is not None:
            _DETAILS.setdefault(crit.args[0], []).append(text)
            print(text)
    return _rec


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(id, title): acceptance criterion")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    crit = item.get_closest_marker("criterion")
    if crit is None or rep.when != "call" and not rep.failed:
        return
    cid, title = crit.args
    prev = _RESULTS.get(cid, (title, True))
    _RESULTS[cid] = (title, prev[1] and rep.passed)


def pytest_terminal_summary(terminalreporter):
    if not _RESULTS:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for cid in sorted(_RESULTS, key=lambda c: int(c[1:])):
        title, ok = _RESULTS[cid]
        tr.write_line(f"{cid} {'PASS' if ok else 'FAIL'}  {title}")
        for d in _DETAILS.get(cid, []):
            tr.write_line(f"      {d}")
