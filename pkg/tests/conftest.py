import numpy as np
import pytest

from gpselect import _backend

BACKENDS = ["python"]
try:
    from gpselect import _ckernels  # noqa: F401

    BACKENDS.insert(0, "cython")
except ImportError:
    pass


@pytest.fixture(params=BACKENDS)
def backend(request):
    """Run the test once per available kernel implementation."""
    previous = _backend.BACKEND
    _backend.use_backend(request.param)
    yield request.param
    _backend.use_backend(previous)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


# one PASS/FAIL line per acceptance criterion, printed after the run
_RESULTS = pytest.StashKey[dict]()


def pytest_configure(config):
    config.addinivalue_line("markers", "acceptance(key, title): numbered acceptance criterion")


def pytest_collection_modifyitems(config, items):
    # acceptance criteria run in their numbered order
    order = {item: i for i, item in enumerate(items)}
    items.sort(key=lambda it: (it.get_closest_marker("acceptance") is not None, order[it]))


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("acceptance")
    if mark is None or (rep.when != "call" and not rep.failed and not rep.skipped):
        return
    results = item.config.stash.setdefault(_RESULTS, {})
    key, title = mark.args
    detail = "; ".join(str(v) for k, v in item.user_properties if k == "detail")
    status = "PASS" if rep.passed else ("SKIP" if rep.skipped else "FAIL")
    if key not in results or status != "PASS":
        results[key] = (title, status, detail)


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    results = config.stash.get(_RESULTS, {})
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(results, key=lambda k: (int(k.rstrip("abcd")), k)):
        title, status, detail = results[key]
        line = f"{status}  {key:<3} {title}"
        terminalreporter.write_line(line + (f"  [{detail}]" if detail else ""))
