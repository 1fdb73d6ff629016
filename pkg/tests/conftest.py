import numpy as np
import pytest

from sonopipe.geometry import ArrayKind, TransducerGeometry, make_linear_layout, make_phased_layout


@pytest.fixture
def rng():
    return np.random.default_rng(20240514)


@pytest.fixture(scope="session")
def probe128():
    return TransducerGeometry(128, 0.3, 5e6)


@pytest.fixture(scope="session")
def small_linear():
    """16 elements, 8 lines, 256 samples at 10 MHz (about 19.7 mm)."""
    g = TransducerGeometry(16, 0.3, 2.5e6)
    return make_linear_layout(g, 8, 1, depth=19.0, focus_depth=10.0, samples_per_line=256, sample_freq=10e6)


@pytest.fixture(scope="session")
def small_phased():
    g = TransducerGeometry(16, 0.2, 2.5e6, ArrayKind.PHASED)
    return make_phased_layout(g, 8, 1, 60.0, 0.0, depth=19.0, samples_per_line=256, sample_freq=10e6)


@pytest.fixture(scope="session")
def small_matrix():
    g = TransducerGeometry(4, 0.3, 2.5e6, ArrayKind.MATRIX, 4)
    return make_phased_layout(g, 4, 2, 40.0, 20.0, depth=19.0, samples_per_line=256, sample_freq=10e6)


# ------------------------------------------------------------ acceptance report
# Tests marked ``criterion(n, title)`` feed one PASS/FAIL line per criterion,
# printed at the end of the session whether or not output capture is on.

_CRITERIA: dict[int, dict] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion covered by the test")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None or not (rep.when == "call" or rep.failed or rep.skipped):
        return
    number, title = marker.args
    entry = _CRITERIA.setdefault(number, {"title": title, "ok": True, "details": []})
    entry["ok"] = entry["ok"] and rep.passed
    if rep.when == "call":
        entry["details"] += [v for k, v in item.user_properties if k == "detail"]


@pytest.fixture
def detail(request):
    """Attach a measured value to the acceptance line of the running test."""

    def add(text: str):
        request.node.user_properties.append(("detail", text))
        print(text)

    return add


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_CRITERIA):
        e = _CRITERIA[number]
        line = f"{'PASS' if e['ok'] else 'FAIL'}  criterion {number:2d}  {e['title']}"
        if e["details"]:
            line += "  [" + "; ".join(e["details"]) + "]"
        terminalreporter.write_line(line)
