import numpy as np
import pytest

from sspitch.autodiff import Tensor


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def leaf(a):
    """float64 tensor that records gradients."""
    return Tensor(np.array(a, dtype=np.float64), requires_grad=True)


def tone(hz, seconds=0.5, fs=16000, amp=0.5):
    t = np.arange(int(seconds * fs)) / fs
    return amp * np.sin(2 * np.pi * hz * t)


# --- acceptance criteria reporting --------------------------------------------

_CRITERIA = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(code, title): acceptance criterion")


@pytest.fixture
def detail(request):
    """Tests append human-readable measurements here for the summary line."""
    notes = []
    request.node._criterion_notes = notes
    return notes


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None or rep.when not in ("setup", "call"):
        return
    code, title = mark.args
    if rep.when == "setup" and rep.passed:
        return
    status = "PASS" if rep.passed else ("SKIP" if rep.skipped else "FAIL")
    notes = getattr(item, "_criterion_notes", [])
    prev = _CRITERIA.get(code)
    # a criterion split over several tests fails if any part fails
    if prev and prev[1] != "PASS":
        status = prev[1]
    merged = (prev[2] if prev else []) + list(notes)
    _CRITERIA[code] = (title, status, merged)


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for code in sorted(_CRITERIA, key=lambda c: int(c[1:])):
        title, status, notes = _CRITERIA[code]
        extra = f" ({'; '.join(notes)})" if notes else ""
        terminalreporter.write_line(f"{code} {status}: {title}{extra}")
