import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from cyclemarket import _kernels, _kernels_py

try:
    from cyclemarket import _kernels_ext
except ImportError:  # extension not built
    _kernels_ext = None

settings.register_profile("repo", deadline=None, derandomize=True, print_blob=True,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("repo")

BACKENDS = ["python"] + (["cython"] if _kernels_ext is not None else [])


@pytest.fixture(params=BACKENDS)
def backend(request, monkeypatch):
    """Route the Rainflow kernels through one backend for the test."""
    mod = _kernels_py if request.param == "python" else _kernels_ext
    for name in ("switching_points", "rainflow_edges", "grid_search"):
        monkeypatch.setattr(_kernels, name, getattr(mod, name))
    return request.param


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def random_rates(rng, T, E=1.0, x0=0.5):
    """Periodic rate profile whose SoC stays in [0, 1]."""
    x = np.concatenate(([x0], rng.uniform(0.0, 1.0, T - 1), [x0]))
    return -E * np.diff(x)


class _Criterion:
    def __init__(self, item):
        self._item = item

    def detail(self, text):
        self._item.user_properties.append(("detail", text))


@pytest.fixture
def criterion(request):
    """Attach a measured-value note to an acceptance test's summary line."""
    return _Criterion(request.node)


_ACCEPTANCE = []


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    if item.get_closest_marker("acceptance") is None:
        return
    if report.when == "call" or (report.when == "setup" and report.outcome != "passed"):
        title = (item.function.__doc__ or item.name).strip().splitlines()[0]
        details = "; ".join(v for k, v in item.user_properties if k == "detail")
        _ACCEPTANCE.append((title, report.outcome, details))


def pytest_configure(config):
    config.addinivalue_line("markers", "acceptance: acceptance criterion, summarised at the end")


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for title, outcome, details in _ACCEPTANCE:
        verdict = "PASS" if outcome == "passed" else "FAIL"
        terminalreporter.write_line(f"{verdict} {title}" + (f"  [{details}]" if details else ""))
    passed = sum(o == "passed" for _, o, _ in _ACCEPTANCE)
    terminalreporter.write_line(f"{passed}/{len(_ACCEPTANCE)} criteria passed")
