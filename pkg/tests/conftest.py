"""Per-criterion acceptance report printed at the end of the session."""
from pathlib import Path

import pytest

CRITERIA = {
    1: "free baseline: linear slope and Gaussian marginals",
    2: "hard rods: t^1/2 law and decaying windowed slopes",
    3: "Dyson beta=2: log t law and decaying windowed slopes",
    4: "Dyson integrator vs matrix Brownian motion",
    5: "environment process vs labeled differences",
    6: "phi_N corrector exactness and energy bound",
    7: "telescoping bound vanishes; Poisson contrast stays at 1",
    8: "invariance and property suites",
}
PROPERTY_MODULES = ("test_configspace", "test_models", "test_dynamics", "test_estimators", "test_corrector",
                    "test_cli")

_results = {}
_property_outcomes = {}


class Criterion:
    def __init__(self, number):
        self.number = number
        self.checks = []

    def check(self, name, value, ok):
        self.checks.append((name, value, bool(ok)))
        return bool(ok)

    @property
    def passed(self):
        return bool(self.checks) and all(ok for _, _, ok in self.checks)


@pytest.fixture
def criterion(request):
    num = request.node.get_closest_marker("criterion").args[0]
    c = Criterion(num)
    _results[num] = c
    return c


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_call(item):
    # failed checks fail the test body itself, not the fixture teardown
    outcome = yield
    c = _results.get(getattr(item, "_criterion_num", None))
    if outcome.excinfo is None and c is not None:
        failed = [f"{n}={v}" for n, v, ok in c.checks if not ok]
        if failed:
            outcome.force_exception(AssertionError(f"criterion {c.number} failed: " + ", ".join(failed)))


def pytest_runtest_setup(item):
    m = item.get_closest_marker("criterion")
    if m is not None:
        item._criterion_num = m.args[0]


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n): acceptance criterion number")


def pytest_runtest_logreport(report):
    mod = Path(report.fspath).stem
    if mod in PROPERTY_MODULES and (report.when == "call" or report.outcome != "passed"):
        prev = _property_outcomes.get(report.nodeid, "passed")
        _property_outcomes[report.nodeid] = report.outcome if prev == "passed" else prev


def _fmt(v):
    if isinstance(v, float):
        return f"{v:.4g}"
    if isinstance(v, (list, tuple)):
        return "[" + ", ".join(_fmt(x) for x in v) + "]"
    return str(v)


def pytest_terminal_summary(terminalreporter):
    if not _results and not _property_outcomes:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for num, title in CRITERIA.items():
        if num == 8:
            if not _property_outcomes:
                continue
            bad = [k for k, v in _property_outcomes.items() if v != "passed"]
            status = "PASS" if not bad else "FAIL"
            detail = f"{len(_property_outcomes) - len(bad)}/{len(_property_outcomes)} property tests green"
        elif num in _results:
            c = _results[num]
            status = "PASS" if c.passed else "FAIL"
            detail = "; ".join(f"{n}={_fmt(v)}{'' if ok else ' (!)'}" for n, v, ok in c.checks) or "not completed"
        else:
            continue
        tr.write_line(f"criterion {num} {status}: {title} | {detail}")
