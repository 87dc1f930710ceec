import os
import sys

import pytest
from hypothesis import HealthCheck, settings

sys.path.insert(0, os.path.dirname(__file__))

settings.register_profile(
    "repo",
    deadline=None,
    max_examples=40,
    suppress_health_check=[HealthCheck.too_slow],
    derandomize=True,
)
settings.load_profile("repo")

ACCEPTANCE_FILE = "test_acceptance.py"

# every ClasswiseReport that finishes construction during the session
REPORTS: list = []
_CRITERIA: dict = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n, title): acceptance criterion number and title")
    from fairrobust.evaluation import ClasswiseReport

    original = ClasswiseReport.__post_init__
    if getattr(original, "_records_reports", False):
        return

    def recording(self):
        original(self)
        REPORTS.append(self)

    recording._records_reports = True
    ClasswiseReport.__post_init__ = recording


def pytest_collection_modifyitems(session, config, items):
    # the acceptance file runs last so the report identity sees the whole suite
    items.sort(key=lambda item: item.fspath.basename == ACCEPTANCE_FILE)


def pytest_runtest_logreport(report):
    marker = _CRITERION_OF.get(report.nodeid)
    if marker is None:
        return
    if report.when == "call" or (report.when == "setup" and report.outcome != "passed"):
        n, title = marker
        if report.passed and not hasattr(report, "wasxfail"):
            status = "PASS"
        else:
            status = "FAIL"
        _CRITERIA[n] = (status, title, "expected failure" if hasattr(report, "wasxfail") else "")


_CRITERION_OF: dict = {}


def pytest_itemcollected(item):
    m = item.get_closest_marker("criterion")
    if m is not None:
        _CRITERION_OF[item.nodeid] = m.args


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_CRITERIA):
        status, title, note = _CRITERIA[n]
        suffix = f" ({note})" if note else ""
        terminalreporter.write_line(f"{status} criterion {n}: {title}{suffix}")
