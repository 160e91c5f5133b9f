import json
from pathlib import Path

import pytest

from hearthmesh.home import load_config_file

DATA = Path(__file__).resolve().parents[1] / "src" / "hearthmesh" / "data"

_criteria = {}


@pytest.fixture(scope="session")
def worked_home():
    return load_config_file(DATA / "worked_home.json")


@pytest.fixture(scope="session")
def worked_doc():
    return json.loads((DATA / "worked_home.json").read_text())


@pytest.fixture
def data_dir():
    return DATA


def pytest_runtest_logreport(report):
    if "test_acceptance.py::test_criterion_" not in report.nodeid:
        return
    name = report.nodeid.split("::", 1)[1]
    if report.when == "call" or report.outcome != "passed":
        prev = _criteria.get(name)
        if prev != "FAIL":
            _criteria[name] = "PASS" if report.outcome == "passed" else "FAIL"


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for name in sorted(_criteria):
        num, _, label = name[len("test_criterion_"):].partition("_")
        terminalreporter.write_line(f"criterion {int(num):2d} {label.replace('_', ' ')}: {_criteria[name]}")
