import re
import sys
from collections import defaultdict
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from nngp_chol import _backend  # noqa: E402

CRITERIA = {
    1: "exactness oracle (m = n-1 vs dense)",
    2: "factor identities",
    3: "decorrelation of dense-GP replicates",
    4: "NNGP vs dense sample covariances",
    5: "simulation time scaling",
    6: "NNGP variance dip under coordinate ordering",
    7: "DAGAR homoskedasticity and neighbor correlation",
    8: "CAR heteroskedasticity on the 3x3 grid",
    9: "RF-GLS reduces to CART",
    10: "RF-GLS beats the identity-decorrelation forest",
    11: "bootstrap interval sanity",
}
_outcomes = defaultdict(list)


@pytest.fixture(params=["cython", "python"])
def backend(request):
    if request.param not in _backend.available():
        pytest.skip("compiled extension not built")
    with _backend.use_backend(request.param):
        yield request.param


def _criterion(nodeid):
    m = re.search(r"test_acceptance\.py::test_criterion_(\d+)", nodeid)
    return int(m.group(1)) if m else None


def pytest_runtest_logreport(report):
    k = _criterion(report.nodeid)
    if k is None:
        return
    if report.when == "call" or report.outcome != "passed":
        _outcomes[k].append(report.outcome)


def pytest_terminal_summary(terminalreporter):
    if not _outcomes:
        return
    terminalreporter.section("acceptance criteria")
    for k, label in CRITERIA.items():
        got = _outcomes.get(k)
        if not got:
            status = "NOT RUN"
        elif all(o == "passed" for o in got):
            status = "PASS"
        else:
            status = "FAIL"
        terminalreporter.write_line(f"criterion {k:2d} [{status}] {label}")
