import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from acoe_lab.average import vanishing_discount  # noqa: E402
from acoe_lab.inventory import instance_a  # noqa: E402

SCHEDULE_A = (0.9, 0.99, 0.999, 0.9999)


@pytest.fixture(scope="session")
def params_a():
    return instance_a()


@pytest.fixture(scope="session")
def model_a(params_a):
    return params_a.dp_model()


@pytest.fixture(scope="session")
def solution_a(params_a):
    return vanishing_discount(params_a, SCHEDULE_A, dp_tol=1e-6)


@pytest.fixture
def instance_a_json():
    return {
        "K": 10,
        "c_bar": 1,
        "h_breakpoints": [[None, -3], [0, 2]],
        "demand": {"support": [0, 1, 2], "probs": [0.3, 0.4, 0.3]},
        "lattice": {"x_min": -30, "x_max": 40, "step": 1},
    }


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    results = getattr(mod, "RESULTS", None)
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(results):
        ok, detail = results[n]
        terminalreporter.write_line(f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
    passed = sum(ok for ok, _ in results.values())
    terminalreporter.write_line(f"{passed}/{len(results)} criteria pass")
