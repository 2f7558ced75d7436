import pytest

from umbilic_yamabe import symtensor as st
from umbilic_yamabe.quadrature import QuadratureSpec

# acceptance outcomes, filled by tests/test_acceptance.py and printed at the end
ACCEPTANCE: dict = {}


def record(number: int, title: str, passed: bool, detail: str = ""):
    ACCEPTANCE[number] = (title, bool(passed), detail)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE):
        title, ok, detail = ACCEPTANCE[k]
        terminalreporter.write_line(f"[{'PASS' if ok else 'FAIL'}] {k:2d}. {title}: {detail}")


@pytest.fixture(scope="session")
def E0():
    return st.standard_example(6)


@pytest.fixture(scope="session")
def cubic():
    return st.standard_cubic_example(6)


@pytest.fixture(scope="session")
def quick_spec():
    return QuadratureSpec(samples=60, panels=8, order=8, seed=0)


@pytest.fixture(scope="session")
def green_cubic():
    from umbilic_yamabe.green import solve_green
    return solve_green(st.standard_cubic_example(6), scale=0.5, rho0=1.0)


@pytest.fixture(scope="session")
def green_E0():
    from umbilic_yamabe.green import solve_green
    return solve_green(st.standard_example(6), scale=0.5, rho0=1.0)
