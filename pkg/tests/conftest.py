import pytest

from regional_oc import pmp
from regional_oc.problem import bundled_problem
from regional_oc.solve import Discretization, solve_regional, solve_structure
from regional_oc.structures import StructureWord

# The default cap of 5 arcs spends most of its time on degenerate long
# words; every selection test here runs the 3-arc enumeration.
MAX_ARCS = 3


@pytest.fixture(scope="session")
def tram_long():
    return bundled_problem("tramway_long")


@pytest.fixture(scope="session")
def tram_short():
    return bundled_problem("tramway_short")


@pytest.fixture(scope="session")
def refraction():
    return bundled_problem("refraction")


@pytest.fixture(scope="session")
def identical():
    return bundled_problem("identical")


@pytest.fixture(scope="session")
def long_regional(tram_long):
    return solve_regional(tram_long, MAX_ARCS, Discretization())


@pytest.fixture(scope="session")
def short_regional(tram_short):
    return solve_regional(tram_short, MAX_ARCS, Discretization())


@pytest.fixture(scope="session")
def refraction_sol(refraction):
    return solve_structure(refraction, StructureWord.parse("1-2"))


@pytest.fixture(scope="session")
def identical_sol(identical):
    return solve_structure(identical, StructureWord.parse("1-2"))


@pytest.fixture(scope="session")
def long_verify(tram_long, long_regional):
    return pmp.verify(tram_long, long_regional.best)


@pytest.fixture(scope="session")
def refraction_verify(refraction, refraction_sol):
    return pmp.verify(refraction, refraction_sol, sensitivity=False)


@pytest.fixture(scope="session")
def identical_verify(identical, identical_sol):
    return pmp.verify(identical, identical_sol, sensitivity=False)


def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import RESULTS
    except ImportError:
        return
    if RESULTS:
        terminalreporter.section("acceptance")
        for line in RESULTS:
            terminalreporter.write_line(line)
