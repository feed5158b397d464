import pytest

from rwbsde import Generator, ProblemSpec

HALF_PI = "1.5707963267948966"


@pytest.fixture
def linear_sin():
    """g = y + z + 1, terminal sin|x|."""
    return ProblemSpec.from_sources(Generator.linear(1, 1, 1), "sin(abs(x))")


@pytest.fixture
def linear_abs():
    return ProblemSpec.from_sources(Generator.linear(1, 1, 0), "abs(x)")


@pytest.fixture
def reflected_problem():
    """g = -|y+z|, terminal 2 sin(x), barrier cos(x) - 2 written as sin(x + pi/2) - 2."""
    return ProblemSpec.from_sources("-abs(y+z)", "2*sin(x)",
                                    barrier=f"sin(x + {HALF_PI}) - 2", mu=1)


@pytest.fixture
def interval_problem():
    return ProblemSpec.from_sources("-2*abs(y+z)-1", "abs(x)", interval=(-0.5, 0.8), mu=2)


@pytest.fixture
def phi_problem():
    return ProblemSpec.from_sources("-2*abs(y+z)-1", "abs(x)", phi="1.25*z", mu=2)


def pytest_terminal_summary(terminalreporter):
    """One PASS/FAIL line per acceptance criterion, when the acceptance suite ran."""
    import sys

    mod = sys.modules.get("test_acceptance") or sys.modules.get("tests.test_acceptance")
    if mod is None or not mod.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for line in mod.summary_lines():
        terminalreporter.write_line(line)
