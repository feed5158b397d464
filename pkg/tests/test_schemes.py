import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rwbsde import Generator, Lattice, ProblemSpec, solve, solve_explicit, solve_implicit, solve_split
from rwbsde.expr import parse
from rwbsde.oracle import solve_full_path_tree
from rwbsde.problem import ItoBarrier
from rwbsde.schemes import _bisect, implicit_step_solve


def test_step_zero_driver_is_identity():
    E = np.array([-2.0, 0.0, 3.5])
    np.testing.assert_array_equal(implicit_step_solve(E, 0.0, np.zeros(3), Generator.linear(0, 0), 0.1), E)


def test_step_linear_closed_form():
    y = implicit_step_solve(1.0, 0.0, 0.0, Generator.linear(1, 1, 1), 0.01)
    assert y == pytest.approx(1.01 / 0.99, rel=1e-15)
    # the same driver through the expression path iterates to the same value
    y_fp = implicit_step_solve(1.0, 0.0, 0.0, Generator.from_expression("y + z + 1", 1.0), 0.01)
    assert y_fp == pytest.approx(1.01 / 0.99, rel=1e-13)


def test_step_absolute_value_driver():
    y = implicit_step_solve(1.0, 0.0, 0.0, Generator.from_expression("-5*abs(y+z)", 5.0), 0.01)
    assert y == pytest.approx(1 / 1.05, rel=1e-13)
    # residual of y - g(y) delta = E
    assert abs(y + 0.05 * abs(y) - 1.0) <= 1e-13


def test_bisection_fallback_when_fixed_point_diverges():
    # delta*mu = 1.5: iteration y <- E - 1.5 y diverges, bisection still finds y = E / 2.5
    g = Generator.from_expression("-3*y", 3.0)
    y = implicit_step_solve(np.array([1.0, -2.0]), 0.0, np.zeros(2), g, 0.5)
    np.testing.assert_allclose(y, [0.4, -0.8], rtol=1e-12)
    direct = _bisect(np.array([1.0]), 0.0, np.zeros(1), g, 0.5, 1.0, 1e-14)
    assert direct[0] == pytest.approx(0.4, rel=1e-12)


def test_identity_problem():
    spec = ProblemSpec.from_sources(Generator.linear(0, 0), "x", T=2.0)
    lat = Lattice(20, 2.0)
    for surf in (solve_implicit(spec, lat), solve_explicit(spec, lat)):
        for j in range(21):
            np.testing.assert_allclose(surf.y[j], lat.coordinates(j), atol=1e-14)
        for j in range(20):
            np.testing.assert_allclose(surf.z[j], 1.0, rtol=1e-13)
        assert surf.root == pytest.approx(0.0, abs=1e-14)


def test_zero_driver_implicit_equals_explicit():
    spec = ProblemSpec.from_sources(Generator.linear(0, 0), "sin(abs(x)) + x^2")
    a, b = solve_implicit(spec, Lattice(30)), solve_explicit(spec, Lattice(30))
    for ya, yb in zip(a.y, b.y):
        np.testing.assert_array_equal(ya, yb)


def test_reference_rows_at_n_100(linear_sin, linear_abs):
    assert solve_implicit(linear_sin, Lattice(100)).root == pytest.approx(3.5106, abs=5e-4)
    assert solve_implicit(linear_abs, Lattice(100)).root == pytest.approx(3.1806, abs=5e-4)
    assert solve_explicit(linear_sin, Lattice(100), driver_at_root=False).root == \
        pytest.approx(3.4171, abs=5e-4)


def test_explicit_root_driver_convention(linear_sin):
    lat = Lattice(50)
    full = solve_explicit(linear_sin, lat)
    legacy = solve_explicit(linear_sin, lat, driver_at_root=False)
    for j in range(1, 51):
        np.testing.assert_array_equal(full.y[j], legacy.y[j])
    e = 0.5 * (full.y[1][0] + full.y[1][1])
    assert legacy.root == e
    assert full.root == e + (e + full.z[0][0] + 1) * lat.delta


def test_split_degenerate_cases(linear_sin):
    lat = Lattice(40)
    g1 = Generator.from_expression("y + z + 1", 1.0)
    zero = Generator.linear(0, 0)
    only_g1 = ProblemSpec.from_sources(Generator.split(g1, zero), "sin(abs(x))")
    only_g2 = ProblemSpec.from_sources(Generator.split(zero, g1), "sin(abs(x))")
    plain = ProblemSpec.from_sources(g1, "sin(abs(x))")
    np.testing.assert_array_equal(solve_split(only_g1, lat).y[0], solve_implicit(plain, lat).y[0])
    np.testing.assert_array_equal(solve_split(only_g2, lat).y[0], solve_explicit(plain, lat).y[0])


def test_split_agrees_with_implicit_at_large_n():
    spec = ProblemSpec.from_sources(Generator.split(Generator.linear(1, 0, 0),
                                                    Generator.linear(0, 1, 1)), "sin(abs(x))")
    assert solve_split(spec, Lattice(1000)).root == pytest.approx(3.4879, abs=2e-3)


def test_split_needs_split_driver(linear_sin):
    with pytest.raises(ValueError):
        solve_split(linear_sin, Lattice(5))


def test_horizon_mismatch(linear_sin):
    with pytest.raises(ValueError):
        solve_implicit(linear_sin, Lattice(10, 2.0))


def test_ito_barrier_rejected_by_lattice():
    ito = ItoBarrier(0.0, parse("0", {"t", "x"}), parse("1", {"t", "x"}))
    spec = ProblemSpec(Generator.linear(0, 0), parse("x"), barrier=ito)
    with pytest.raises(ValueError, match="path"):
        solve(spec, Lattice(4), "reflected-explicit")


def test_unknown_scheme(linear_sin):
    with pytest.raises(ValueError):
        solve(linear_sin, Lattice(4), "crank-nicolson")


@pytest.mark.parametrize("scheme", ["implicit", "explicit"])
def test_reconstruction_identity(scheme):
    spec = ProblemSpec.from_sources("-5*abs(y+z) + sin(t)", "sin(abs(x))", mu=5)
    assert solve(spec, Lattice(200), scheme).reconstruction_error() <= 4e-16


def test_implicit_explicit_gap_shrinks(linear_sin):
    """max_j E|y_j - ybar_j|^2 falls about four-fold, the sup gap about two-fold, per doubling of n."""
    from scipy.stats import binom
    ms, sup = [], []
    for n in (250, 500, 1000, 2000):
        a, b = solve_implicit(linear_sin, Lattice(n)), solve_explicit(linear_sin, Lattice(n))
        ms.append(max(float(np.sum(binom.pmf(np.arange(j + 1), j, 0.5) * (a.y[j] - b.y[j]) ** 2))
                      for j in range(n + 1)))
        sup.append(max(float(np.max(np.abs(a.y[j] - b.y[j]))) for j in range(n + 1)))
    for i in range(3):
        assert ms[i] > ms[i + 1]
        assert 1.5 <= sup[i] / sup[i + 1] <= 2.8


@pytest.mark.parametrize("n", [6, 10, 12])
@pytest.mark.parametrize("scheme", ["implicit", "explicit"])
def test_matches_path_tree(n, scheme):
    spec = ProblemSpec.from_sources("-abs(y+z) + sin(t)*z", "2*sin(x) + x^2", mu=2)
    lattice_root = solve(spec, Lattice(n), scheme).root
    assert abs(lattice_root - solve_full_path_tree(spec, scheme, n).root) <= 1e-12


# comparison in the terminal data: random Lipschitz pairs phi1 >= phi2
_coef = st.floats(-2, 2, allow_nan=False)


@settings(max_examples=40, deadline=None)
@given(a=_coef, b=_coef, c=_coef, shift=st.floats(0, 3), n=st.integers(2, 64))
def test_comparison_in_terminal_data(a, b, c, shift, n):
    g = Generator.from_expression(f"{a!r}*abs(y) + {b!r}*z - {abs(c)!r}*negpart(z)", 4.0)
    phi2 = f"sin(x) + {b!r}*abs(x)"
    lo = ProblemSpec.from_sources(g, phi2)
    hi = ProblemSpec.from_sources(g, f"{phi2} + {shift!r} + pospart(x)")
    lat = Lattice(n)
    if lat.delta * 4.0 >= 1:
        return
    y_lo, y_hi = solve_implicit(lo, lat), solve_implicit(hi, lat)
    for j in range(n + 1):
        assert np.all(y_hi.y[j] >= y_lo.y[j] - 1e-12 * (1 + np.abs(y_lo.y[j])))
