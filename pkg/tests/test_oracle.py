import math

import numpy as np
import pytest

from rwbsde import Generator, Lattice, ProblemSpec, solve
from rwbsde.errors import NumericalError, QuadratureError
from rwbsde.expr import parse
from rwbsde.oracle import (OracleEstimate, adaptive_expectation, closed_form_linear,
                           closed_form_quadratic, gauss_expectation, monte_carlo_expectation,
                           solve_full_path_tree)
from rwbsde.problem import ItoBarrier


def test_gauss_expectation_moments():
    assert gauss_expectation("x") == pytest.approx(0, abs=1e-14)
    assert gauss_expectation("x", T=3.0) == pytest.approx(0, abs=1e-14)
    assert gauss_expectation("x^2") == pytest.approx(1, rel=1e-13)
    assert gauss_expectation("x^2", T=2.5) == pytest.approx(2.5, rel=1e-13)
    assert gauss_expectation("exp(x)") == pytest.approx(math.exp(0.5), rel=1e-12)


def test_gauss_expectation_rejects_kinks():
    with pytest.raises(QuadratureError):
        gauss_expectation("abs(x)", max_order=256)
    with pytest.raises(ValueError):
        gauss_expectation("x", order=1)


def test_adaptive_expectation_handles_kinks():
    value, err = adaptive_expectation("abs(x)")
    assert value == pytest.approx(math.sqrt(2 / math.pi), rel=1e-12)
    assert err < 1e-10


def test_closed_form_linear_examples():
    assert closed_form_linear(1, 1, 1, "sin(abs(x))").value == pytest.approx(3.4850, abs=2e-3)
    assert closed_form_linear(1, 1, 0, "abs(x)").value == pytest.approx(3.1710, abs=2e-3)
    assert closed_form_linear(1, 0, 0, "1").value == pytest.approx(math.e, rel=1e-14)


def test_closed_form_linear_analytic_abs():
    # e^{bT - c^2 T/2} E|B| e^{B} with b = c = 1 equals e (2 phi(1) + 2 Phi(1) - 1)
    from scipy.stats import norm
    exact = math.e * (2 * norm.pdf(1) + 2 * norm.cdf(1) - 1)
    assert closed_form_linear(1, 1, 0, "abs(x)").value == pytest.approx(exact, rel=1e-11)


def test_closed_form_linear_b_zero_limit():
    # g = z + r: Y0 = E[phi(B_T + T)] + r T
    v = closed_form_linear(0, 0, 2.0, "x^2", T=1.5).value
    assert v == pytest.approx(1.5 + 3.0, rel=1e-13)
    near = closed_form_linear(1e-9, 0, 2.0, "x^2", T=1.5).value
    assert near == pytest.approx(v, rel=1e-8)


def test_closed_form_quadratic_examples():
    assert closed_form_quadratic("sin(abs(x))").value == pytest.approx(0.6255, abs=5e-4)
    assert closed_form_quadratic("0.75").value == pytest.approx(0.75, abs=1e-14)
    assert closed_form_quadratic("x").value == pytest.approx(0.5, abs=1e-10)


def test_closed_form_quadratic_overflow():
    with pytest.raises(NumericalError):
        closed_form_quadratic("exp(x^2)")


def test_monte_carlo_constant_and_zero_mean():
    est = monte_carlo_expectation("2.5", samples=1000)
    assert est.value == 2.5 and est.standard_error == 0
    est = monte_carlo_expectation("x", samples=10 ** 6, seed=11)
    assert abs(est.value) <= 4 * est.standard_error
    assert est.size == 10 ** 6 and est.method == "monte-carlo"


def test_monte_carlo_matches_quadrature():
    h = "sin(abs(x))*exp(x)"
    ref, _ = adaptive_expectation(h)
    est = monte_carlo_expectation(h, samples=10 ** 7, seed=2024)
    assert abs(est.value - ref) <= 4 * est.standard_error


def test_monte_carlo_closed_forms_within_noise():
    for est, ref in [
        (closed_form_linear(1, 1, 1, "sin(abs(x))", method="mc", samples=2 * 10 ** 6, seed=5),
         closed_form_linear(1, 1, 1, "sin(abs(x))").value),
        (closed_form_quadratic("sin(abs(x))", method="mc", samples=2 * 10 ** 6, seed=6),
         closed_form_quadratic("sin(abs(x))").value),
    ]:
        assert abs(est.value - ref) <= 4 * est.standard_error


def test_monte_carlo_is_reproducible():
    a = monte_carlo_expectation("sin(x)", samples=300_000, seed=9, chunk=100_000)
    b = monte_carlo_expectation("sin(x)", samples=300_000, seed=9, chunk=100_000)
    assert a == b
    c = monte_carlo_expectation("sin(x)", samples=300_000, seed=10, chunk=100_000)
    assert c.value != a.value
    with pytest.raises(ValueError):
        monte_carlo_expectation("x", samples=1)


def test_estimate_requires_nonnegative_error():
    with pytest.raises(ValueError):
        OracleEstimate(1.0, -1.0, "x", 0)


def test_unknown_method():
    with pytest.raises(ValueError):
        closed_form_linear(1, 1, 1, "x", method="simpson")


# -- full path tree -----------------------------------------------------------

ZERO = Generator.linear(0, 0)


def test_path_tree_identity():
    spec = ProblemSpec.from_sources(ZERO, "x")
    assert solve_full_path_tree(spec, "implicit", 5).root == pytest.approx(0, abs=1e-15)


def test_path_tree_running_maximum():
    # the 8 paths of length 3 have maxima 3, 2, 1, 1, 1, 0, 0, 0 in units of sqrt(1/3)
    spec = ProblemSpec.from_sources(ZERO, "0")
    tree = solve_full_path_tree(spec, "explicit", 3, terminal_functional=lambda B: B.max(axis=1))
    assert tree.root == pytest.approx(1 / math.sqrt(3), rel=1e-15)
    assert sorted(np.round(tree.terminal * math.sqrt(3), 12).tolist()) == [0, 0, 0, 1, 1, 1, 2, 3]


def test_path_tree_nodes_recombine():
    spec = ProblemSpec.from_sources("-abs(y+z)", "2*sin(x)", barrier="cos(x) - 2", mu=1)
    n = 9
    tree = solve_full_path_tree(spec, "reflected-implicit", n)
    lattice = solve(spec, Lattice(n), "reflected-implicit")
    for j in range(n + 1):
        ups = np.bitwise_count(np.arange(2 ** j, dtype=np.uint64)).astype(int)
        np.testing.assert_allclose(tree.y[j], lattice.y[j][ups], rtol=0, atol=1e-12)


def test_path_tree_ito_barrier_with_constant_coefficients():
    # L = 0.3 - 0.5 t + 0.8 B_t written both ways
    ito = ItoBarrier(0.3, parse("0 - 0.5", {"t", "x"}), parse("0.8", {"t", "x"}))
    g = Generator.from_expression("-abs(y+z)", 1.0)
    path_spec = ProblemSpec(g, parse("sin(x)"), barrier=ito)
    markov = ProblemSpec.from_sources(g, "sin(x)", barrier="0.3 - 0.5*t + 0.8*x")
    for scheme in ("reflected-implicit", "reflected-explicit"):
        a = solve_full_path_tree(path_spec, scheme, 10).root
        b = solve(markov, Lattice(10), scheme).root
        assert a == pytest.approx(b, abs=1e-12)


def test_path_tree_ito_barrier_path_dependent():
    # vol depending on x makes L path dependent; reflection keeps y above it everywhere
    ito = ItoBarrier(-0.2, parse("0", {"t", "x"}), parse("1 + 0.5*sin(x)", {"t", "x"}))
    spec = ProblemSpec(Generator.linear(0, 0), parse("0"), barrier=ito)
    tree = solve_full_path_tree(spec, "reflected-explicit", 8)
    assert tree.root >= -0.2
    assert np.isfinite(tree.root)


def test_path_tree_caps():
    spec = ProblemSpec.from_sources(ZERO, "x")
    with pytest.raises(ValueError):
        solve_full_path_tree(spec, "implicit", 23)
    with pytest.raises(ValueError):
        solve_full_path_tree(spec, "implicit", 19, terminal_functional=lambda B: B[:, -1])
    with pytest.raises(ValueError):
        solve_full_path_tree(spec, "reflected-explicit", 4)
    with pytest.raises(ValueError):
        solve_full_path_tree(spec, "nope", 4)
