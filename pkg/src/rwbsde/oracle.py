"""Independent reference values for the lattice solvers.

* closed forms for linear drivers and for g = z^2/2, with the Gaussian
  expectation inside computed by Gauss-Hermite quadrature (order doubling),
  adaptive quadrature split at kinks, or seeded Monte Carlo;
* a brute-force solver over the full binary tree of sign sequences, which
  repeats each scheme's per-node recursion without using recombination and
  therefore also handles path-dependent terminals and Ito-process barriers.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Union

import numpy as np
from scipy import integrate, special

from .errors import NumericalError, QuadratureError
from .expr import Expression, evaluate, parse
from .problem import (Barrier, ItoBarrier, PhiReflection, ProblemSpec, SplitPair, ZInterval,
                      SCHEMES)
from .schemes import _solve_driver_equation

PATH_TREE_CAP = 22
PATH_FUNCTIONAL_CAP = 18  # the (2^n, n+1) path matrix must fit in memory
_TAIL_CUT = 40.0  # standard deviations kept by adaptive quadrature

Integrand = Union[Expression, Callable[[np.ndarray], np.ndarray]]


@dataclass(frozen=True)
class OracleEstimate:
    value: float
    standard_error: float
    method: str
    size: int  # sample count or quadrature order (0 for adaptive quadrature)

    def __post_init__(self):
        if not self.standard_error >= 0:
            raise ValueError("standard error must be nonnegative")


def _as_function(h: Integrand) -> Callable[[np.ndarray], np.ndarray]:
    if isinstance(h, str):
        h = parse(h, {"x"})
    if isinstance(h, Expression):
        e = h
        return lambda x: evaluate(e, {"x": x})
    return h


# ---------------------------------------------------------------------------
# Gaussian expectations


def _gh_rule(order: int, T: float):
    nodes, weights = special.roots_hermite(order)
    return math.sqrt(2.0 * T) * nodes, weights / math.sqrt(math.pi)


def gauss_expectation(h: Integrand, T: float = 1.0, order: int = 16, rtol: float = 1e-10,
                      max_order: int = 2048) -> float:
    """E[h(B_T)] by Gauss-Hermite quadrature with order doubling.

    Starts at ``order`` and doubles until two successive estimates agree to
    ``rtol`` relative to the quadrature of |h|.  Raises QuadratureError when
    ``max_order`` is passed, which is the expected outcome for integrands with
    kinks or jumps.
    """
    return _gauss_hermite(h, T, order, rtol, max_order)[0]


def _gauss_hermite(h, T, order, rtol, max_order) -> tuple[float, int]:
    if order < 2:
        raise ValueError("quadrature order must be at least 2")
    f = _as_function(h)
    prev = None
    while order <= max_order:
        x, w = _gh_rule(order, T)
        with np.errstate(over="ignore", invalid="ignore"):
            vals = np.asarray(f(x), dtype=np.float64)
            mask = w > 0
            est = float(np.sum(w[mask] * vals[mask]))
            scale = float(np.sum(w[mask] * np.abs(vals[mask])))
        if not math.isfinite(est):
            raise QuadratureError("non-finite Gauss-Hermite estimate (integrand overflow)")
        if prev is not None and abs(est - prev) <= rtol * max(scale, 1e-300):
            return est, order
        prev = est
        order *= 2
    raise QuadratureError(f"Gauss-Hermite did not reach rtol={rtol:g} by order {max_order}")


def adaptive_expectation(h: Integrand, T: float = 1.0, breakpoints=(0.0,)) -> tuple[float, float]:
    """E[h(B_T)] by adaptive quadrature of h times the N(0, T) density, split at ``breakpoints``.

    The range is cut at +-40 standard deviations, where the density is below
    exp(-800); this keeps exponentially growing h from overflowing in the tails.
    Returns (value, absolute error estimate).
    """
    f = _as_function(h)
    sd = math.sqrt(T)

    def integrand(x):
        return float(f(np.asarray(x))) * math.exp(-0.5 * (x / sd) ** 2) / (sd * math.sqrt(2 * math.pi))

    cut = _TAIL_CUT * sd
    inner = {b for b in breakpoints if -cut < b < cut} | {-8 * sd, 8 * sd}
    edges = [-cut, *sorted(inner), cut]
    total, err = 0.0, 0.0
    for lo, hi in zip(edges[:-1], edges[1:]):
        v, e = integrate.quad(integrand, lo, hi, epsabs=1e-14, epsrel=1e-12, limit=400)
        total += v
        err += e
    return total, err


def monte_carlo_expectation(h: Integrand, T: float = 1.0, samples: int = 1_000_000, seed: int = 0,
                            chunk: int = 1 << 20) -> OracleEstimate:
    """Sample mean of h(sqrt(T) G) with G standard normal.

    Chunks draw from independent PCG64 streams spawned from ``seed``, so the
    result depends only on (seed, samples, chunk), never on scheduling.
    """
    if samples < 2:
        raise ValueError("need at least two samples")
    f = _as_function(h)
    nchunks = -(-samples // chunk)
    children = np.random.SeedSequence(seed).spawn(nchunks)
    count, mean, m2 = 0, 0.0, 0.0
    sd = math.sqrt(T)
    for i, child in enumerate(children):
        size = min(chunk, samples - i * chunk)
        g = np.random.Generator(np.random.PCG64(child)).standard_normal(size)
        vals = np.asarray(f(sd * g), dtype=np.float64)
        cm = float(vals.mean())
        cm2 = float(np.sum((vals - cm) ** 2))
        # pairwise (Chan et al.) combination of running moments
        delta = cm - mean
        total = count + size
        mean += delta * size / total
        m2 += cm2 + delta * delta * count * size / total
        count = total
    var = m2 / (count - 1)
    return OracleEstimate(mean, math.sqrt(var / count), "monte-carlo", count)


def _expectation(h: Integrand, T: float, method: str, samples: int, seed: int,
                 breakpoints=(0.0,)) -> OracleEstimate:
    if method == "mc":
        return monte_carlo_expectation(h, T, samples, seed)
    if method != "quadrature":
        raise ValueError(f"method must be 'quadrature' or 'mc', got {method!r}")
    try:
        value, order = _gauss_hermite(h, T, 16, 1e-10, 2048)
        return OracleEstimate(value, 0.0, "gauss-hermite", order)
    except QuadratureError:
        value, _ = adaptive_expectation(h, T, breakpoints)
        return OracleEstimate(value, 0.0, "adaptive-quadrature", 0)


def closed_form_linear(b: float, c: float, r: float, phi: Expression | str, T: float = 1.0,
                       method: str = "quadrature", samples: int = 10_000_000,
                       seed: int = 0) -> OracleEstimate:
    """Y_0 for g = b y + c z + r and terminal phi(B_T):

        Y_0 = exp((b - c^2/2) T) E[phi(B_T) exp(c B_T)] + r/b (exp(bT) - 1)

    with the last term read as r T when b = 0.  The exponential weight is
    removed by the Girsanov shift E[phi(B_T) exp(c B_T)] = exp(c^2 T/2) E[phi(B_T + c T)],
    so the integrand never overflows.
    """
    f = _as_function(phi)
    inner = _expectation(lambda x: f(x + c * T), T, method, samples, seed,
                         breakpoints=sorted({0.0, -c * T}))
    factor = math.exp(b * T)
    drift = r * T if b == 0 else r / b * math.expm1(b * T)
    return OracleEstimate(factor * inner.value + drift, factor * inner.standard_error,
                          inner.method, inner.size)


def closed_form_quadratic(phi: Expression | str, T: float = 1.0, method: str = "quadrature",
                          samples: int = 10_000_000, seed: int = 0) -> OracleEstimate:
    """Y_0 = ln E[exp(phi(B_T))] for g = z^2 / 2."""
    f = _as_function(phi)

    def h(x):
        with np.errstate(over="raise"):
            try:
                return np.exp(f(x))
            except FloatingPointError:
                raise NumericalError("exp(terminal) overflows; the expectation is not finite") from None

    inner = _expectation(h, T, method, samples, seed)
    if not inner.value > 0 or not math.isfinite(inner.value):
        raise NumericalError(f"E[exp(terminal)] = {inner.value!r} is not a finite positive number")
    return OracleEstimate(math.log(inner.value), inner.standard_error / inner.value,
                          inner.method, inner.size)


# ---------------------------------------------------------------------------
# full path tree


@dataclass
class PathTreeSolution:
    """Backward-solved values on every node of the binary tree of sign sequences.

    Node ``i`` of level ``j`` encodes the first j signs in binary, first sign
    most significant, bit 1 meaning an up-move; its children are 2i and 2i+1.
    """

    n: int
    scheme: str
    y: list[np.ndarray] = field(repr=False)
    terminal: np.ndarray = field(repr=False)

    @property
    def root(self) -> float:
        return float(self.y[0][0])


def _path_matrix(n: int, sqrt_delta: float) -> np.ndarray:
    """B along every path: shape (2^n, n+1)."""
    idx = np.arange(2 ** n, dtype=np.uint64)
    cols = [np.bitwise_count(idx >> np.uint64(n - j)).astype(np.int64) for j in range(n + 1)]
    ups = np.stack(cols, axis=1)
    return (2 * ups - np.arange(n + 1)) * sqrt_delta


def solve_full_path_tree(spec: ProblemSpec, scheme: str, n: int, p: float | None = None,
                         terminal_functional: Callable[[np.ndarray], np.ndarray] | None = None,
                         driver_at_root: bool = True, tol=None) -> PathTreeSolution:
    """Solve ``scheme`` literally over all 2^n sign sequences.

    ``terminal_functional`` maps the (2^n, n+1) matrix of B-paths to terminal
    values and replaces ``spec.terminal``; it is limited to n <= 18.  An
    ItoBarrier is accumulated along each path as
    L_{j+1} = L_j + drift(t_j, B_j) delta + vol(t_j, B_j) eps_{j+1} sqrt(delta).
    """
    if scheme not in SCHEMES:
        raise ValueError(f"unknown scheme {scheme!r}")
    if not 1 <= n <= PATH_TREE_CAP:
        raise ValueError(f"path tree supports 1 <= n <= {PATH_TREE_CAP}, got {n}")
    T = spec.T
    delta = T / n
    s = math.sqrt(delta)
    g = spec.generator
    p = spec.p if p is None else p

    def B(j):
        ups = np.bitwise_count(np.arange(2 ** j, dtype=np.uint64)).astype(np.int64)
        return (2 * ups - j) * s

    if terminal_functional is not None:
        if n > PATH_FUNCTIONAL_CAP:
            raise ValueError(f"path-dependent terminals are limited to n <= {PATH_FUNCTIONAL_CAP}")
        xi = np.asarray(terminal_functional(_path_matrix(n, s)), dtype=np.float64)
    else:
        xi = evaluate(spec.terminal, {"x": B(n)})

    barrier = spec.barrier
    L: list[np.ndarray] | None = None
    if barrier is not None:
        if isinstance(barrier, Barrier):
            L = [evaluate(barrier.psi, {"t": j * delta, "x": B(j)}) for j in range(n + 1)]
        elif isinstance(barrier, ItoBarrier):
            L = [np.array([float(barrier.l0)])]
            for j in range(n):
                bj = B(j)
                drift = evaluate(barrier.drift, {"t": j * delta, "x": bj})
                vol = evaluate(barrier.vol, {"t": j * delta, "x": bj})
                base = L[j] + drift * delta
                nxt = np.empty(2 ** (j + 1))
                nxt[0::2] = base - vol * s
                nxt[1::2] = base + vol * s
                L.append(nxt)

    needs_barrier = scheme in ("reflected-implicit", "reflected-explicit", "penalized-implicit",
                               "penalized-explicit-implicit")
    if needs_barrier and L is None:
        raise ValueError(f"scheme {scheme!r} needs a barrier")
    if ("penalized" in scheme or scheme.startswith(("z-", "phi-"))) and p is None:
        raise ValueError(f"scheme {scheme!r} needs p")

    y = xi.copy()
    if scheme.startswith("reflected"):
        y = np.maximum(y, L[n])
    levels: list[np.ndarray] = [None] * (n + 1)  # type: ignore[list-item]
    levels[n] = y

    for j in range(n - 1, -1, -1):
        t = j * delta
        up, down = y[1::2], y[0::2]
        E = 0.5 * (up + down)
        z = (up - down) / (2.0 * s)
        if scheme == "implicit":
            y = _solve_driver_equation(E, t, z, g, delta, 1.0, tol)
        elif scheme == "explicit":
            y = E.copy() if (j == 0 and not driver_at_root) else E + np.asarray(g(t, E, z)) * delta
        elif scheme == "split":
            if not isinstance(g.body, SplitPair):
                raise ValueError("split scheme needs a split driver")
            g1, g2 = g.body.g1, g.body.g2
            y = _solve_driver_equation(E + np.asarray(g2(t, E, z)) * delta, t, z, g1, delta, 1.0, tol)
        elif scheme == "reflected-implicit":
            free = _solve_driver_equation(E, t, z, g, delta, 1.0, tol)
            y = np.where(free < L[j], L[j], free)
        elif scheme == "reflected-explicit":
            y = np.maximum(E + np.asarray(g(t, E, z)) * delta, L[j])
        elif scheme in ("penalized-implicit", "phi-implicit"):
            bar = L[j] if scheme == "penalized-implicit" else _phi(spec, z)
            free = _solve_driver_equation(E, t, z, g, delta, 1.0, tol)
            pen = _solve_driver_equation(E + p * bar * delta, t, z, g, delta, 1.0 + p * delta, tol)
            y = np.where(free < bar, pen, free)
        elif scheme in ("penalized-explicit-implicit", "phi-explicit-implicit"):
            bar = L[j] if scheme == "penalized-explicit-implicit" else _phi(spec, z)
            c = E + np.asarray(g(t, E, z)) * delta
            y = c + (p * delta / (1.0 + p * delta)) * np.maximum(bar - c, 0.0)
        elif scheme in ("z-constrained-implicit", "z-constrained-explicit"):
            gamma = spec.constraint
            if not isinstance(gamma, ZInterval):
                raise ValueError("z-constrained schemes need an interval constraint")
            dist = np.maximum(gamma.a - z, 0.0) + np.maximum(z - gamma.b, 0.0)
            a = p * dist * delta
            if scheme.endswith("implicit"):
                y = _solve_driver_equation(E + a, t, z, g, delta, 1.0, tol)
            else:
                y = E + np.asarray(g(t, E, z)) * delta + a
        levels[j] = y
    return PathTreeSolution(n, scheme, levels, xi)


def _phi(spec: ProblemSpec, z):
    if not isinstance(spec.constraint, PhiReflection):
        raise ValueError("phi schemes need a phi constraint")
    return evaluate(spec.constraint.phi, {"z": z})
