"""Backward induction for standard BSDEs: implicit, explicit and split schemes.

At level j every scheme first reads off, from the two children of each node,

    E = (y_up + y_down) / 2          z = (y_up - y_down) / (2 sqrt(delta))

and then differs only in how the driver enters:

    implicit   y = E + g(t_j, y, z) delta               (solved for y)
    explicit   y = E + g(t_j, E, z) delta
    split      y = E + g1(t_j, y, z) delta + g2(t_j, E, z) delta
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import NumericalError
from .lattice import Lattice, LevelFunction, _ce, _mc, level_values
from .problem import Generator, ItoBarrier, Linear, ProblemSpec, SplitPair

MAX_ITER = 200
TOL_FACTOR = 1e-13


@dataclass
class SolutionSurface:
    """Node values of (y, z) on the whole lattice.

    ``y[j]`` holds the j+1 values of level j for j = 0..n; ``z[j]`` exists for
    j = 0..n-1.
    """

    lattice: Lattice
    scheme: str
    spec: ProblemSpec | None
    y: list[np.ndarray] = field(repr=False)
    z: list[np.ndarray] = field(repr=False)

    @property
    def root(self) -> float:
        return float(self.y[0][0])

    def y_level(self, j: int) -> LevelFunction:
        return LevelFunction(j, self.y[j])

    def z_level(self, j: int) -> LevelFunction:
        return LevelFunction(j, self.z[j])

    def reconstruction_error(self) -> float:
        """Largest violation of y_{j+1}(k+1) = E + sqrt(delta) z and y_{j+1}(k) = E - sqrt(delta) z,
        measured in units of the local magnitude."""
        s = self.lattice.sqrt_delta
        worst = 0.0
        for j in range(self.lattice.n):
            nxt = self.y[j + 1]
            e = _ce(nxt)
            up = e + s * self.z[j]
            down = e - s * self.z[j]
            scale = np.maximum(np.maximum(np.abs(nxt[1:]), np.abs(nxt[:-1])), np.abs(e))
            scale = np.where(scale > 0, scale, 1.0)
            err = np.maximum(np.abs(up - nxt[1:]), np.abs(down - nxt[:-1])) / scale
            worst = max(worst, float(err.max()))
        return worst


def _tolerance(target):
    return TOL_FACTOR * np.maximum(1.0, np.abs(target))


def _solve_driver_equation(const, t, z, g: Generator, delta: float, scale=1.0, tol=None,
                           max_iter: int = MAX_ITER):
    """Solve ``scale * y = const + g(t, y, z) * delta`` for y, element-wise.

    Linear presets are solved in closed form.  Otherwise fixed-point iteration
    y <- (const + g(t, y, z) delta) / scale, a contraction with factor
    delta*mu/scale; elements that fail to settle within ``max_iter`` are
    handed to a bracketing bisection.
    """
    const = np.asarray(const, dtype=np.float64)
    z = np.asarray(z, dtype=np.float64)
    if isinstance(g.body, Linear):
        b, c, r = g.body.b, g.body.c, g.body.r
        return (const + (c * z + r) * delta) / (scale - b * delta)

    y = const / scale
    tol = _tolerance(y) if tol is None else np.broadcast_to(tol, y.shape)
    for _ in range(max_iter):
        y_new = (const + np.asarray(g(t, y, z)) * delta) / scale
        done = np.abs(y_new - y) <= tol
        y = y_new
        if np.all(done):
            return y
    bad = ~done
    y = np.array(y, dtype=np.float64, copy=True)
    y[bad] = _bisect(const[bad] if const.ndim else const, t,
                     z[bad] if z.ndim else z, g, delta, scale, tol[bad] if np.ndim(tol) else tol)
    return y


def _bisect(const, t, z, g, delta, scale, tol):
    """Bracket and bisect F(y) = scale*y - g(t,y,z)*delta - const, increasing when delta*mu < scale."""
    const = np.atleast_1d(np.asarray(const, dtype=np.float64))
    z = np.broadcast_to(z, const.shape)
    t = np.broadcast_to(np.asarray(t, dtype=np.float64), const.shape)

    def F(y):
        return scale * y - np.asarray(g(t, y, z)) * delta - const

    y0 = const / scale
    width = np.maximum(1.0, np.abs(np.asarray(g(t, y0, z))) * delta)
    lo, hi = y0 - width, y0 + width
    for _ in range(200):
        flo, fhi = F(lo), F(hi)
        need_lo, need_hi = flo > 0, fhi < 0
        if not (np.any(need_lo) or np.any(need_hi)):
            break
        lo = np.where(need_lo, lo - 2 * (hi - lo), lo)
        hi = np.where(need_hi, hi + 2 * (hi - lo), hi)
    else:
        raise NumericalError("implicit step: no sign change found for the driver equation")
    if not np.all(np.isfinite(lo) & np.isfinite(hi)):
        raise NumericalError("implicit step: bracket diverged")
    for _ in range(400):
        mid = 0.5 * (lo + hi)
        fm = F(mid)
        lo = np.where(fm <= 0, mid, lo)
        hi = np.where(fm > 0, mid, hi)
        if np.all(hi - lo <= tol):
            break
    else:
        raise NumericalError("implicit step: bisection did not converge")
    return 0.5 * (lo + hi)


def implicit_step_solve(E, t: float, z, g: Generator, delta: float, tol=None):
    """The y with y - g(t, y, z) * delta = E.

    Works element-wise on arrays.  Default tolerance is 1e-13 * max(1, |E|)
    on successive iterates, with at most 200 fixed-point sweeps.
    """
    y = _solve_driver_equation(E, t, z, g, delta, 1.0, tol)
    return float(y) if np.ndim(y) == 0 else y


# ---------------------------------------------------------------------------


def _require_markovian(spec: ProblemSpec) -> None:
    if isinstance(spec.barrier, ItoBarrier):
        raise ValueError("Ito-process barriers are path dependent; use oracle.solve_full_path_tree")


def backward_induction(lat: Lattice, terminal: np.ndarray,
                       step: Callable[[int, float, np.ndarray, np.ndarray], np.ndarray]):
    """Run ``step(j, t_j, E, z) -> y_j`` from level n-1 down to 0.

    Returns the lists of y levels (0..n) and z levels (0..n-1).
    """
    n = lat.n
    s = lat.sqrt_delta
    ys: list[np.ndarray] = [None] * (n + 1)  # type: ignore[list-item]
    zs: list[np.ndarray] = [None] * n  # type: ignore[list-item]
    ys[n] = np.asarray(terminal, dtype=np.float64)
    for j in range(n - 1, -1, -1):
        nxt = ys[j + 1]
        e = _ce(nxt)
        z = _mc(nxt, s)
        ys[j] = np.asarray(step(j, lat.time(j), e, z), dtype=np.float64)
        zs[j] = z
    return ys, zs


def _terminal(spec: ProblemSpec, lat: Lattice) -> np.ndarray:
    if spec.T != lat.T:
        raise ValueError(f"lattice horizon {lat.T} differs from problem horizon {spec.T}")
    return level_values(lat, lat.n, spec.terminal)


def solve_implicit(spec: ProblemSpec, lat: Lattice, tol=None) -> SolutionSurface:
    _require_markovian(spec)
    g, delta = spec.generator, lat.delta

    def step(j, t, e, z):
        return _solve_driver_equation(e, t, z, g, delta, 1.0, tol)

    ys, zs = backward_induction(lat, _terminal(spec, lat), step)
    return SolutionSurface(lat, "implicit", spec, ys, zs)


def solve_explicit(spec: ProblemSpec, lat: Lattice, driver_at_root: bool = True) -> SolutionSurface:
    """Explicit scheme: the driver is evaluated at E instead of the unknown y.

    With ``driver_at_root=False`` the last backward step (j = 0) drops the
    driver term and returns y_0 = E[y_1].  That legacy convention is what some
    published explicit-scheme tables were generated with; it keeps the same
    limit as n grows.
    """
    _require_markovian(spec)
    g, delta = spec.generator, lat.delta

    def step(j, t, e, z):
        if j == 0 and not driver_at_root:
            return e.copy()
        return e + np.asarray(g(t, e, z)) * delta

    ys, zs = backward_induction(lat, _terminal(spec, lat), step)
    return SolutionSurface(lat, "explicit", spec, ys, zs)


def solve_split(spec: ProblemSpec, lat: Lattice, tol=None) -> SolutionSurface:
    """Implicit in g1, explicit in g2: y = E + g1(t, y, z) delta + g2(t, E, z) delta."""
    _require_markovian(spec)
    if not isinstance(spec.generator.body, SplitPair):
        raise ValueError("the split scheme needs a driver built with Generator.split(g1, g2)")
    g1, g2 = spec.generator.body.g1, spec.generator.body.g2
    delta = lat.delta

    def step(j, t, e, z):
        return _solve_driver_equation(e + np.asarray(g2(t, e, z)) * delta, t, z, g1, delta, 1.0, tol)

    ys, zs = backward_induction(lat, _terminal(spec, lat), step)
    return SolutionSurface(lat, "split", spec, ys, zs)
