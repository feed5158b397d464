"""Reflected BSDEs with one lower barrier L_t = psi(t, B_t).

Per level, with E and z read off the children as usual, the discrete problem
is

    y = E + g(t_j, y, z) delta + d,    y >= L,    (y - L) d = 0,   d >= 0.

The reflected schemes solve it exactly (implicit) or with g frozen at E
(explicit).  The penalized schemes replace d by p (y - L)^- delta.  The
per-node increments d are stored so that K can be accumulated along paths.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .lattice import Lattice, LevelFunction, level_values
from .problem import Barrier, ProblemSpec
from .schemes import (SolutionSurface, _require_markovian, _solve_driver_equation, _terminal,
                      backward_induction)


@dataclass
class ReflectedSurface(SolutionSurface):
    """Solution surface plus increments ``d[j]`` of K (levels 0..n; ``d[n]`` is the terminal jump)."""

    d: list[np.ndarray] = field(default_factory=list, repr=False)
    p: float | None = None

    def barrier_level(self, j: int) -> np.ndarray:
        return level_values(self.lattice, j, self.spec.barrier.psi, t=self.lattice.time(j))

    def d_level(self, j: int) -> LevelFunction:
        return LevelFunction(j, self.d[j])


def apply_terminal_jump(terminal: LevelFunction, barrier_at_T: LevelFunction):
    """Lift the terminal values onto the barrier: returns (max(xi, L), (L - xi)^+)."""
    if terminal.level != barrier_at_T.level:
        raise ValueError("terminal and barrier levels differ")
    xi, L = terminal.values, barrier_at_T.values
    return (LevelFunction(terminal.level, np.maximum(xi, L)),
            LevelFunction(terminal.level, np.maximum(L - xi, 0.0)))


def _barrier(spec: ProblemSpec) -> Barrier:
    _require_markovian(spec)
    if not isinstance(spec.barrier, Barrier):
        raise ValueError("this scheme needs a barrier psi(t, x)")
    return spec.barrier


def _run(spec, lat, step, scheme, jump: bool, p=None) -> ReflectedSurface:
    barrier = _barrier(spec)
    xi = _terminal(spec, lat)
    if jump:
        L_T = level_values(lat, lat.n, barrier.psi, t=lat.T)
        adjusted, d_n = apply_terminal_jump(LevelFunction(lat.n, xi), LevelFunction(lat.n, L_T))
        terminal, d_terminal = adjusted.values, d_n.values
    else:
        terminal, d_terminal = xi, np.zeros_like(xi)

    ds: list[np.ndarray] = [None] * (lat.n + 1)  # type: ignore[list-item]
    ds[lat.n] = np.array(d_terminal)

    def wrapped(j, t, e, z):
        L = level_values(lat, j, barrier.psi, t=t)
        y, d = step(t, e, z, L)
        ds[j] = d
        return y

    ys, zs = backward_induction(lat, terminal, wrapped)
    return ReflectedSurface(lat, scheme, spec, ys, zs, d=ds, p=p)


def solve_reflected_implicit(spec: ProblemSpec, lat: Lattice, tol=None) -> ReflectedSurface:
    """Exact solution of the per-node reflected equation.

    The unconstrained implicit value y* is kept when y* >= L.  Otherwise
    y = L and d = L - E - g(t, L, z) delta, which is positive because
    y -> y - g(t, y, z) delta is increasing for delta*mu < 1.
    """
    g, delta = spec.generator, lat.delta

    def step(t, e, z, L):
        y_free = _solve_driver_equation(e, t, z, g, delta, 1.0, tol)
        active = y_free < L
        d = np.where(active, L - e - np.asarray(g(t, L, z)) * delta, 0.0)
        return np.where(active, L, y_free), np.maximum(d, 0.0)

    return _run(spec, lat, step, "reflected-implicit", jump=True)


def solve_reflected_explicit(spec: ProblemSpec, lat: Lattice) -> ReflectedSurface:
    """c = E + g(t, E, z) delta, d = (c - L)^-, y = max(c, L)."""
    g, delta = spec.generator, lat.delta

    def step(t, e, z, L):
        c = e + np.asarray(g(t, e, z)) * delta
        d = np.maximum(L - c, 0.0)
        return c + d, d

    return _run(spec, lat, step, "reflected-explicit", jump=True)


def _penalty(spec: ProblemSpec, p):
    p = spec.p if p is None else p
    if p is None or p < 0:
        raise ValueError("penalized schemes need a penalization parameter p >= 0")
    return float(p)


def penalized_implicit_step(e, t, z, g, delta, p, L, tol=None):
    """Solve y = E + g(t, y, z) delta + p (y - L)^- delta; returns (y, p (y - L)^- delta).

    Two branches: if the unpenalized solution already sits above L it is the
    answer; otherwise the solution lies below L, where the equation is
    (1 + p delta) y = E + p L delta + g(t, y, z) delta.
    """
    y_free = _solve_driver_equation(e, t, z, g, delta, 1.0, tol)
    below = y_free < L
    if np.any(below):
        const = np.asarray(e) + p * np.asarray(L) * delta
        y_pen = _solve_driver_equation(const, t, z, g, delta, 1.0 + p * delta, tol)
        y = np.where(below, y_pen, y_free)
    else:
        y = y_free
    return y, p * np.maximum(L - y, 0.0) * delta


def penalized_explicit_step(e, t, z, g, delta, p, L):
    """c = E + g(t, E, z) delta, y = c + p delta / (1 + p delta) (c - L)^-."""
    c = e + np.asarray(g(t, e, z)) * delta
    y = c + (p * delta / (1.0 + p * delta)) * np.maximum(L - c, 0.0)
    return y, p * np.maximum(L - y, 0.0) * delta


def solve_penalized_implicit(spec: ProblemSpec, lat: Lattice, p: float | None = None,
                             tol=None) -> ReflectedSurface:
    """Penalized scheme solved exactly per node.  The terminal value is xi itself
    (no jump); the penalty pulls y towards the barrier from level n-1 on."""
    p = _penalty(spec, p)
    g, delta = spec.generator, lat.delta

    def step(t, e, z, L):
        return penalized_implicit_step(e, t, z, g, delta, p, L, tol)

    return _run(spec, lat, step, "penalized-implicit", jump=False, p=p)


def solve_penalized_explicit_implicit(spec: ProblemSpec, lat: Lattice,
                                      p: float | None = None) -> ReflectedSurface:
    p = _penalty(spec, p)
    g, delta = spec.generator, lat.delta

    def step(t, e, z, L):
        return penalized_explicit_step(e, t, z, g, delta, p, L)

    return _run(spec, lat, step, "penalized-explicit-implicit", jump=False, p=p)


def path_nodes(path) -> np.ndarray:
    """Up-move counts k_0..k_n along a sequence of +-1 signs."""
    eps = np.asarray(path)
    if not np.all(np.abs(eps) == 1):
        raise ValueError("a path is a sequence of +1/-1 signs")
    return np.concatenate(([0], np.cumsum(eps > 0)))


def accumulate_K(surface: ReflectedSurface, path) -> np.ndarray:
    """K_j = d_0 + ... + d_j along ``path`` (length n), j = 0..n; K_n includes the terminal jump."""
    if len(path) != surface.lattice.n:
        raise ValueError(f"path length {len(path)} differs from n = {surface.lattice.n}")
    ks = path_nodes(path)
    incr = np.array([surface.d[j][k] for j, k in enumerate(ks)])
    return np.cumsum(incr)
