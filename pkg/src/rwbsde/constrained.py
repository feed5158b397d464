"""Penalization schemes for constrained BSDEs.

Two constraint sets are supported: z in [a, b] (distance (z-a)^- + (z-b)^+)
and y >= phi(z) (distance (y - phi(z))^-).  The penalty p * distance * delta
is added to the driver; the resulting increments build the increasing
process A.  z is always read off the next level first, so the penalty on z
acts through y.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import NumericalError
from .lattice import Lattice, LevelFunction
from .problem import PhiReflection, ProblemSpec, ZInterval, stability_guard
from .reflected import path_nodes, penalized_explicit_step, penalized_implicit_step
from .schemes import (SolutionSurface, _require_markovian, _solve_driver_equation, _terminal,
                      backward_induction)

EXPLOSION_THRESHOLD = 1e12


@dataclass
class ConstrainedSurface(SolutionSurface):
    """Solution surface plus per-node increments of A on levels 0..n-1."""

    a_incr: list[np.ndarray] = field(default_factory=list, repr=False)
    p: float = 0.0

    def a_level(self, j: int) -> LevelFunction:
        return LevelFunction(j, self.a_incr[j])


def _checked(y: np.ndarray, j: int, p: float, lat: Lattice) -> np.ndarray:
    if not np.all(np.abs(y) <= EXPLOSION_THRESHOLD):
        guard = stability_guard(p, lat)
        raise NumericalError(
            f"solution exploded at level {j} (|y| > {EXPLOSION_THRESHOLD:g}); "
            f"p*sqrt(delta) = {guard.value:.4g} ({guard.status}), reduce p or refine n"
        )
    return y


def _penalty(spec: ProblemSpec, p, lat: Lattice, strict: bool) -> float:
    p = spec.p if p is None else p
    if p is None or p < 0:
        raise ValueError("constrained schemes need a penalization parameter p >= 0")
    stability_guard(p, lat, strict=strict)
    return float(p)


def solve_z_constrained(spec: ProblemSpec, lat: Lattice, p: float | None = None,
                        mode: str = "implicit", strict: bool = False, tol=None) -> ConstrainedSurface:
    """Interval constraint on z.

    implicit: y solves y = E + p d(z) delta + g(t, y, z) delta
    explicit: y = E + g(t, E, z) delta + p d(z) delta
    """
    _require_markovian(spec)
    if not isinstance(spec.constraint, ZInterval):
        raise ValueError("solve_z_constrained needs a ZInterval constraint")
    if mode not in ("implicit", "explicit"):
        raise ValueError(f"mode must be 'implicit' or 'explicit', got {mode!r}")
    p = _penalty(spec, p, lat, strict)
    gamma, g, delta = spec.constraint, spec.generator, lat.delta
    incr: list[np.ndarray] = [None] * lat.n  # type: ignore[list-item]

    def step(j, t, e, z):
        a = p * gamma.distance(z) * delta
        incr[j] = a
        if mode == "implicit":
            y = _solve_driver_equation(e + a, t, z, g, delta, 1.0, tol)
        else:
            y = e + np.asarray(g(t, e, z)) * delta + a
        return _checked(y, j, p, lat)

    ys, zs = backward_induction(lat, _terminal(spec, lat), step)
    return ConstrainedSurface(lat, f"z-constrained-{mode}", spec, ys, zs, a_incr=incr, p=p)


def solve_phi_reflected(spec: ProblemSpec, lat: Lattice, p: float | None = None,
                        mode: str = "implicit", strict: bool = False, tol=None) -> ConstrainedSurface:
    """Constraint y >= phi(z), penalized with p (phi(z) - y)^+ delta.

    With z fixed by the next level, phi(z) is a per-node barrier, so the
    implicit mode is the two-branch penalized step and the explicit-implicit
    mode the closed-form p delta / (1 + p delta) correction.
    """
    _require_markovian(spec)
    if not isinstance(spec.constraint, PhiReflection):
        raise ValueError("solve_phi_reflected needs a PhiReflection constraint")
    if mode not in ("implicit", "explicit-implicit"):
        raise ValueError(f"mode must be 'implicit' or 'explicit-implicit', got {mode!r}")
    p = _penalty(spec, p, lat, strict)
    gamma, g, delta = spec.constraint, spec.generator, lat.delta
    incr: list[np.ndarray] = [None] * lat.n  # type: ignore[list-item]

    def step(j, t, e, z):
        barrier = gamma.phi_values(z)
        if mode == "implicit":
            y, a = penalized_implicit_step(e, t, z, g, delta, p, barrier, tol)
        else:
            y, a = penalized_explicit_step(e, t, z, g, delta, p, barrier)
        incr[j] = a
        return _checked(y, j, p, lat)

    ys, zs = backward_induction(lat, _terminal(spec, lat), step)
    return ConstrainedSurface(lat, f"phi-{mode}", spec, ys, zs, a_incr=incr, p=p)


def accumulate_A(surface: ConstrainedSurface, path) -> np.ndarray:
    """A_j = a_0 + ... + a_j along ``path`` for j = 0..n-1, and A_n = A_{n-1}.

    Same indexing as K for reflected problems; there is no increment at the
    terminal date.
    """
    if len(path) != surface.lattice.n:
        raise ValueError(f"path length {len(path)} differs from n = {surface.lattice.n}")
    ks = path_nodes(path)
    incr = np.array([surface.a_incr[j][k] for j, k in enumerate(ks[:-1])] + [0.0])
    return np.cumsum(incr)
