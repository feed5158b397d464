"""Dispatch from scheme ids to solver functions."""

from __future__ import annotations

from .constrained import solve_phi_reflected, solve_z_constrained
from .lattice import Lattice
from .problem import SCHEMES, ProblemSpec
from .reflected import (solve_penalized_explicit_implicit, solve_penalized_implicit,
                        solve_reflected_explicit, solve_reflected_implicit)
from .schemes import SolutionSurface, solve_explicit, solve_implicit, solve_split


def solve(spec: ProblemSpec, lat: Lattice, scheme: str, p: float | None = None,
          driver_at_root: bool = True, strict: bool = False) -> SolutionSurface:
    """Solve ``spec`` on ``lat`` with the scheme named ``scheme`` (see problem.SCHEMES)."""
    if scheme == "implicit":
        return solve_implicit(spec, lat)
    if scheme == "explicit":
        return solve_explicit(spec, lat, driver_at_root=driver_at_root)
    if scheme == "split":
        return solve_split(spec, lat)
    if scheme == "reflected-implicit":
        return solve_reflected_implicit(spec, lat)
    if scheme == "reflected-explicit":
        return solve_reflected_explicit(spec, lat)
    if scheme == "penalized-implicit":
        return solve_penalized_implicit(spec, lat, p)
    if scheme == "penalized-explicit-implicit":
        return solve_penalized_explicit_implicit(spec, lat, p)
    if scheme.startswith("z-constrained-"):
        return solve_z_constrained(spec, lat, p, mode=scheme.removeprefix("z-constrained-"),
                                   strict=strict)
    if scheme.startswith("phi-"):
        return solve_phi_reflected(spec, lat, p, mode=scheme.removeprefix("phi-"), strict=strict)
    raise ValueError(f"unknown scheme {scheme!r}; expected one of {', '.join(SCHEMES)}")
