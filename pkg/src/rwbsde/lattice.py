"""Recombining binomial lattice of the scaled Bernoulli walk.

The walk ``B_j = sqrt(delta) * (eps_1 + ... + eps_j)`` with i.i.d. fair +-1
signs only depends on the number of up-moves ``k``, so level ``j`` carries
``j + 1`` node values, indexed by ``k = 0..j`` with coordinate
``x(j, k) = (2k - j) * sqrt(delta)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .expr import Expression, evaluate


@dataclass(frozen=True)
class Lattice:
    n: int
    T: float = 1.0

    def __post_init__(self):
        if int(self.n) != self.n or self.n < 1:
            raise ValueError(f"number of steps must be a positive integer, got {self.n!r}")
        if not self.T > 0:
            raise ValueError(f"horizon must be positive, got {self.T!r}")
        object.__setattr__(self, "n", int(self.n))
        object.__setattr__(self, "T", float(self.T))

    @property
    def delta(self) -> float:
        return self.T / self.n

    @property
    def sqrt_delta(self) -> float:
        return math.sqrt(self.delta)

    def time(self, j: int) -> float:
        return j * self.delta

    def coordinates(self, j: int) -> np.ndarray:
        """All node coordinates of level ``j``, ordered by up-move count."""
        if not 0 <= j <= self.n:
            raise IndexError(f"level {j} outside 0..{self.n}")
        return (2.0 * np.arange(j + 1) - j) * self.sqrt_delta


@dataclass(frozen=True)
class LevelFunction:
    """A function of the first ``level`` signs, stored as its ``level + 1`` node values."""

    level: int
    values: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        if values.shape != (self.level + 1,):
            raise ValueError(f"level {self.level} needs {self.level + 1} values, got shape {values.shape}")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)


def node_coordinate(lat: Lattice, j: int, k: int) -> float:
    if not 0 <= k <= j <= lat.n:
        raise IndexError(f"node (j={j}, k={k}) outside the lattice with n={lat.n}")
    return (2 * k - j) * lat.sqrt_delta


# The two primitives below are written on raw arrays because every scheme calls
# them once per level; the LevelFunction wrappers exist for the public API.

def _ce(next_values: np.ndarray) -> np.ndarray:
    return 0.5 * (next_values[1:] + next_values[:-1])


def _mc(next_values: np.ndarray, sqrt_delta: float) -> np.ndarray:
    return (next_values[1:] - next_values[:-1]) / (2.0 * sqrt_delta)


def conditional_expectation(next: LevelFunction) -> LevelFunction:
    """E[v | first j signs] for a level-(j+1) function ``v``: the mean of both children."""
    if next.level < 1:
        raise ValueError("conditional expectation needs a level >= 1")
    return LevelFunction(next.level - 1, _ce(next.values))


def martingale_coefficient(next: LevelFunction, lat: Lattice) -> LevelFunction:
    """E[v * eps_{j+1} | first j signs] / sqrt(delta): the one-step martingale integrand."""
    if next.level < 1:
        raise ValueError("martingale coefficient needs a level >= 1")
    return LevelFunction(next.level - 1, _mc(next.values, lat.sqrt_delta))


def level_values(lat: Lattice, j: int, fn: Expression, **fixed) -> np.ndarray:
    """Evaluate ``fn`` at every node of level ``j`` with ``x`` bound to the coordinates."""
    return evaluate(fn, {"x": lat.coordinates(j), **fixed})


def terminal_level(lat: Lattice, phi: Expression) -> LevelFunction:
    return LevelFunction(lat.n, level_values(lat, lat.n, phi))


def root_expectation(lat: Lattice, terminal: LevelFunction) -> float:
    """E[terminal] by repeated one-step conditional expectations."""
    if terminal.level != lat.n:
        raise ValueError(f"terminal level must be {lat.n}, got {terminal.level}")
    v = terminal.values
    for _ in range(lat.n):
        v = _ce(v)
    return float(v[0])
