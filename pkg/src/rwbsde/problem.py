"""Problem definitions: drivers, terminal payoff, barrier, constraints, validation."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Union

import numpy as np

from .errors import ValidationError
from .expr import Binary, Expression, Num, Unary, Var, constant, evaluate, parse, variables
from .lattice import Lattice

DRIVER_VARS = frozenset({"t", "y", "z"})
TERMINAL_VARS = frozenset({"x"})
BARRIER_VARS = frozenset({"t", "x"})
PHI_VARS = frozenset({"z"})

SCHEMES = (
    "implicit",
    "explicit",
    "split",
    "reflected-implicit",
    "reflected-explicit",
    "penalized-implicit",
    "penalized-explicit-implicit",
    "z-constrained-implicit",
    "z-constrained-explicit",
    "phi-implicit",
    "phi-explicit-implicit",
)

_IMPLICIT = {"implicit", "split", "reflected-implicit", "penalized-implicit",
             "z-constrained-implicit", "phi-implicit"}
_EXPLICIT = {"explicit", "split", "penalized-explicit-implicit",
             "z-constrained-explicit", "phi-explicit-implicit"}
_PENALIZED = {"penalized-implicit", "penalized-explicit-implicit", "z-constrained-implicit",
              "z-constrained-explicit", "phi-implicit", "phi-explicit-implicit"}
_BARRIER = {"reflected-implicit", "reflected-explicit", "penalized-implicit",
            "penalized-explicit-implicit"}


def _check_vars(e: Expression, allowed: frozenset[str], what: str) -> Expression:
    extra = variables(e) - allowed
    if extra:
        raise ValueError(f"{what} may only use {sorted(allowed)}, found {sorted(extra)}")
    return e


# ---------------------------------------------------------------------------
# driver presets


@dataclass(frozen=True)
class Linear:
    """g = b*y + c*z + r."""

    b: float
    c: float
    r: float

    @property
    def mu(self) -> float:
        return max(abs(self.b), abs(self.c))

    def __call__(self, t, y, z):
        return self.b * y + self.c * z + self.r

    def to_expression(self) -> Expression:
        return Binary("+", Binary("+", Binary("*", constant(self.b), Var("y")),
                                  Binary("*", constant(self.c), Var("z"))),
                      constant(self.r))


@dataclass(frozen=True)
class TwoRates:
    """g = r*y + sigma_theta*z + (R - r)*(y - z)^-: lending rate r, borrowing rate R."""

    r: float
    R: float
    sigma_theta: float

    def __post_init__(self):
        if self.R < self.r:
            raise ValueError(f"borrowing rate R={self.R} must be >= lending rate r={self.r}")

    @property
    def mu(self) -> float:
        # union bound, not sharp
        return max(self.r, abs(self.sigma_theta)) + (self.R - self.r)

    def __call__(self, t, y, z):
        return self.r * y + self.sigma_theta * z + (self.R - self.r) * np.maximum(-(y - z), 0.0)

    def to_expression(self) -> Expression:
        return Binary(
            "+",
            Binary("+", Binary("*", constant(self.r), Var("y")),
                   Binary("*", constant(self.sigma_theta), Var("z"))),
            Binary("*", constant(self.R - self.r), Unary("negpart", Binary("-", Var("y"), Var("z")))),
        )


@dataclass(frozen=True)
class QuadraticZ:
    """g = z^2 / 2 (not globally Lipschitz)."""

    mu = math.inf

    def __call__(self, t, y, z):
        return z * z / 2.0

    def to_expression(self) -> Expression:
        return Binary("/", Binary("^", Var("z"), Num(2)), Num(2))


@dataclass(frozen=True)
class SplitPair:
    """g = g1 + g2; the split scheme treats g1 implicitly and g2 explicitly."""

    g1: "Generator"
    g2: "Generator"

    @property
    def mu(self) -> float:
        return self.g1.mu + self.g2.mu

    def __call__(self, t, y, z):
        return self.g1(t, y, z) + self.g2(t, y, z)

    def to_expression(self) -> Expression:
        return Binary("+", self.g1.to_expression(), self.g2.to_expression())


Preset = Union[Linear, TwoRates, QuadraticZ, SplitPair]


@dataclass(frozen=True)
class Generator:
    """A driver g(t, y, z) with its Lipschitz constant ``mu``.

    ``body`` is either a parsed expression over {t, y, z} or a preset.  Calls
    are vectorized: any of t, y, z may be numpy arrays.
    """

    body: Union[Expression, Preset]
    mu: float

    def __post_init__(self):
        if isinstance(self.body, Expression):
            _check_vars(self.body, DRIVER_VARS, "a driver")
        if not self.mu > 0:
            raise ValueError(f"Lipschitz constant must be positive, got {self.mu!r}")

    @classmethod
    def linear(cls, b: float, c: float, r: float = 0.0) -> "Generator":
        p = Linear(float(b), float(c), float(r))
        # mu must stay positive even for g = r
        return cls(p, p.mu if p.mu > 0 else 1e-12)

    @classmethod
    def two_rates(cls, r: float, R: float, sigma_theta: float) -> "Generator":
        p = TwoRates(float(r), float(R), float(sigma_theta))
        return cls(p, p.mu if p.mu > 0 else 1e-12)

    @classmethod
    def quadratic_z(cls) -> "Generator":
        return cls(QuadraticZ(), math.inf)

    @classmethod
    def split(cls, g1: "Generator", g2: "Generator") -> "Generator":
        return cls(SplitPair(g1, g2), g1.mu + g2.mu)

    @classmethod
    def from_expression(cls, source: Union[str, Expression], mu: float | None = None,
                        box: dict | None = None) -> "Generator":
        """Driver from source text; ``mu`` is estimated by sampling when not given."""
        e = parse(source, DRIVER_VARS) if isinstance(source, str) else source
        if mu is None:
            mu = lipschitz_estimate(cls(e, 1.0), box)
            if mu == 0:
                mu = 1e-12
        return cls(e, float(mu))

    @property
    def is_lipschitz(self) -> bool:
        return math.isfinite(self.mu)

    @property
    def is_linear(self) -> bool:
        return isinstance(self.body, Linear)

    def __call__(self, t, y, z):
        if isinstance(self.body, Expression):
            return evaluate(self.body, {"t": t, "y": y, "z": z})
        return self.body(t, y, z)

    def to_expression(self) -> Expression:
        if isinstance(self.body, Expression):
            return self.body
        return self.body.to_expression()


ZERO_DRIVER = Generator.linear(0.0, 0.0, 0.0)


def lipschitz_estimate(g: Generator, box: dict | None = None, samples: int = 20000,
                       seed: int = 0) -> float:
    """Sampled lower bound on the Lipschitz constant of ``g`` in (y, z) over ``box``.

    ``box`` maps "t", "y", "z" to (low, high) ranges (defaults [0, 1] and
    [-10, 10]).  Half of the pairs are drawn independently over the box, the
    other half as small perturbations, so both global slopes and local
    derivatives are probed.
    """
    box = {"t": (0.0, 1.0), "y": (-10.0, 10.0), "z": (-10.0, 10.0), **(box or {})}
    rng = np.random.default_rng(seed)
    half = max(samples // 2, 1)

    def draw(name, size):
        lo, hi = box[name]
        return rng.uniform(lo, hi, size)

    t = draw("t", 2 * half)
    y1, z1 = draw("y", 2 * half), draw("z", 2 * half)
    y2, z2 = draw("y", 2 * half), draw("z", 2 * half)
    # second half: local pairs
    scale = 1e-4 * max(box["y"][1] - box["y"][0], box["z"][1] - box["z"][0])
    y2[half:] = np.clip(y1[half:] + scale * rng.standard_normal(half), *box["y"])
    z2[half:] = np.clip(z1[half:] + scale * rng.standard_normal(half), *box["z"])
    dist = np.abs(y1 - y2) + np.abs(z1 - z2)
    keep = dist > 0
    dg = np.abs(np.asarray(g(t, y1, z1)) - np.asarray(g(t, y2, z2)))
    return float(np.max(dg[keep] / dist[keep])) if np.any(keep) else 0.0


# ---------------------------------------------------------------------------
# barriers and constraints


@dataclass(frozen=True)
class Barrier:
    """Lower barrier L_t = psi(t, B_t)."""

    psi: Expression

    def __post_init__(self):
        _check_vars(self.psi, BARRIER_VARS, "a barrier")

    @classmethod
    def parse(cls, source: str) -> "Barrier":
        return cls(parse(source, BARRIER_VARS))

    def values(self, t: float, x):
        return evaluate(self.psi, {"t": t, "x": x})


@dataclass(frozen=True)
class ItoBarrier:
    """L_t = L0 + int drift(s, B_s) ds + int vol(s, B_s) dB_s, discretized along each path.

    Path dependent, so it is only accepted by the full path-tree solver.
    """

    l0: float
    drift: Expression
    vol: Expression

    def __post_init__(self):
        _check_vars(self.drift, BARRIER_VARS, "a barrier drift")
        _check_vars(self.vol, BARRIER_VARS, "a barrier volatility")


@dataclass(frozen=True)
class ZInterval:
    """Constraint z in [a, b] with a <= 0 <= b."""

    a: float
    b: float

    def __post_init__(self):
        if not self.a <= 0 <= self.b:
            raise ValueError(f"interval constraint needs a <= 0 <= b, got [{self.a}, {self.b}]")

    def distance(self, z):
        """(z - a)^- + (z - b)^+."""
        return np.maximum(self.a - z, 0.0) + np.maximum(z - self.b, 0.0)


@dataclass(frozen=True)
class PhiReflection:
    """Constraint y >= phi(z)."""

    phi: Expression

    def __post_init__(self):
        _check_vars(self.phi, PHI_VARS, "a phi constraint")

    @classmethod
    def parse(cls, source: str) -> "PhiReflection":
        return cls(parse(source, PHI_VARS))

    def phi_values(self, z):
        return evaluate(self.phi, {"z": z})

    def distance(self, y, z):
        """(y - phi(z))^-."""
        return np.maximum(self.phi_values(z) - y, 0.0)


Constraint = Union[ZInterval, PhiReflection]


@dataclass(frozen=True)
class ProblemSpec:
    generator: Generator
    terminal: Expression
    T: float = 1.0
    barrier: Union[Barrier, ItoBarrier, None] = None
    constraint: Union[Constraint, None] = None
    p: float | None = None

    def __post_init__(self):
        if not self.T > 0:
            raise ValueError(f"horizon must be positive, got {self.T!r}")
        _check_vars(self.terminal, TERMINAL_VARS, "a terminal condition")
        if self.barrier is not None and self.constraint is not None:
            raise ValueError("a problem has either a barrier or a constraint, not both")
        if self.p is not None and not self.p >= 0:
            raise ValueError(f"penalization parameter must be >= 0, got {self.p!r}")

    @classmethod
    def from_sources(cls, driver: str | Generator, terminal: str, T: float = 1.0,
                     barrier: str | None = None, phi: str | None = None,
                     interval: tuple[float, float] | None = None, p: float | None = None,
                     mu: float | None = None) -> "ProblemSpec":
        g = driver if isinstance(driver, Generator) else Generator.from_expression(driver, mu)
        constraint = None
        if phi is not None and interval is not None:
            raise ValueError("give either a phi constraint or an interval, not both")
        if phi is not None:
            constraint = PhiReflection.parse(phi)
        elif interval is not None:
            constraint = ZInterval(*interval)
        return cls(
            generator=g,
            terminal=parse(terminal, TERMINAL_VARS),
            T=T,
            barrier=Barrier.parse(barrier) if barrier is not None else None,
            constraint=constraint,
            p=p,
        )


# ---------------------------------------------------------------------------
# validation


@dataclass(frozen=True)
class GuardReport:
    value: float  # p * sqrt(delta)
    status: str  # "ok", "boundary" or "violated"


def stability_guard(p: float, lat: Lattice, strict: bool = False) -> GuardReport:
    """Penalized schemes blow up once p * sqrt(delta) exceeds 1."""
    value = p * lat.sqrt_delta
    if abs(value - 1.0) <= 1e-12:
        status = "boundary"
    elif value < 1.0:
        status = "ok"
    else:
        status = "violated"
    if strict and status == "violated":
        raise ValidationError(f"p*sqrt(delta) = {value:.6g} > 1: penalized solution will explode")
    return GuardReport(value, status)


@dataclass(frozen=True)
class Condition:
    name: str
    value: float
    status: str  # "pass" or "warn"
    applies: bool
    note: str = ""


@dataclass
class ValidationReport:
    scheme: str
    conditions: list[Condition] = field(default_factory=list)

    @property
    def warnings(self) -> list[Condition]:
        return [c for c in self.conditions if c.applies and c.status != "pass"]

    @property
    def ok(self) -> bool:
        return not self.warnings

    def as_dict(self) -> dict:
        return {
            "scheme": self.scheme,
            "ok": self.ok,
            "conditions": [
                {"name": c.name, "value": c.value, "status": c.status, "applies": c.applies,
                 "note": c.note}
                for c in self.conditions
            ],
        }


def _mu_of(spec: ProblemSpec, scheme: str) -> tuple[float, float]:
    """Lipschitz constants seen by the implicit and explicit parts of ``scheme``."""
    g = spec.generator
    if scheme == "split" and isinstance(g.body, SplitPair):
        return g.body.g1.mu, g.body.g2.mu
    return g.mu, g.mu


def validate(spec: ProblemSpec, lat: Lattice, scheme: str, strict: bool = False) -> ValidationReport:
    """Check the step-size conditions of ``scheme`` on ``lat``.

    Every condition is reported; ``applies`` marks those relevant to the
    scheme.  Under ``strict`` an applicable failing condition raises
    ValidationError, except for drivers declared non-Lipschitz, which only warn.
    """
    if scheme not in SCHEMES:
        raise ValueError(f"unknown scheme {scheme!r}; expected one of {', '.join(SCHEMES)}")
    delta = lat.delta
    mu_imp, mu_exp = _mu_of(spec, scheme)
    report = ValidationReport(scheme)
    lipschitz = math.isfinite(mu_imp) and math.isfinite(mu_exp)
    note = "" if lipschitz else "driver is not globally Lipschitz; conditions are not meaningful"

    def add(name, value, applies):
        status = "pass" if value < 1.0 else "warn"
        report.conditions.append(Condition(name, value, status, applies, note))

    add("implicit solvability: delta*mu < 1", delta * mu_imp, scheme in _IMPLICIT)
    add("explicit stability: (1+2mu+2mu^2)*delta < 1",
        (1 + 2 * mu_exp + 2 * mu_exp ** 2) * delta, scheme in _EXPLICIT)
    add("explicit reflected stability: (2+2mu+6mu^2)*delta < 1",
        (2 + 2 * mu_exp + 6 * mu_exp ** 2) * delta, scheme == "reflected-explicit")

    if scheme in _PENALIZED:
        if spec.p is None:
            report.conditions.append(
                Condition("penalization parameter", math.nan, "warn", True, "scheme needs p"))
        else:
            guard = stability_guard(spec.p, lat)
            status = "pass" if guard.status == "ok" else "warn"
            report.conditions.append(Condition(
                "penalization stability: p*sqrt(delta) < 1", guard.value, status, True, guard.status))

    if scheme in _BARRIER and spec.barrier is None:
        report.conditions.append(Condition("barrier present", math.nan, "warn", True,
                                           "scheme needs a barrier"))
    if scheme.startswith("z-constrained") and not isinstance(spec.constraint, ZInterval):
        report.conditions.append(Condition("interval constraint present", math.nan, "warn", True,
                                           "scheme needs an interval constraint"))
    if scheme.startswith("phi-") and not isinstance(spec.constraint, PhiReflection):
        report.conditions.append(Condition("phi constraint present", math.nan, "warn", True,
                                           "scheme needs a phi constraint"))
    if scheme == "split" and not isinstance(spec.generator.body, SplitPair):
        report.conditions.append(Condition("split driver present", math.nan, "warn", True,
                                           "scheme needs a split pair g1 + g2"))

    if strict:
        # p*sqrt(delta) = 1 exactly is reported but only > 1 is an error
        blocking = [c for c in report.warnings
                    if not (c.note and not lipschitz and math.isinf(c.value))
                    and c.note != "boundary"]
        if blocking:
            raise ValidationError("; ".join(f"{c.name} (value {c.value:.6g})" for c in blocking))
    return report
