"""Command-line front end.

    rwbsde solve --config run.ini --out results/
    rwbsde converge --config run.ini --sweep 100,500,1000
    rwbsde penalty-sweep --config run.ini --sweep 20,200,2000
    rwbsde sample-paths --config run.ini --paths 2 --seed 7
    rwbsde oracle --config run.ini
    rwbsde validate --config run.ini --strict

Exit codes: 0 success, 2 configuration error, 3 validation error (strict),
4 numerical failure.
"""

from __future__ import annotations

import argparse
import configparser
import csv
import math
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.stats import binom

from .errors import (BSDEError, ConfigError, EvaluationError, ExpressionError, NumericalError,
                     ValidationError)
from .lattice import Lattice
from .oracle import closed_form_linear, closed_form_quadratic
from .output import (sample_paths, write_json, write_paths_csv, write_paths_gnuplot,
                     write_surface_csv, write_surface_gnuplot)
from .problem import SCHEMES, Generator, Linear, ProblemSpec, QuadraticZ, validate
from .schemes import SolutionSurface
from .solve import solve

EXIT_OK, EXIT_CONFIG, EXIT_VALIDATION, EXIT_NUMERICAL = 0, 2, 3, 4
DEFAULT_N_CAP = 20000

_PENALIZED = ("penalized-implicit", "penalized-explicit-implicit", "z-constrained-implicit",
              "z-constrained-explicit", "phi-implicit", "phi-explicit-implicit")
_REFERENCE = {"penalized-implicit": "reflected-implicit",
              "penalized-explicit-implicit": "reflected-explicit"}


# ---------------------------------------------------------------------------
# configuration


@dataclass
class RunConfig:
    """Everything one run needs, read from an INI file."""

    spec: ProblemSpec
    scheme: str
    n: int
    p: float | None = None
    driver_at_root: bool = True
    strict: bool = False
    surface: str = "surface.csv"
    summary: str = "summary.json"
    trajectories: str = "paths.csv"
    report: str = "report.csv"
    gnuplot: bool = False
    paths: int = 2
    seed: int = 0
    beta: float = 1.0
    oracle_method: str = "quadrature"
    oracle_samples: int = 10_000_000
    reference: float | None = None
    sources: dict = field(default_factory=dict)

    def lattice(self, n: int | None = None) -> Lattice:
        return Lattice(self.n if n is None else n, self.spec.T)

    def with_p(self, p: float | None) -> ProblemSpec:
        s = self.spec
        return ProblemSpec(s.generator, s.terminal, s.T, s.barrier, s.constraint, p)


def _get(section, key, conv=str, default=None):
    if section is None or key not in section or section[key].strip() == "":
        return default
    raw = section[key].strip()
    try:
        if conv is bool:
            return section.getboolean(key)
        return conv(raw)
    except ValueError as exc:
        raise ConfigError(f"[{section.name}] {key} = {raw!r}: {exc}") from None


def _generator(prob) -> Generator:
    preset = _get(prob, "preset")
    mu = _get(prob, "mu", float)
    if preset is None:
        g1, g2 = _get(prob, "g1"), _get(prob, "g2")
        if g1 is not None or g2 is not None:
            if g1 is None or g2 is None:
                raise ConfigError("[problem] split drivers need both g1 and g2")
            return Generator.split(Generator.from_expression(g1, _get(prob, "mu1", float)),
                                   Generator.from_expression(g2, _get(prob, "mu2", float)))
        driver = _get(prob, "driver")
        if driver is None:
            raise ConfigError("[problem] needs 'driver', 'preset' or 'g1'/'g2'")
        return Generator.from_expression(driver, mu)
    if preset == "linear":
        return Generator.linear(_get(prob, "b", float, 0.0), _get(prob, "c", float, 0.0),
                                _get(prob, "r", float, 0.0))
    if preset == "two-rates":
        for key in ("r", "R", "sigma_theta"):
            if _get(prob, key) is None:
                raise ConfigError(f"[problem] preset two-rates needs {key}")
        return Generator.two_rates(_get(prob, "r", float), _get(prob, "R", float),
                                   _get(prob, "sigma_theta", float))
    if preset == "quadratic-z":
        return Generator.quadratic_z()
    raise ConfigError(f"[problem] unknown preset {preset!r} (linear, two-rates, quadratic-z)")


def _interval(text: str | None):
    if text is None:
        return None
    parts = [s.strip() for s in text.split(",")]
    if len(parts) != 2:
        raise ConfigError(f"[problem] interval must be 'a, b', got {text!r}")
    try:
        return float(parts[0]), float(parts[1])
    except ValueError:
        raise ConfigError(f"[problem] interval must be two numbers, got {text!r}") from None


def load_config(path, n_cap: int = DEFAULT_N_CAP) -> RunConfig:
    """Parse an INI run file; raises ConfigError on any problem."""
    # keys are case sensitive (R and r are different rates)
    cp = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    cp.optionxform = str
    try:
        with open(path) as fh:
            cp.read_file(fh)
    except (OSError, configparser.Error) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    if "problem" not in cp or "scheme" not in cp:
        raise ConfigError("config needs [problem] and [scheme] sections")
    prob, sch = cp["problem"], cp["scheme"]
    out = cp["output"] if "output" in cp else None
    orc = cp["oracle"] if "oracle" in cp else None
    rep = cp["report"] if "report" in cp else None
    flags = cp["flags"] if "flags" in cp else None

    scheme = _get(sch, "id")
    if scheme not in SCHEMES:
        raise ConfigError(f"[scheme] id must be one of {', '.join(SCHEMES)}, got {scheme!r}")
    n = _get(sch, "n", int)
    if n is None or n < 1:
        raise ConfigError("[scheme] n must be a positive integer")
    if n > n_cap:
        raise ConfigError(f"[scheme] n = {n} exceeds the cap {n_cap}; raise it with --n-cap")
    p = _get(sch, "p", float)
    terminal = _get(prob, "terminal")
    if terminal is None:
        raise ConfigError("[problem] needs a terminal expression")
    phi, interval = _get(prob, "phi"), _interval(_get(prob, "interval"))
    barrier = _get(prob, "barrier")
    try:
        spec = ProblemSpec.from_sources(_generator(prob), terminal, T=_get(prob, "T", float, 1.0),
                                        barrier=barrier, phi=phi, interval=interval, p=p)
    except (ExpressionError, ValueError) as exc:
        raise ConfigError(f"[problem] {exc}") from None

    cfg = RunConfig(
        spec=spec, scheme=scheme, n=n, p=p,
        driver_at_root=_get(sch, "root_driver", bool, True),
        strict=_get(flags, "strict", bool, False),
        surface=_get(out, "surface", str, "surface.csv"),
        summary=_get(out, "summary", str, "summary.json"),
        trajectories=_get(out, "trajectories", str, "paths.csv"),
        report=_get(out, "report", str, "report.csv"),
        gnuplot=_get(out, "gnuplot", bool, False),
        paths=_get(out, "paths", int, 2),
        seed=_get(out, "seed", int, 0),
        beta=_get(rep, "beta", float, 1.0),
        oracle_method=_get(orc, "method", str, "quadrature"),
        oracle_samples=_get(orc, "samples", int, 10_000_000),
        reference=_get(orc, "reference", float),
        sources={k: v for k, v in prob.items()},
    )
    if not 1 <= cfg.beta < 2:
        raise ConfigError("[report] beta must lie in [1, 2)")
    check_compatibility(cfg)
    return cfg


def check_compatibility(cfg: RunConfig) -> None:
    """Missing barriers, constraints or split drivers are configuration errors."""
    report = validate(cfg.spec, cfg.lattice(), cfg.scheme)
    # p may still come from --sweep, so it is checked when a solve needs it
    missing = [c.note for c in report.conditions
               if c.note.startswith("scheme needs") and c.note != "scheme needs p"]
    if missing:
        raise ConfigError(f"scheme {cfg.scheme}: " + "; ".join(missing))


# ---------------------------------------------------------------------------
# runs


def _solve(cfg: RunConfig, n: int | None = None, p: float | None = None) -> tuple[SolutionSurface, float]:
    p = cfg.p if p is None else p
    lat = cfg.lattice(n)
    start = time.perf_counter()
    surface = solve(cfg.with_p(p), lat, cfg.scheme, p=p, driver_at_root=cfg.driver_at_root,
                    strict=cfg.strict)
    return surface, time.perf_counter() - start


def _validation(cfg: RunConfig, n: int | None = None, p: float | None = None):
    p = cfg.p if p is None else p
    return validate(cfg.with_p(p), cfg.lattice(n), cfg.scheme, strict=cfg.strict)


def run_solve(cfg: RunConfig, out: Path) -> dict:
    report = _validation(cfg)
    surface, seconds = _solve(cfg)
    write_surface_csv(surface, out / cfg.surface)
    summary = {
        "root": surface.root,
        "scheme": cfg.scheme,
        "n": cfg.n,
        "T": cfg.spec.T,
        "p": cfg.p,
        "root_driver": cfg.driver_at_root,
        "problem": cfg.sources,
        "validation": report.as_dict(),
        "seconds": seconds,
    }
    write_json(summary, out / cfg.summary)
    if cfg.gnuplot:
        write_surface_gnuplot(surface, out)
    return summary


def oracle_value(cfg: RunConfig):
    """Closed-form Y_0 for linear and z^2/2 presets; None for other drivers."""
    body, spec = cfg.spec.generator.body, cfg.spec
    if isinstance(body, Linear):
        return closed_form_linear(body.b, body.c, body.r, spec.terminal, spec.T,
                                  cfg.oracle_method, cfg.oracle_samples, cfg.seed)
    if isinstance(body, QuadraticZ):
        return closed_form_quadratic(spec.terminal, spec.T, cfg.oracle_method,
                                     cfg.oracle_samples, cfg.seed)
    return None


@dataclass
class ReportRow:
    param: float
    root: float
    seconds: float
    error: str | None = None
    z_gap: float | None = None


@dataclass
class ConvergenceReport:
    """Roots over a sweep of n or p, sorted by the swept parameter."""

    parameter: str
    rows: list[ReportRow]
    reference: float | None = None
    reference_label: str = ""
    beta: float = 1.0

    def __post_init__(self):
        self.rows.sort(key=lambda r: r.param)

    @property
    def differences(self) -> list[float]:
        """root(i+1) - root(i) between successive rows (NaN next to failed rows)."""
        roots = [r.root for r in self.rows]
        return [b - a for a, b in zip(roots[:-1], roots[1:])]

    @property
    def deviations(self) -> list[float] | None:
        if self.reference is None:
            return None
        return [r.root - self.reference for r in self.rows]

    def write_csv(self, path) -> Path:
        path = Path(path)
        devs = self.deviations
        diffs = [math.nan] + self.differences
        with path.open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            head = [self.parameter, "root", "seconds", "difference"]
            if devs is not None:
                head.append("deviation")
            head += [f"z_gap_beta{self.beta:g}", "error"]
            w.writerow(head)
            for i, r in enumerate(self.rows):
                row = ["%.17g" % r.param, "%.17g" % r.root, "%.6f" % r.seconds,
                       "" if math.isnan(diffs[i]) else "%.17g" % diffs[i]]
                if devs is not None:
                    row.append("" if math.isnan(devs[i]) else "%.17g" % devs[i])
                row += ["" if r.z_gap is None else "%.17g" % r.z_gap, r.error or ""]
                w.writerow(row)
        return path

    def format_text(self) -> str:
        devs = self.deviations
        lines = []
        if self.reference is not None:
            lines.append(f"reference ({self.reference_label}): {self.reference:.6f}")
        head = f"{self.parameter:>10} {'root':>12} {'diff':>12}"
        head += f" {'deviation':>12}" if devs is not None else ""
        head += f" {'z-gap':>12} {'seconds':>9}"
        lines.append(head)
        diffs = [math.nan] + self.differences
        for i, r in enumerate(self.rows):
            line = f"{r.param:>10g} {r.root:>12.6f} {diffs[i]:>12.3e}"
            if devs is not None:
                line += f" {devs[i]:>12.3e}"
            line += f" {(math.nan if r.z_gap is None else r.z_gap):>12.3e} {r.seconds:>9.3f}"
            if r.error:
                line += f"  FAILED: {r.error}"
            lines.append(line)
        return "\n".join(lines)


def z_gap(a: SolutionSurface, b: SolutionSurface, beta: float = 1.0) -> float:
    """delta * sum_j E|z_a - z_b|^beta over levels 0..n-1, with binomial node weights."""
    lat = a.lattice
    if b.lattice.n != lat.n:
        raise ValueError("surfaces live on different lattices")
    total = 0.0
    for j in range(lat.n):
        w = binom.pmf(np.arange(j + 1), j, 0.5)
        total += float(np.sum(w * np.abs(a.z[j] - b.z[j]) ** beta))
    return total * lat.delta


def _row(cfg: RunConfig, n=None, p=None, param=None, reference_surface=None) -> ReportRow:
    try:
        surface, seconds = _solve(cfg, n, p)
    except (NumericalError, EvaluationError) as exc:
        return ReportRow(param, math.nan, 0.0, error=str(exc))
    gap = None if reference_surface is None else z_gap(surface, reference_surface, cfg.beta)
    return ReportRow(param, surface.root, seconds, z_gap=gap)


def run_converge(cfg: RunConfig, sweep: list[float]) -> ConvergenceReport:
    ns = [int(v) for v in sweep]
    for n in ns:
        _validation(cfg, n)
    reference, label = cfg.reference, "configured"
    if reference is None:
        est = oracle_value(cfg)
        if est is not None:
            reference, label = est.value, f"closed form, {est.method}"
    rows = [_row(cfg, n=n, param=n) for n in ns]
    return ConvergenceReport("n", rows, reference, label, cfg.beta)


def run_penalty_sweep(cfg: RunConfig, sweep: list[float]) -> ConvergenceReport:
    if cfg.scheme not in _PENALIZED:
        raise ConfigError(f"penalty-sweep needs a penalized scheme, not {cfg.scheme}")
    for p in sweep:
        if p < 0:
            raise ConfigError("penalization parameters must be nonnegative")
        _validation(cfg, p=p)
    reference, ref_surface, label = cfg.reference, None, "configured"
    if cfg.scheme in _REFERENCE:
        ref_scheme = _REFERENCE[cfg.scheme]
        try:
            ref_surface = solve(cfg.spec, cfg.lattice(), ref_scheme)
            if reference is None:
                reference, label = ref_surface.root, ref_scheme
        except (NumericalError, EvaluationError):
            ref_surface = None
    rows = [_row(cfg, p=p, param=p, reference_surface=ref_surface) for p in sweep]
    return ConvergenceReport("p", rows, reference, label, cfg.beta)


def run_sample_paths(cfg: RunConfig, out: Path, count: int, seed: int):
    _validation(cfg)
    surface, _ = _solve(cfg)
    sample = sample_paths(surface, count, seed)
    write_paths_csv(sample, out / cfg.trajectories)
    if cfg.gnuplot:
        write_paths_gnuplot(sample, out)
    return sample


# ---------------------------------------------------------------------------
# entry point


def _sweep(text: str | None) -> list[float]:
    if not text:
        raise ConfigError("--sweep needs a comma separated list")
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise ConfigError(f"--sweep: not a list of numbers: {text!r}") from None


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="rwbsde",
                                     description="Random-walk lattice solvers for BSDEs.")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_ in [("solve", "solve once and write the surface"),
                        ("converge", "sweep n"),
                        ("penalty-sweep", "sweep the penalization parameter p"),
                        ("sample-paths", "walk sampled paths through a solved surface"),
                        ("oracle", "closed-form value for linear and z^2/2 drivers"),
                        ("validate", "report step-size conditions")]:
        p = sub.add_parser(name, help=help_)
        p.add_argument("--config", required=True, help="INI run file")
        p.add_argument("--out", default=".", help="output directory (default: .)")
        p.add_argument("--strict", action="store_true", help="failing conditions are errors")
        p.add_argument("--seed", type=int, default=None, help="sampling seed")
        p.add_argument("--paths", type=int, default=None, help="number of sampled paths")
        p.add_argument("--sweep", default=None, help="comma separated n or p values")
        p.add_argument("--n-cap", type=int, default=DEFAULT_N_CAP,
                       help=f"largest accepted n (default {DEFAULT_N_CAP})")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config, args.n_cap)
        if args.strict:
            cfg.strict = True
        if args.seed is not None:
            if args.seed < 0 or args.seed >= 2 ** 64:
                raise ConfigError("--seed must be an unsigned 64-bit integer")
            cfg.seed = args.seed
        if args.paths is not None:
            cfg.paths = args.paths
        if cfg.paths < 1:
            raise ConfigError("the number of sampled paths must be positive")
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)

        if args.command == "solve":
            summary = run_solve(cfg, out)
            print(f"{cfg.scheme} n={cfg.n}: root = {summary['root']:.10g}")
        elif args.command == "converge":
            sweep = _sweep(args.sweep) if args.sweep else [cfg.n]
            if any(v != int(v) or v < 1 or v > args.n_cap for v in sweep):
                raise ConfigError(f"--sweep: n values must be integers in [1, {args.n_cap}]")
            rep = run_converge(cfg, sweep)
            rep.write_csv(out / cfg.report)
            print(rep.format_text())
        elif args.command == "penalty-sweep":
            rep = run_penalty_sweep(cfg, _sweep(args.sweep) if args.sweep else [cfg.p])
            rep.write_csv(out / cfg.report)
            print(rep.format_text())
        elif args.command == "sample-paths":
            run_sample_paths(cfg, out, cfg.paths, cfg.seed)
            print(f"wrote {cfg.paths} paths to {out / cfg.trajectories}")
        elif args.command == "oracle":
            est = oracle_value(cfg)
            if est is None:
                raise ConfigError("no closed form for this driver (use preset linear or quadratic-z)")
            print(f"Y0 = {est.value:.10g}  (method {est.method}, standard error {est.standard_error:.3g})")
        elif args.command == "validate":
            report = validate(cfg.spec, cfg.lattice(), cfg.scheme, strict=cfg.strict)
            write_json(report.as_dict(), out / "validation.json")
            for c in report.conditions:
                mark = "-" if not c.applies else c.status
                print(f"{mark:>5}  {c.name}: {c.value:.6g} {c.note}".rstrip())
    except ConfigError as exc:
        print(f"error[config]: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ValidationError as exc:
        print(f"error[validation]: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except (NumericalError, EvaluationError) as exc:
        print(f"error[numerical]: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except BSDEError as exc:
        print(f"error[numerical]: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except ValueError as exc:
        # remaining input errors, e.g. a penalized scheme run without p
        print(f"error[config]: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
