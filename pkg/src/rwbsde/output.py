"""Surface and trajectory files: CSV, JSON summaries and gnuplot scripts."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .constrained import ConstrainedSurface
from .lattice import Lattice
from .problem import PhiReflection
from .reflected import ReflectedSurface
from .schemes import SolutionSurface


def _fmt(v) -> str:
    if v is None or (isinstance(v, float) and math.isnan(v)):
        return ""
    return "%.17g" % v


def _increments(surface: SolutionSurface):
    """Per-level increments of K (reflected) or A (constrained), or None."""
    if isinstance(surface, ReflectedSurface):
        return surface.d
    if isinstance(surface, ConstrainedSurface):
        return surface.a_incr + [None]
    return None


# ---------------------------------------------------------------------------
# surface CSV


def write_surface_csv(surface: SolutionSurface, path) -> Path:
    """One row per node: j,t,k,x,y,z[,d].  z is empty at j = n, and so is d
    except for the terminal jump of reflected schemes."""
    lat = surface.lattice
    incr = _increments(surface)
    header = ["j", "t", "k", "x", "y", "z"] + (["d"] if incr is not None else [])
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for j in range(lat.n + 1):
            t = _fmt(lat.time(j))
            x = lat.coordinates(j)
            y = surface.y[j]
            z = surface.z[j] if j < lat.n else None
            d = incr[j] if incr is not None else None
            for k in range(j + 1):
                row = [j, t, k, _fmt(x[k]), _fmt(y[k]), "" if z is None else _fmt(z[k])]
                if incr is not None:
                    row.append("" if d is None else _fmt(d[k]))
                w.writerow(row)
    return path


@dataclass
class SurfaceTable:
    """Levels read back from a surface CSV."""

    y: list[np.ndarray]
    z: list[np.ndarray]
    d: list[np.ndarray | None] | None

    @property
    def n(self) -> int:
        return len(self.y) - 1

    @property
    def root(self) -> float:
        return float(self.y[0][0])


def read_surface_csv(path) -> SurfaceTable:
    with Path(path).open(newline="") as fh:
        rows = list(csv.DictReader(fh))
    n = max(int(r["j"]) for r in rows)
    y = [np.empty(j + 1) for j in range(n + 1)]
    z = [np.empty(j + 1) for j in range(n)]
    has_d = rows and "d" in rows[0]
    d = [np.full(j + 1, np.nan) for j in range(n + 1)] if has_d else None
    for r in rows:
        j, k = int(r["j"]), int(r["k"])
        y[j][k] = float(r["y"])
        if j < n:
            z[j][k] = float(r["z"])
        if has_d and r["d"] != "":
            d[j][k] = float(r["d"])
    if d is not None:
        d = [None if np.all(np.isnan(level)) else level for level in d]
    return SurfaceTable(y, z, d)


# ---------------------------------------------------------------------------
# sampled trajectories


@dataclass
class PathSample:
    """``count`` walks through a surface; every array has shape (count, n+1).

    ``z`` and (for constrained surfaces) ``d`` are NaN at j = n.  ``cum`` is K
    or A, ``gap`` is y - L or y - phi(z); both are None for plain schemes.
    """

    t: np.ndarray
    signs: np.ndarray
    B: np.ndarray
    y: np.ndarray
    z: np.ndarray
    d: np.ndarray | None
    cum: np.ndarray | None
    gap: np.ndarray | None
    cum_name: str = ""
    gap_name: str = ""


def sample_paths(surface: SolutionSurface, count: int, seed: int = 0) -> PathSample:
    """Draw ``count`` sign sequences from PCG64(seed) and read the surface along them."""
    lat = surface.lattice
    n = lat.n
    rng = np.random.Generator(np.random.PCG64(seed))
    signs = 2 * rng.integers(0, 2, size=(count, n), dtype=np.int64) - 1
    ks = np.concatenate((np.zeros((count, 1), dtype=np.int64), np.cumsum(signs > 0, axis=1)), axis=1)
    js = np.arange(n + 1)
    B = (2 * ks - js) * lat.sqrt_delta
    y = np.stack([surface.y[j][ks[:, j]] for j in range(n + 1)], axis=1)
    z = np.stack([surface.z[j][ks[:, j]] for j in range(n)] + [np.full(count, np.nan)], axis=1)
    t = np.array([lat.time(j) for j in js])

    d = cum = gap = None
    cum_name = gap_name = ""
    if isinstance(surface, ReflectedSurface):
        d = np.stack([surface.d[j][ks[:, j]] for j in range(n + 1)], axis=1)
        cum, cum_name = np.cumsum(d, axis=1), "K"
        L = np.stack([surface.spec.barrier.values(t[j], B[:, j]) * np.ones(count)
                      for j in range(n + 1)], axis=1)
        gap, gap_name = y - L, "y-L"
    elif isinstance(surface, ConstrainedSurface):
        a = np.stack([surface.a_incr[j][ks[:, j]] for j in range(n)], axis=1)
        cum = np.cumsum(a, axis=1)
        cum = np.concatenate((cum, cum[:, -1:]), axis=1)
        d = np.concatenate((a, np.full((count, 1), np.nan)), axis=1)
        cum_name = "A"
        if isinstance(surface.spec.constraint, PhiReflection):
            gap = y - surface.spec.constraint.phi_values(z)
            gap_name = "y-phi"
    return PathSample(t, signs, B, y, z, d, cum, gap, cum_name, gap_name)


def write_paths_csv(sample: PathSample, path) -> Path:
    header = ["path", "j", "t", "B", "y", "z"]
    extra = []
    if sample.d is not None:
        header.append("d")
        extra.append(sample.d)
    if sample.cum is not None:
        header.append(sample.cum_name)
        extra.append(sample.cum)
    if sample.gap is not None:
        header.append(sample.gap_name)
        extra.append(sample.gap)
    path = Path(path)
    count, m = sample.y.shape
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for i in range(count):
            for j in range(m):
                row = [i, j, _fmt(sample.t[j]), _fmt(sample.B[i, j]), _fmt(sample.y[i, j]),
                       _fmt(sample.z[i, j])]
                row += [_fmt(a[i, j]) for a in extra]
                w.writerow(row)
    return path


# ---------------------------------------------------------------------------
# JSON summary


def _clean(obj):
    if isinstance(obj, float) and not math.isfinite(obj):
        return None if math.isnan(obj) else ("inf" if obj > 0 else "-inf")
    if isinstance(obj, dict):
        return {k: _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.generic):
        return _clean(obj.item())
    return obj


def write_json(data: dict, path) -> Path:
    path = Path(path)
    path.write_text(json.dumps(_clean(data), indent=2) + "\n")
    return path


# ---------------------------------------------------------------------------
# gnuplot


def write_surface_gnuplot(surface: SolutionSurface, directory, stem: str = "surface") -> list[Path]:
    """Data blocks (t x y z) per level plus a script drawing u(t,x) = y and v(t,x) = z."""
    directory = Path(directory)
    lat: Lattice = surface.lattice
    data = directory / f"{stem}.dat"
    with data.open("w") as fh:
        fh.write("# t x y z\n")
        for j in range(lat.n + 1):
            x = lat.coordinates(j)
            for k in range(j + 1):
                z = _fmt(surface.z[j][k]) if j < lat.n else "NaN"
                fh.write(f"{_fmt(lat.time(j))} {_fmt(x[k])} {_fmt(surface.y[j][k])} {z}\n")
            fh.write("\n")
    script = directory / f"{stem}.gp"
    script.write_text(
        "set terminal pngcairo size 900,700\n"
        f"set xlabel 't'\nset ylabel 'x'\n"
        f"set output '{stem}_y.png'\n"
        f"set title 'u(t,x) = y ({surface.scheme})'\n"
        f"splot '{data.name}' using 1:2:3 with points pt 7 ps 0.3 notitle\n"
        f"set output '{stem}_z.png'\n"
        f"set title 'v(t,x) = z ({surface.scheme})'\n"
        f"splot '{data.name}' using 1:2:4 with points pt 7 ps 0.3 notitle\n"
    )
    return [data, script]


def write_paths_gnuplot(sample: PathSample, directory, stem: str = "paths") -> list[Path]:
    """One data block per path (t B y [cum gap]) and a script with one panel per quantity."""
    directory = Path(directory)
    data = directory / f"{stem}.dat"
    cols = ["t", "B", "y"]
    if sample.cum is not None:
        cols.append(sample.cum_name)
    if sample.gap is not None:
        cols.append(sample.gap_name)
    with data.open("w") as fh:
        fh.write("# " + " ".join(cols) + "\n")
        for i in range(sample.y.shape[0]):
            for j in range(sample.y.shape[1]):
                vals = [sample.t[j], sample.B[i, j], sample.y[i, j]]
                if sample.cum is not None:
                    vals.append(sample.cum[i, j])
                if sample.gap is not None:
                    vals.append(sample.gap[i, j])
                fh.write(" ".join(_fmt(v) or "NaN" for v in vals) + "\n")
            fh.write("\n\n")
    script = directory / f"{stem}.gp"
    lines = ["set terminal pngcairo size 900,700", "set xlabel 't'"]
    for col, name in enumerate(cols[1:], start=2):
        tag = name.replace("-", "_minus_")
        lines += [f"set output '{stem}_{tag}.png'", f"set ylabel '{name}'",
                  f"plot for [i=0:*] '{data.name}' index i using 1:{col} with lines notitle"]
    script.write_text("\n".join(lines) + "\n")
    return [data, script]
