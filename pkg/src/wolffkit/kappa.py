"""Localized embedding constants and the intrinsic radial potential.

kappa(E) is the least constant bounding the L^q(sigma|_E) norm of the radial
potential of a test measure by its total mass to the 1/(p-1).  Two computable
surrogates are provided:

* ``kappa_est``: solve the sublinear fixed point for sigma restricted to E and
  return [integral of u_E^q dsigma]^((p-1-q)/(q(p-1))).  This never exceeds
  the true constant and is equivalent to it up to a factor depending only on
  the exponents.
* ``kappa_lower_dirac``: certified lower bound from point test measures, whose
  potential has the closed form |x-y|^(-gamma)/gamma.

Tables of these constants over ball or cube families feed the intrinsic
potential (radial integral built from kappa instead of ball mass), its sup
functional, and the dyadic verifiers.
"""

from __future__ import annotations

import csv
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .dyadic import DyadicCube, parse_cube_id
from .errors import IncompleteTable, NonIntegrableKernel, ValidationError
from .measure import Ball, GridMeasure, Params, radial_profile, restrict
from .solver import solve_minimal

__all__ = [
    "KappaEntry",
    "KappaTable",
    "kappa_est",
    "kappa_lower_dirac",
    "ball_grid",
    "log_radius_grid",
    "build_kappa_table",
    "intrinsic_potential",
    "sup_functional",
    "low_k_domination",
    "save_kappa_table",
    "load_kappa_table",
]


@dataclass(frozen=True)
class KappaEntry:
    kappa_est: float
    kappa_lb: float
    iterations: int
    residual: float


def _center_key(center) -> tuple:
    return tuple(float(v) for v in np.asarray(center, dtype=float).ravel())


@dataclass
class KappaTable:
    """Embedding constants keyed by region id (ball ``x;rho`` or cube ``j:k``)."""

    params: Params
    entries: dict = field(default_factory=dict)
    global_kappa: float = 0.0
    support_bbox: tuple = ((0.0,), (0.0,))
    _ball_index: dict = field(default_factory=dict)
    _cube_levels: tuple = ()

    def add_ball(self, ball: Ball, entry: KappaEntry):
        self.entries[ball.region_id] = entry
        key = _center_key(ball.center)
        self._ball_index.setdefault(key, [])
        self._ball_index[key].append((float(ball.radius), ball.region_id))
        self._ball_index[key].sort()

    def add_cube(self, cube: DyadicCube, entry: KappaEntry):
        self.entries[cube.region_id] = entry
        lv = self._cube_levels
        self._cube_levels = (min(lv + (cube.level,)), max(lv + (cube.level,))) \
            if lv else (cube.level, cube.level)

    def centers(self):
        return [np.array(k) for k in self._ball_index]

    def radius_grid(self, center) -> np.ndarray:
        key = _center_key(center)
        if key not in self._ball_index:
            raise IncompleteTable(f"no ball entries centered at {key}")
        return np.array([r for r, _ in self._ball_index[key]])

    def ball_kappas(self, center) -> np.ndarray:
        key = _center_key(center)
        if key not in self._ball_index:
            raise IncompleteTable(f"no ball entries centered at {key}")
        return np.array([self.entries[rid].kappa_est for _, rid in self._ball_index[key]])

    def ball_lower_bounds(self, center) -> np.ndarray:
        key = _center_key(center)
        return np.array([self.entries[rid].kappa_lb for _, rid in self._ball_index[key]])

    def dyadic_window(self) -> tuple:
        if not self._cube_levels:
            raise IncompleteTable("table holds no cube entries")
        return self._cube_levels

    def cube_kappa(self, cube: DyadicCube) -> float:
        j_min, j_max = self.dyadic_window()
        if not j_min <= cube.level <= j_max:
            raise IncompleteTable(f"cube level {cube.level} outside window [{j_min},{j_max}]")
        entry = self.entries.get(cube.region_id)
        # positive-mass cubes are always enumerated at build time, so a missing
        # id inside the window is a zero-mass cube
        return entry.kappa_est if entry is not None else 0.0


def kappa_est(m: GridMeasure, prm: Params, region, tol: float = 1e-8,
              max_iters: int = 500) -> tuple[float, KappaEntry]:
    """Embedding-constant estimate for the restriction of m to ``region``."""
    sub = restrict(m, region)
    if sub.is_empty():
        return 0.0, KappaEntry(0.0, 0.0, 0, 0.0)
    report = solve_minimal(sub, prm, tol=tol, max_iters=max_iters)
    if report.status != "Converged":
        raise ValidationError(f"embedding solve did not converge: {report.status}")
    pairing = math.fsum((sub.cell_masses * report.u.values ** prm.q).tolist())
    est = pairing ** ((prm.p - 1.0 - prm.q) / (prm.q * (prm.p - 1.0)))
    return est, KappaEntry(est, 0.0, report.iterations, report.residual)


def kappa_lower_dirac(m: GridMeasure, prm: Params, region, probes) -> float:
    """Certified lower bound from point test measures at the probe points.

    The radial potential of a unit point mass at y is |x-y|^(-gamma)/gamma;
    the bound is max over probes of [integral over E of that to the q] ^ (1/q).
    """
    if not prm.kernel_integrable:
        raise NonIntegrableKernel("lower bound needs alpha*p < n")
    sub = restrict(m, region)
    if sub.is_empty():
        return 0.0
    probes = np.atleast_2d(np.asarray(probes, dtype=float))
    gamma = prm.gamma
    best = 0.0
    for y in probes:
        d = np.linalg.norm(sub.atom_positions - y, axis=1)
        with np.errstate(divide="ignore"):
            vals = (d ** (-gamma) / gamma) ** prm.q
        total = float(np.dot(sub.atom_weights, vals))
        best = max(best, total ** (1.0 / prm.q))
    return best


def log_radius_grid(r_min: float, r_max: float, per_decade: int = 16) -> np.ndarray:
    """Log-spaced radii covering [r_min, r_max] with per_decade points per decade."""
    if not (0 < r_min < r_max):
        raise ValidationError("radius grid needs 0 < r_min < r_max")
    count = int(math.ceil(per_decade * math.log10(r_max / r_min))) + 1
    return r_min * 10.0 ** (np.arange(count) / per_decade)


def ball_grid(centers, radii):
    """Cartesian ball family: every center paired with every radius."""
    centers = np.atleast_2d(np.asarray(centers, dtype=float))
    return [Ball(tuple(c), float(r)) for c in centers for r in np.asarray(radii).ravel()]


def build_kappa_table(m: GridMeasure, prm: Params, regions, lb_probes=None,
                      tol: float = 1e-8, threads: int = 1,
                      enforce_monotone: bool = True) -> KappaTable:
    """Estimate constants for every region; deterministic and cacheable.

    Regions covering the whole support share a single global solve.  Ball
    families are grouped by center; per-center sequences are checked for
    monotonicity in the radius (solver noise up to 1e-9 relative is clipped,
    larger violations raise).
    """
    lo, hi = m.bounding_box()
    table = KappaTable(params=prm, support_bbox=(tuple(lo), tuple(hi)))
    glob, glob_entry = kappa_est(m, prm, Ball(tuple((lo + hi) / 2.0),
                                              float(np.linalg.norm(hi - lo)) + 1.0),
                                 tol=tol)
    table.global_kappa = glob

    def covers_support(region) -> bool:
        if m.num_atoms == 0:
            return True
        return bool(np.all(region.contains_points(m.atom_positions)))

    def work(region):
        if covers_support(region):
            est, entry = glob, glob_entry
        else:
            est, entry = kappa_est(m, prm, region, tol=tol)
        lb = 0.0
        if lb_probes is not None:
            lb = kappa_lower_dirac(m, prm, region, lb_probes)
        return region, KappaEntry(est, lb, entry.iterations, entry.residual)

    if threads > 1 and len(regions) > 1:
        with ThreadPoolExecutor(max_workers=threads) as ex:
            results = list(ex.map(work, regions))
    else:
        results = [work(r) for r in regions]

    for region, entry in results:
        if isinstance(region, Ball):
            table.add_ball(region, entry)
        else:
            table.add_cube(region, entry)

    if enforce_monotone:
        for key, items in table._ball_index.items():
            vals = np.array([table.entries[rid].kappa_est for _, rid in items])
            drops = vals[1:] < vals[:-1] * (1.0 - 1e-9)
            if np.any(drops):
                raise ValidationError(
                    f"embedding constants not monotone in radius at center {key}")
            fixed = np.maximum.accumulate(vals)
            for (r, rid), v in zip(items, fixed):
                e = table.entries[rid]
                if v != e.kappa_est:
                    table.entries[rid] = KappaEntry(float(v), e.kappa_lb,
                                                    e.iterations, e.residual)
    return table


def _kappa_radial_terms(kt: KappaTable, prm: Params, x, cutoff: float = 0.0):
    """Per-interval integrand data for the intrinsic radial integral at x.

    Returns (radii, kappa values, global kappa); kappa is piecewise constant
    from the left endpoint of each radius interval, zero below the first
    radius, and equal to the global constant beyond the last one.
    """
    radii = kt.radius_grid(x)
    kappas = kt.ball_kappas(x)
    return radii, kappas, kt.global_kappa


def _interval_integral(radii, values, vglob, kexp, gamma, cutoff=0.0):
    """Integral over (cutoff, inf) of v(rho)^kexp * rho^(-gamma-1) drho for a
    left-constant step function v with final value vglob beyond the grid."""
    radii = np.asarray(radii, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        vals = np.asarray(values, dtype=float) ** kexp
        lo = np.maximum(radii[:-1], cutoff)
        hi = np.maximum(radii[1:], cutoff)
        head = float(np.dot(vals[:-1], lo ** -gamma - hi ** -gamma)) if radii.size > 1 else 0.0
        tail_edge = max(float(radii[-1]), cutoff)
        tail = float(np.power(vglob, kexp)) * tail_edge ** -gamma
    return (head + tail) / gamma


def intrinsic_potential(kt: KappaTable, prm: Params, x) -> float:
    """Radial integral of [kappa(B(x,rho))^(q(p-1)/(p-1-q)) / rho^(n-alpha p)]
    ^(1/(p-1)) drho/rho with table kappas (left endpoints) and the exact
    global-constant tail."""
    if not prm.kernel_integrable:
        if kt.global_kappa == 0.0:
            return 0.0
        return math.inf
    radii, kappas, kglob = _kappa_radial_terms(kt, prm, x)
    return _interval_integral(radii, kappas, kglob, prm.kappa_exponent, prm.gamma)


def sup_functional(kt: KappaTable, prm: Params, x) -> float:
    """Sup over the radius grid and the analytic tail of the intrinsic integrand."""
    if not prm.kernel_integrable:
        return math.inf if kt.global_kappa > 0 else 0.0
    radii, kappas, kglob = _kappa_radial_terms(kt, prm, x)
    kexp = prm.kappa_exponent
    gamma = prm.gamma
    with np.errstate(invalid="ignore"):
        grid_sup = float(np.max(kappas ** kexp * radii ** -gamma, initial=0.0))
        tail_sup = float(np.power(kglob, kexp)) * float(radii[-1]) ** -gamma
    return float(np.max([grid_sup, tail_sup]))


def low_k_domination(kt: KappaTable, m: GridMeasure, prm: Params, x) -> dict:
    """Certified pointwise domination of the mass integrand by the intrinsic one.

    For each table radius: sigma(B)^(1/(p-1-q)) rho^(-(n-alpha p)/(p-1-q)) <=
    C * kappa_lb(B)^(q/(p-1-q)) rho^(-gamma) with C = gamma^(q/(p-1-q)), because
    a point test mass at the center certifies kappa(B) >= sigma(B)^(1/q)
    rho^(-gamma)/gamma.  Returns both integrand arrays and the constant.
    """
    radii = kt.radius_grid(x)
    lbs = kt.ball_lower_bounds(x)
    prof = radial_profile(m, x)
    sig = np.array([prof.mass_at(r) for r in radii])
    gamma = prm.gamma
    kexp = prm.kappa_exponent
    c = gamma ** kexp
    lhs = sig ** (1.0 / (prm.p - 1.0 - prm.q)) \
        * radii ** (-(prm.n - prm.alpha * prm.p) / (prm.p - 1.0 - prm.q))
    rhs = c * lbs ** kexp * radii ** -gamma
    return {"radii": radii, "mass_integrand": lhs, "kappa_integrand": rhs,
            "constant": c, "holds": bool(np.all(lhs <= rhs * (1.0 + 1e-9)))}


def save_kappa_table(kt: KappaTable, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["region_id", "kappa_est", "kappa_lb", "iters", "residual"])
        w.writerow(["__global__", repr(kt.global_kappa), "0.0", 0, 0.0])
        lo, hi = kt.support_bbox
        w.writerow(["__bbox__"] + [repr(float(v)) for v in (*lo, *hi)])
        for rid in sorted(kt.entries):
            e = kt.entries[rid]
            w.writerow([rid, repr(e.kappa_est), repr(e.kappa_lb), e.iterations,
                        repr(e.residual)])


def load_kappa_table(path, prm: Params) -> KappaTable:
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows or rows[0][0] != "region_id":
        raise ValidationError("kappa table file must start with its header row")
    kt = KappaTable(params=prm)
    for row in rows[1:]:
        if not row:
            continue
        rid = row[0]
        if rid == "__global__":
            kt.global_kappa = float(row[1])
            continue
        if rid == "__bbox__":
            vals = [float(v) for v in row[1:]]
            half = len(vals) // 2
            kt.support_bbox = (tuple(vals[:half]), tuple(vals[half:]))
            continue
        entry = KappaEntry(float(row[1]), float(row[2]), int(row[3]), float(row[4]))
        if ":" in rid and ";" not in rid:
            kt.add_cube(parse_cube_id(rid), entry)
        else:
            coords, _, radius = rid.partition(";")
            center = tuple(float(v) for v in coords.split(","))
            kt.add_ball(Ball(center, float(radius)), entry)
    return kt
