"""Numeric verifiers for the existence/regularity criteria and the dyadic
sum-vs-sup equivalence.

Uniform "for all balls" conditions are evaluated over finite sampled families
with recorded witnesses; integrals over all of space split into a bounded-grid
quadrature plus an exact analytic far-field term built from the global decay
exponent, which makes the integrability threshold visible in finite
arithmetic.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .dyadic import DyadicCube, cube_of, dyadic_cover
from .errors import NonIntegrableKernel, ValidationError
from .kappa import KappaTable, _interval_integral, sup_functional
from .measure import Ball, GridMeasure, Params, ball_mass, radial_profile, sphere_area
from .potentials import (QuadratureSpec, WolffEvaluator, energy, finiteness_test,
                         wolff)
from .solver import RatioReport, SolveReport

__all__ = [
    "CriteriaReport",
    "make_probe_grid",
    "lr_existence",
    "lr_local_existence",
    "bmo_criteria",
    "bmo_wolff_criterion",
    "capacity_ball_criterion",
    "verify_wolff_inequality",
    "verify_enhanced_wolff",
]


@dataclass(frozen=True)
class CriteriaReport:
    name: str
    verdict: str                      # Holds | Fails | TrivialOnly | Inconclusive
    constants: dict = field(default_factory=dict)
    witnesses: list = field(default_factory=list)
    tolerances: dict = field(default_factory=dict)


def make_probe_grid(box, per_side: int):
    """Midpoint quadrature grid over a box: (points, cell volume)."""
    box = [(float(lo), float(hi)) for lo, hi in box]
    axes = [lo + (np.arange(per_side) + 0.5) * (hi - lo) / per_side for lo, hi in box]
    mesh = np.meshgrid(*axes, indexing="ij")
    pts = np.stack([g.ravel() for g in mesh], axis=1)
    vol = math.prod((hi - lo) / per_side for lo, hi in box)
    return pts, vol


def _mass_tail(prof, prm: Params, cutoff: float) -> float:
    """Exact integral over (cutoff, inf) of [sigma(B(x,rho))/rho^(n-alpha p)]
    ^(1/(p-1)) drho/rho from the atom step function."""
    if prof.breakpoints.size == 0:
        return 0.0
    d = prof.breakpoints
    cum = prof.cumulative
    gamma = prm.gamma
    lo = np.maximum(d, cutoff)
    with np.errstate(divide="ignore"):
        inv = lo ** -gamma
    se = cum ** prm.wolff_exponent
    head = float(np.dot(se[:-1], inv[:-1] - inv[1:])) if d.size > 1 else 0.0
    return (head + float(se[-1] * inv[-1])) / gamma


def _kappa_tail(kt: KappaTable, prm: Params, x, cutoff: float) -> float:
    radii = kt.radius_grid(x)
    kappas = kt.ball_kappas(x)
    return _interval_integral(radii, kappas, kt.global_kappa,
                              prm.kappa_exponent, prm.gamma, cutoff=cutoff)


def lr_existence(m: GridMeasure, prm: Params, r: float, kt: KappaTable,
                 probes=None, probe_volume: float | None = None,
                 far_radius: float | None = None,
                 slope_radii=None) -> CriteriaReport:
    """Global integrability test of the sup functional at exponent r.

    At or below the threshold n(p-1)/(n-alpha p) (or for alpha*p >= n) a
    nontrivial measure admits only the trivial conclusion.  Above it, the
    integral = bounded-grid quadrature + exact far-field power term, finite
    exactly when gamma*r > n.
    """
    if m.is_empty():
        return CriteriaReport("lr-existence", "TrivialOnly",
                              constants={"integral": 0.0, "r": r})
    if not prm.kernel_integrable:
        return CriteriaReport("lr-existence", "TrivialOnly",
                              constants={"r": r, "reason": "alpha*p >= n"})
    thr = prm.lr_threshold
    if r <= thr:
        return CriteriaReport("lr-existence", "TrivialOnly",
                              constants={"r": r, "threshold": thr})
    if probes is None or probe_volume is None:
        raise ValidationError("quadrature probes and their cell volume are required")

    vals = np.array([sup_functional(kt, prm, x) for x in probes])
    interior = float(np.sum(vals ** r)) * probe_volume

    if far_radius is None:
        far_radius = 4.0 * max(m.support_radius(), 1.0)
    gamma_r = prm.gamma * r
    kexp = prm.kappa_exponent
    if gamma_r <= prm.n:
        far = math.inf
    else:
        far = (kt.global_kappa ** (kexp * r) * sphere_area(prm.n)
               * far_radius ** (prm.n - gamma_r) / (gamma_r - prm.n))
    total = interior + far

    constants = {"integral": total, "interior": interior, "far_field": far,
                 "r": r, "threshold": thr, "far_radius": far_radius,
                 "predicted_tail_exponent": gamma_r - prm.n}
    witnesses = []
    if vals.size:
        i = int(np.argmax(vals))
        witnesses.append({"max_integrand_at": [float(v) for v in np.atleast_2d(probes)[i]],
                          "value": float(vals[i])})
    if slope_radii is not None:
        constants["tail_slope"] = _tail_slope(m, prm, r, slope_radii)
    verdict = "Holds" if math.isfinite(total) else "TrivialOnly"
    return CriteriaReport("lr-existence", verdict, constants, witnesses,
                          tolerances={"quadrature": "grid midpoint + analytic far field"})


def _tail_slope(m: GridMeasure, prm: Params, r: float, annulus_radii,
                directions: int = 16, radial: int = 6,
                per_decade: int = 16) -> dict:
    """Log2 slope of annulus integrals of the sup functional under radius
    doubling; the asymptotic slope is n - gamma*r.

    Builds its own embedding-constant entries for the annulus probes; balls
    covering the whole support share the cached global solve, so only the
    thin transition shells cost anything.
    """
    from .kappa import build_kappa_table, log_radius_grid
    n = prm.n
    rng = np.random.default_rng(20250809)
    g = rng.standard_normal((directions, n))
    dirs = g / np.linalg.norm(g, axis=1)[:, None]
    area = sphere_area(n) / directions
    # relative radius grid shared by all probes, so the grid discretization of
    # the transition region cancels exactly in annulus ratios
    rel = log_radius_grid(0.5, 4.0, max(per_decade, 64))
    values = []
    for rad in annulus_radii:
        edges = rad * 2.0 ** (np.arange(radial + 1) / radial)
        mids = np.sqrt(edges[:-1] * edges[1:])
        widths = np.diff(edges)
        tot = 0.0
        for rho, w in zip(mids, widths):
            pts = dirs * rho
            radii = rho * rel
            regions = [Ball(tuple(x), float(rr)) for x in pts for rr in radii]
            kt_loc = build_kappa_table(m, prm, regions)
            s = np.array([sup_functional(kt_loc, prm, x) for x in pts])
            tot += float(np.sum(s ** r)) * area * rho ** (n - 1) * w
        values.append(tot)
    values = np.array(values)
    slopes = np.log2(values[1:] / values[:-1]).tolist()
    return {"annulus_radii": [float(v) for v in annulus_radii],
            "annulus_integrals": values.tolist(),
            "log2_slopes": slopes,
            "predicted": n - prm.gamma * r}


def lr_local_existence(m: GridMeasure, prm: Params, r: float, radius: float,
                       kt: KappaTable, probes=None,
                       probe_volume: float | None = None) -> CriteriaReport:
    """Local integrability on B(0,R): both tail conditions plus the bounded
    sup-functional quadrature with radii capped at R."""
    if m.is_empty():
        return CriteriaReport("lr-local-existence", "Holds",
                              constants={"integral": 0.0, "r": r})
    fin = finiteness_test(m, prm)
    kexp = prm.kappa_exponent
    if fin.verdict != "Finite":
        return CriteriaReport("lr-local-existence", "TrivialOnly",
                              constants={"r": r, "reason": "mass tail diverges"})
    kappa_tail = (kt.global_kappa ** kexp
                  * m.support_radius() ** -prm.gamma / prm.gamma)
    thr = prm.lr_threshold
    constants = {"r": r, "threshold": thr, "mass_tail": fin.tail_value,
                 "kappa_tail": kappa_tail, "alpha_profile": prm.alpha == 1.0}
    if r < thr:
        # below the threshold the tail conditions alone decide
        return CriteriaReport("lr-local-existence", "Holds", constants)
    if probes is None or probe_volume is None:
        raise ValidationError("quadrature probes required at or above the threshold")
    vals = []
    for x in probes:
        radii = kt.radius_grid(x)
        keep = radii < radius
        if not np.any(keep):
            vals.append(0.0)
            continue
        kappas = kt.ball_kappas(x)[keep]
        rr = radii[keep]
        with np.errstate(divide="ignore"):
            vals.append(float(np.max(kappas ** kexp * rr ** -prm.gamma, initial=0.0)))
    vals = np.asarray(vals)
    local = float(np.sum(vals ** r)) * probe_volume
    constants["local_integral"] = local
    verdict = "Holds" if math.isfinite(local) else "Inconclusive"
    return CriteriaReport("lr-local-existence", verdict, constants)


def _ball_sup(sample, values, denom):
    i = int(np.argmax(values / denom))
    return float(values[i] / denom[i]), sample[i]


def bmo_criteria(m: GridMeasure, prm: Params, kt: KappaTable, sample) -> CriteriaReport:
    """Uniform ball bounds: the three constants built from the embedding
    constant, its radial tail, and the mass radial tail.

    Exponent n-alpha*p generalizes the n-p of the alpha=1 profile; alpha != 1
    is flagged in the report.
    """
    if m.is_empty() or not sample:
        return CriteriaReport("bmo-criteria", "Holds",
                              constants={"C1": 0.0, "C2": 0.0, "C3": 0.0})
    npow = prm.n - prm.alpha * prm.p
    denom = np.array([b.radius ** npow for b in sample])
    kappas = np.array([kt.entries[b.region_id].kappa_est for b in sample])
    masses = np.array([ball_mass(m, b.center, b.radius) for b in sample])
    ktails = np.array([_kappa_tail(kt, prm, b.center, b.radius) for b in sample])
    stails = np.array([_mass_tail(radial_profile(m, b.center), prm, b.radius)
                       for b in sample])

    c1_vals = kappas ** prm.kappa_power
    c2_vals = masses * ktails ** prm.q
    c3_vals = masses * stails ** prm.kappa_power
    c1, w1 = _ball_sup(sample, c1_vals, denom)
    c2, w2 = _ball_sup(sample, c2_vals, denom)
    c3, w3 = _ball_sup(sample, c3_vals, denom)
    finite = all(math.isfinite(c) for c in (c1, c2, c3))
    return CriteriaReport(
        "bmo-criteria", "Holds" if finite else "Fails",
        constants={"C1": c1, "C2": c2, "C3": c3,
                   "alpha_is_one": prm.alpha == 1.0,
                   "C3_mass_scaling_exponent": prm.solution_exponent},
        witnesses=[{"C1_ball": w1.region_id}, {"C2_ball": w2.region_id},
                   {"C3_ball": w3.region_id}])


def bmo_wolff_criterion(m: GridMeasure, prm: Params, sample,
                        report: SolveReport | None = None) -> CriteriaReport:
    """Uniform bound sup over balls of
    integral over B of (potential of sigma)^(q(p-1)/(p-1-q)) dsigma / R^(n-alpha p)."""
    if m.is_empty() or not sample:
        return CriteriaReport("bmo-wolff", "Holds", constants={"C": 0.0})
    ev = WolffEvaluator(m, m.atom_positions)
    wvals = ev.evaluate(prm)
    pw = wvals ** prm.kappa_power
    npow = prm.n - prm.alpha * prm.p
    denom = np.array([b.radius ** npow for b in sample])
    vals = []
    for b in sample:
        inside = b.contains_points(m.atom_positions)
        vals.append(float(np.dot(m.atom_weights[inside], pw[inside])))
    vals = np.asarray(vals)
    c, wit = _ball_sup(sample, vals, denom)
    constants = {"C": c}
    if report is not None:
        constants["solver_status"] = report.status
    return CriteriaReport("bmo-wolff", "Holds" if math.isfinite(c) else "Fails",
                          constants, witnesses=[{"ball": wit.region_id}])


def capacity_ball_criterion(m: GridMeasure, prm: Params, sample, mode: str,
                            refined: GridMeasure | None = None,
                            growth_limit: float = 2.0) -> CriteriaReport:
    """Ball-capacity surrogate cap(B(x,R)) = R^(n-p), constant normalized to 1.

    mode "cap-p": sup of sigma(B)/R^(n-p); mode "class1": sup of
    integral over B of (potential)^(q(p-1)/(p-1-q)) dsigma / R^(n-p).
    With ``refined`` given, growth of the constant beyond ``growth_limit``
    under grid refinement reports Fails (concentration detector).
    """
    if prm.p >= prm.n:
        raise ValidationError("ball capacity surrogate degenerates for p >= n")
    if mode not in ("cap-p", "class1"):
        raise ValidationError(f"unknown capacity mode {mode!r}")
    if m.is_empty() or not sample:
        return CriteriaReport(f"capacity-{mode}", "Holds", constants={"C": 0.0})

    def constant(measure):
        denom = np.array([b.radius ** (prm.n - prm.p) for b in sample])
        if mode == "cap-p":
            vals = np.array([ball_mass(measure, b.center, b.radius) for b in sample])
        else:
            ev = WolffEvaluator(measure, measure.atom_positions)
            pw = ev.evaluate(prm) ** prm.kappa_power
            vals = np.array([
                float(np.dot(measure.atom_weights[b.contains_points(measure.atom_positions)],
                             pw[b.contains_points(measure.atom_positions)]))
                for b in sample])
        return _ball_sup(sample, vals, denom)

    c, wit = constant(m)
    constants = {"C": c}
    verdict = "Holds" if math.isfinite(c) else "Fails"
    if refined is not None:
        c_fine, _ = constant(refined)
        growth = c_fine / c if c > 0 else math.inf
        constants.update({"C_refined": c_fine, "growth": growth,
                          "growth_limit": growth_limit})
        if growth > growth_limit:
            verdict = "Fails"
    return CriteriaReport(f"capacity-{mode}", verdict, constants,
                          witnesses=[{"ball": wit.region_id}])


def verify_wolff_inequality(m: GridMeasure, prm: Params,
                            quad: QuadratureSpec) -> RatioReport:
    """Energy vs the measure pairings of the radial and composed potentials.

    Exchanging the order of integration makes the energy equal the composed
    pairing; the radial pairing bounds it both ways up to dimensional
    constants.  Reports E, both pairings, and their ratios.
    """
    if m.is_empty():
        return RatioReport("wolff-inequality", 0.0, 0.0,
                           constants={"energy": 0.0, "pair_radial": 0.0,
                                      "pair_composed": 0.0})
    rep = energy(m, prm, quad)
    keep = m.atom_weights > 0
    wvals = WolffEvaluator(m, m.atom_positions[keep]).evaluate(prm)
    pair_radial = float(np.dot(m.atom_weights[keep], wvals))
    fub_gap = abs(rep.value - rep.fubini_value)
    fub_err = 3.0 * math.hypot(rep.stderr, rep.fubini_stderr)
    constants = {
        "energy": rep.value, "energy_stderr": rep.stderr,
        "pair_composed": rep.fubini_value, "pair_composed_stderr": rep.fubini_stderr,
        "pair_radial": pair_radial,
        "energy_over_radial": rep.value / pair_radial,
        "composed_over_radial": rep.fubini_value / pair_radial,
        "fubini_gap": fub_gap, "fubini_3se": fub_err,
        "fubini_within_3se": fub_gap <= fub_err,
    }
    lo = min(rep.value, rep.fubini_value) / pair_radial
    hi = max(rep.value, rep.fubini_value) / pair_radial
    return RatioReport("wolff-inequality", lo, hi, constants)


def _enhanced_values(kt: KappaTable, prm: Params, j_min: int, j_max: int):
    """Per-finest-cube (sum, sup) of the intrinsic dyadic terms over the root
    window cube [0, 2^-j_min)^n, plus the exact coarse continuation."""
    n = prm.n
    gamma = prm.gamma
    kexp = prm.kappa_exponent
    root = DyadicCube(j_min, (0,) * n)
    with np.errstate(invalid="ignore"):
        coarse_tail_sum = float(np.power(kt.global_kappa, kexp)) \
            * 2.0 ** ((j_min - 1) * gamma) / (1.0 - 2.0 ** -gamma)
        coarse_tail_sup = float(np.power(kt.global_kappa, kexp)) \
            * 2.0 ** ((j_min - 1) * gamma)

    def term(cube):
        k = kt.cube_kappa(cube)
        if k == 0.0:
            return 0.0
        with np.errstate(invalid="ignore"):
            return float(np.power(k, prm.kappa_power)
                         / cube.volume ** (1.0 - prm.alpha * prm.p / n)) ** prm.wolff_exponent \
                if k > 0 else math.nan

    def walk(cube, terms):
        t = terms + [term(cube)]
        if cube.level == j_max:
            yield cube, t
        else:
            for child in cube.children():
                yield from walk(child, t)

    cubes, sums, sups = [], [], []
    for cube, terms in walk(root, []):
        arr = np.array(terms)
        cubes.append(cube)
        sums.append(float(np.sum(arr)) + coarse_tail_sum)
        sups.append(float(np.max(np.append(arr, coarse_tail_sup))))
    return cubes, np.array(sums), np.array(sups), coarse_tail_sum, coarse_tail_sup


def verify_enhanced_wolff(m: GridMeasure, prm: Params, r: float, kt: KappaTable,
                          root: DyadicCube | None = None) -> RatioReport:
    """Compare the r-integral of the intrinsic dyadic sum against the
    integral of the per-cube sup (sum side always dominates pointwise).

    Global variant integrates over the window cube [0,2^-j_min)^n plus exact
    geometric shells; rooted variant restricts to cubes inside ``root``.
    Requires supp(sigma) inside [0,1)^n-type positive-orthant window.
    """
    if not prm.kernel_integrable:
        raise NonIntegrableKernel("enhanced comparison needs alpha*p < n")
    thr = prm.lr_threshold
    if r <= thr:
        raise ValidationError(f"r={r} at or below threshold {thr}: TrivialOnly regime")
    if m.is_empty():
        return RatioReport("enhanced-dyadic", 1.0, 1.0,
                           constants={"sum_integral": 0.0, "sup_integral": 0.0,
                                      "ratio": 1.0, "r": r, "direction_holds": True})
    j_min, j_max = kt.dyadic_window()
    n = prm.n
    gamma = prm.gamma

    if root is not None:
        # localized: sums over cubes inside the root only, no tails
        def term(cube):
            k = kt.cube_kappa(cube)
            if k == 0.0:
                return 0.0
            with np.errstate(invalid="ignore"):
                return float(np.power(np.power(k, prm.kappa_power)
                                      / cube.volume ** (1.0 - prm.alpha * prm.p / n),
                                      prm.wolff_exponent))

        def walk(cube, terms):
            t = terms + [term(cube)]
            if cube.level == j_max:
                yield t
            else:
                for child in cube.children():
                    yield from walk(child, t)

        vol = 2.0 ** (-j_max * n)
        a_val = 0.0
        b_val = 0.0
        for terms in walk(root, []):
            arr = np.array(terms)
            a_val += float(np.sum(arr)) ** r * vol
            b_val += float(np.max(arr)) ** r * vol
        name = f"enhanced-dyadic-local-{root.region_id}"
    else:
        lo, hi = m.bounding_box()
        window = DyadicCube(j_min, (0,) * n)
        if m.num_atoms and not window.contains_box(lo, hi):
            raise ValidationError(
                "support must sit inside the positive-orthant window cube")
        _, sums, sups, tail_sum, tail_sup = _enhanced_values(kt, prm, j_min, j_max)
        vol = 2.0 ** (-j_max * n)
        a_val = float(np.sum(sums ** r)) * vol
        b_val = float(np.sum(sups ** r)) * vol
        # exact geometric shells coarser than the window: on the shell at level
        # j the sum equals kglob^kexp 2^(j gamma)/(1-2^-gamma), the sup its
        # numerator, over volume 2^(-jn)(1-2^-n)
        gr = gamma * r
        if gr <= n:
            a_val = math.inf
            b_val = math.inf
        else:
            kexp = prm.kappa_exponent
            with np.errstate(invalid="ignore"):
                base = float(np.power(kt.global_kappa, kexp))
            shell_geo = (1.0 - 2.0 ** -n) * 2.0 ** ((j_min - 1) * (gr - n)) \
                / (1.0 - 2.0 ** -(gr - n))
            a_val += (base / (1.0 - 2.0 ** -gamma)) ** r * shell_geo
            b_val += base ** r * shell_geo
        name = "enhanced-dyadic"

    ratio = a_val / b_val if b_val > 0 else math.inf
    direction_ok = bool(b_val <= a_val * (1.0 + 1e-12))
    return RatioReport(name, min(1.0, ratio), max(1.0, ratio),
                       constants={"sum_integral": a_val, "sup_integral": b_val,
                                  "ratio": ratio, "r": r,
                                  "direction_holds": direction_ok})
