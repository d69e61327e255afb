"""Radial nonlinear potentials from atom distance profiles.

The radial integral of [sigma(B(x,rho))/rho^(n-alpha*p)]^(1/(p-1)) drho/rho is
evaluated in three exact pieces:

* near field, rho in (0, r0): the discrete atoms are replaced by the local
  cell density d(x), giving the closed form
  (v_n d)^(1/(p-1)) * (p-1)/(alpha p) * r0^(alpha p/(p-1));
* mid field, rho in [r0, d_M]: the ball mass is an exact step function of the
  sorted atom distances, and each power-law interval integrates in closed form;
* tail, rho > d_M: total mass times d_M^(-gamma)/gamma, exact for compactly
  supported measures.

Batch evaluation over many points keeps one sorted distance table per point
block and re-weights it per call, which is what the fixed-point solver and the
embedding-constant estimators iterate on.  Space integrals (energy and the
composed potential) use importance sampling with power-law bumps at the cells,
matched to the kernel singularities so the weights have finite variance.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .errors import Divergent, NonIntegrableKernel, ValidationError
from .measure import (GridMeasure, Params, radial_profile, sphere_area,
                      unit_ball_volume)

__all__ = [
    "Field",
    "FinitenessReport",
    "QuadratureSpec",
    "PotentialEstimate",
    "EnergyReport",
    "WolffEvaluator",
    "wolff",
    "wolff_field",
    "riesz",
    "riesz_smooth",
    "finiteness_test",
    "havin_mazya",
    "energy",
]


@dataclass(frozen=True)
class Field:
    """Values attached to evaluation points (np.inf marks divergence)."""

    points: np.ndarray
    values: np.ndarray
    label: str = ""
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        pts = np.atleast_2d(np.asarray(self.points, dtype=float))
        vals = np.asarray(self.values, dtype=float).ravel()
        if pts.shape[0] != vals.size:
            raise ValidationError("points and values disagree in length")
        if np.any(np.isnan(vals)) or np.any(vals < 0):
            raise ValidationError("field values must be nonnegative (inf allowed)")
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "values", vals)


def _require_integrable(prm: Params):
    if not prm.kernel_integrable:
        raise NonIntegrableKernel(
            f"alpha*p = {prm.alpha * prm.p} >= n = {prm.n}: radial kernel non-integrable")


def _near_field_value(density, r0, prm: Params):
    """Closed-form near-field contribution of a constant density below r0."""
    vn = unit_ball_volume(prm.n)
    ap = prm.alpha * prm.p
    return (vn * density) ** prm.wolff_exponent * (prm.p - 1.0) / ap \
        * r0 ** (ap / (prm.p - 1.0))


def _step_integral(dists: np.ndarray, weights: np.ndarray, expo: float,
                   gamma: float, cutoff: float) -> float:
    """Exact integral of S(rho)^expo * rho^(-gamma-1) drho over (cutoff, inf),
    where S is the cumulative step function of the weighted sorted distances."""
    if dists.size == 0:
        return 0.0
    cum = np.cumsum(weights)
    a = np.maximum(dists, cutoff)
    with np.errstate(divide="ignore"):
        ainv = a ** (-gamma)
    se = cum ** expo
    head = float(np.dot(se[:-1], ainv[:-1] - ainv[1:])) if dists.size > 1 else 0.0
    return (head + float(se[-1] * ainv[-1])) / gamma


def wolff(m: GridMeasure, prm: Params, x, near_field: bool = True) -> float:
    """Radial nonlinear potential at a single point.

    ``near_field=False`` integrates the raw atomic step function from 0, which
    reproduces closed forms for purely atomic measures (and returns inf when x
    sits on an atom).
    """
    _require_integrable(prm)
    if m.is_empty():
        return 0.0
    keep = m.atom_weights > 0
    d = np.linalg.norm(m.atom_positions[keep] - np.asarray(x, dtype=float), axis=1)
    order = np.argsort(d, kind="stable")
    r0 = m.near_radius(x) if near_field else 0.0
    val = _step_integral(d[order], m.atom_weights[keep][order],
                         prm.wolff_exponent, prm.gamma, r0)
    if near_field:
        dens = m.local_density(x)
        if dens > 0.0 and r0 > 0.0:
            val += _near_field_value(dens, r0, prm)
    return val


class WolffEvaluator:
    """Precomputed sorted-distance tables for repeated radial-potential sums.

    Distances from each evaluation point to every atom are sorted once; each
    ``evaluate`` call re-weights the atoms by a per-cell scale (e.g. u^q for
    the fixed-point map) and runs the closed-form interval sums.  Results are
    independent of the thread count: work is split over fixed-size point
    blocks that are always merged in index order.
    """

    def __init__(self, m: GridMeasure, points, chunk: int = 256):
        self.m = m
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        if pts.shape[0] and pts.shape[1] != m.dim:
            raise ValidationError("evaluation points do not match measure dimension")
        self.points = pts
        self.chunk = max(1, int(chunk))
        cell_idx = np.array([m.cell_of_point(p) for p in pts], dtype=np.int64) \
            if pts.shape[0] else np.zeros(0, dtype=np.int64)
        inside = cell_idx >= 0
        self.point_cell = cell_idx
        self.r0 = np.where(inside, m.side * math.sqrt(m.dim), 0.0)
        self._blocks = []
        if m.num_atoms == 0 or pts.shape[0] == 0:
            return
        for start in range(0, pts.shape[0], self.chunk):
            block = slice(start, min(start + self.chunk, pts.shape[0]))
            diff = pts[block, None, :] - m.atom_positions[None, :, :]
            dist = np.sqrt(np.einsum("ijk,ijk->ij", diff, diff))
            order = np.argsort(dist, axis=1, kind="stable")
            dist_sorted = np.take_along_axis(dist, order, axis=1)
            self._blocks.append((block, dist_sorted, order))

    def evaluate(self, prm: Params, cell_scale=None, near_field: bool = True,
                 threads: int = 1) -> np.ndarray:
        _require_integrable(prm)
        npts = self.points.shape[0]
        out = np.zeros(npts)
        if cell_scale is None:
            cell_scale = np.ones(self.m.num_cells)
        else:
            cell_scale = np.asarray(cell_scale, dtype=float).ravel()
            if cell_scale.size != self.m.num_cells:
                raise ValidationError("cell scale length mismatch")
            if np.any(cell_scale < 0) or np.any(np.isnan(cell_scale)):
                raise ValidationError("cell scale must be nonnegative")
        if self.m.num_atoms == 0 or npts == 0:
            return out
        gamma = prm.gamma
        expo = prm.wolff_exponent
        atom_w = self.m.atom_weights * cell_scale[self.m.atom_cell]
        clamp = self.r0 if near_field else np.zeros(npts)

        def work(i):
            block, dist_sorted, order = self._blocks[i]
            w_sorted = atom_w[order]
            cum = np.cumsum(w_sorted, axis=1)
            a = np.maximum(dist_sorted, clamp[block][:, None])
            with np.errstate(divide="ignore"):
                ainv = a ** (-gamma)
            se = cum ** expo
            if dist_sorted.shape[1] > 1:
                head = np.einsum("ij,ij->i", se[:, :-1], ainv[:, :-1] - ainv[:, 1:])
            else:
                head = np.zeros(dist_sorted.shape[0])
            return block, (head + se[:, -1] * ainv[:, -1]) / gamma

        if threads > 1 and len(self._blocks) > 1:
            with ThreadPoolExecutor(max_workers=threads) as ex:
                results = list(ex.map(work, range(len(self._blocks))))
        else:
            results = [work(i) for i in range(len(self._blocks))]
        for block, vals in results:
            out[block] = vals

        if near_field:
            inside = self.point_cell >= 0
            dens = np.zeros(npts)
            idx = np.maximum(self.point_cell, 0)
            dens[inside] = (self.m.cell_masses[idx][inside]
                            * cell_scale[idx][inside]) / self.m.cell_volume
            active = dens > 0
            if np.any(active):
                out[active] += _near_field_value(dens[active], self.r0[active], prm)
        if np.any(np.isnan(out)):
            raise ValidationError("radial evaluation produced NaN")
        return out


def wolff_field(m: GridMeasure, prm: Params, points, near_field: bool = True,
                threads: int = 1, chunk: int = 256, label: str = "wolff") -> Field:
    """Batch radial potential; per-point divergences become inf sentinels."""
    ev = WolffEvaluator(m, points, chunk=chunk)
    vals = ev.evaluate(prm, near_field=near_field, threads=threads)
    n_bad = int(np.sum(~np.isfinite(vals)))
    meta = {"divergent_points": n_bad} if n_bad else {}
    return Field(ev.points, vals, label=label, meta=meta)


def riesz(m: GridMeasure, beta: float, x) -> float:
    """Linear radial potential: sum of weight * |x-y|^-(n-beta) over atoms.

    Returns inf when x coincides with an atom carrying positive weight.
    """
    if not 0 < beta < m.dim:
        raise ValidationError(f"order must satisfy 0 < beta < n, got beta={beta}, n={m.dim}")
    if m.is_empty():
        return 0.0
    keep = m.atom_weights > 0
    d = np.linalg.norm(m.atom_positions[keep] - np.asarray(x, dtype=float), axis=1)
    with np.errstate(divide="ignore"):
        kern = d ** (beta - m.dim)
    return float(np.dot(m.atom_weights[keep], kern))


def riesz_smooth(m: GridMeasure, beta: float, points) -> np.ndarray:
    """Mollified linear potential, bounded everywhere.

    Atoms beyond the clamp radius r0 (half a cell diameter) contribute exactly;
    the mass found within r0 is spread self-similarly over the clamp ball, so
    the modeled ball-mass function is continuous at r0 and carries the true
    local mass.  Used by the sampled space integrals, where unclamped atomic
    spikes would ruin the importance weights.
    """
    if not 0 < beta < m.dim:
        raise ValidationError(f"order must satisfy 0 < beta < n, got beta={beta}, n={m.dim}")
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    out = np.zeros(pts.shape[0])
    if m.is_empty():
        return out
    kexp = m.dim - beta
    r0 = 0.5 * m.side * math.sqrt(m.dim)
    chunk = max(1, int(2e7 // max(m.num_atoms, 1)))
    for start in range(0, pts.shape[0], chunk):
        block = slice(start, min(start + chunk, pts.shape[0]))
        diff = pts[block, None, :] - m.atom_positions[None, :, :]
        dist = np.sqrt(np.einsum("ijk,ijk->ij", diff, diff))
        kern = np.maximum(dist, r0) ** (-kexp)
        vals = kern @ m.atom_weights
        near_mass = (dist <= r0) @ m.atom_weights
        vals += kexp / beta * near_mass * r0 ** (-kexp)
        out[block] = vals
    return out


@dataclass(frozen=True)
class FinitenessReport:
    verdict: str           # "Finite" | "Infinite"
    tail_value: float      # exact analytic tail from beyond the support
    anchor_radius: float


def finiteness_test(m: GridMeasure, prm: Params) -> FinitenessReport:
    """Large-radius tail of the radial integrand, exact for compact support.

    Finite iff alpha*p < n or the measure is trivial.
    """
    total = m.total_mass()
    if total == 0.0:
        return FinitenessReport("Finite", 0.0, 0.0)
    if not prm.kernel_integrable:
        return FinitenessReport("Infinite", math.inf, 0.0)
    a = m.support_radius()
    tail = total ** prm.wolff_exponent * a ** (-prm.gamma) / prm.gamma
    return FinitenessReport("Finite", tail, a)


# -- sampled space integrals -------------------------------------------------


@dataclass(frozen=True)
class QuadratureSpec:
    """Budget and seed for importance-sampled space integrals."""

    samples: int = 4096
    seed: int = 0

    def __post_init__(self):
        if self.samples < 8:
            raise ValidationError("quadrature needs at least 8 samples")


@dataclass(frozen=True)
class PotentialEstimate:
    value: float
    stderr: float
    samples: int


@dataclass(frozen=True)
class EnergyReport:
    value: float
    stderr: float
    fubini_value: float
    fubini_stderr: float
    samples: int


class _RadialBumpMixture:
    """Mixture proposal with power-law radial bumps at given centers.

    Radial density per bump: theta * near (r^(a_near-1) on (0,h)) plus
    (1-theta) * Pareto tail (r^-(tau+1) on (h, inf)); the near exponent is
    matched to the kernel singularity so importance weights stay bounded.
    """

    def __init__(self, centers, probs, dim, h, a_near, tau, theta=0.5):
        self.centers = np.atleast_2d(np.asarray(centers, dtype=float))
        probs = np.asarray(probs, dtype=float)
        self.probs = probs / probs.sum()
        self.dim = dim
        self.h = float(h)
        self.a_near = float(a_near)
        self.tau = float(tau)
        self.theta = float(theta)
        if self.h <= 0 or self.a_near <= 0 or self.tau <= 0:
            raise ValidationError("bump proposal needs positive h, near exponent, tau")

    def sample(self, rng: np.random.Generator, count: int) -> np.ndarray:
        comp = rng.choice(self.centers.shape[0], size=count, p=self.probs)
        u_branch = rng.random(count)
        u_r = rng.random(count)
        near = u_branch < self.theta
        r = np.where(near,
                     self.h * u_r ** (1.0 / self.a_near),
                     self.h * (1.0 - u_r) ** (-1.0 / self.tau))
        g = rng.standard_normal((count, self.dim))
        norm = np.linalg.norm(g, axis=1)
        norm[norm == 0] = 1.0
        dirs = g / norm[:, None]
        return self.centers[comp] + r[:, None] * dirs

    def _radial_density(self, r: np.ndarray) -> np.ndarray:
        near = self.theta * self.a_near * r ** (self.a_near - 1.0) / self.h ** self.a_near
        tail = (1.0 - self.theta) * self.tau * self.h ** self.tau * r ** (-self.tau - 1.0)
        return np.where(r < self.h, near, tail)

    def pdf(self, pts: np.ndarray) -> np.ndarray:
        pts = np.atleast_2d(pts)
        area = sphere_area(self.dim)
        out = np.zeros(pts.shape[0])
        chunk = max(1, int(2e7 // max(self.centers.shape[0], 1)))
        for start in range(0, pts.shape[0], chunk):
            block = slice(start, min(start + chunk, pts.shape[0]))
            diff = pts[block, None, :] - self.centers[None, :, :]
            r = np.sqrt(np.einsum("ijk,ijk->ij", diff, diff))
            r = np.maximum(r, 1e-300)
            dens = self._radial_density(r) / (area * r ** (self.dim - 1.0))
            out[block] = dens @ self.probs
        return out


def _check_tail_integrable(m: GridMeasure, prm: Params):
    decay = (prm.n - prm.alpha) * prm.p_prime
    if decay <= prm.n:
        raise Divergent(
            f"space integral tail exponent {decay} <= n = {prm.n}: divergent")


def _proposal(m: GridMeasure, prm: Params, extra_center=None):
    decay = (prm.n - prm.alpha) * prm.p_prime
    tau = min(prm.alpha, 0.5 * (decay - prm.n))
    tau = max(tau, 0.25 * (decay - prm.n))
    centers = m.cell_centers
    probs = m.cell_masses.copy()
    if extra_center is not None:
        centers = np.vstack([centers, np.asarray(extra_center, dtype=float)])
        probs = np.concatenate([probs / probs.sum(), [1.0]])
    return _RadialBumpMixture(centers, probs, m.dim, h=m.side,
                              a_near=prm.alpha, tau=tau)


def _mc_mean(values: np.ndarray) -> tuple[float, float]:
    mean = float(np.mean(values))
    se = float(np.std(values, ddof=1) / math.sqrt(values.size))
    return mean, se


def havin_mazya(m: GridMeasure, prm: Params, x, quad: QuadratureSpec) -> PotentialEstimate:
    """Composed potential: linear potential applied to the (p'-1) power of the
    linear potential, by importance-sampled space quadrature at point x."""
    if m.is_empty():
        return PotentialEstimate(0.0, 0.0, 0)
    _check_tail_integrable(m, prm)
    if not 0 < prm.alpha < prm.n / prm.p:
        raise ValidationError("composed potential needs 0 < alpha < n/p")
    x = np.asarray(x, dtype=float).ravel()
    sampler = _proposal(m, prm, extra_center=x)
    rng = np.random.default_rng(np.random.SeedSequence(quad.seed))
    z = sampler.sample(rng, quad.samples)
    g = sampler.pdf(z)
    inner = riesz_smooth(m, prm.alpha, z) ** (prm.p_prime - 1.0)
    r = np.linalg.norm(z - x, axis=1)
    r = np.maximum(r, 1e-300)
    outer = r ** (prm.alpha - prm.n)
    val, se = _mc_mean(outer * inner / g)
    return PotentialEstimate(val, se, quad.samples)


def energy(m: GridMeasure, prm: Params, quad: QuadratureSpec) -> EnergyReport:
    """Energy integral of the p' power of the linear potential, plus the
    independently sampled pairing of the composed potential against the measure
    (the two agree by exchanging the order of integration)."""
    if m.is_empty():
        return EnergyReport(0.0, 0.0, 0.0, 0.0, 0)
    _check_tail_integrable(m, prm)
    if not 0 < prm.alpha < prm.n / prm.p:
        raise ValidationError("energy needs 0 < alpha < n/p")
    sampler = _proposal(m, prm)
    seeds = np.random.SeedSequence(quad.seed).spawn(2)

    rng_e = np.random.default_rng(seeds[0])
    z = sampler.sample(rng_e, quad.samples)
    g = sampler.pdf(z)
    smooth = riesz_smooth(m, prm.alpha, z)
    e_val, e_se = _mc_mean(smooth ** prm.p_prime / g)

    rng_f = np.random.default_rng(seeds[1])
    z2 = sampler.sample(rng_f, quad.samples)
    g2 = sampler.pdf(z2)
    smooth2 = riesz_smooth(m, prm.alpha, z2)
    keep = m.atom_weights > 0
    chunk = max(1, int(2e7 // max(int(keep.sum()), 1)))
    atomic = np.zeros(z2.shape[0])
    for start in range(0, z2.shape[0], chunk):
        block = slice(start, min(start + chunk, z2.shape[0]))
        diff = z2[block, None, :] - m.atom_positions[keep][None, :, :]
        dist = np.sqrt(np.einsum("ijk,ijk->ij", diff, diff))
        dist = np.maximum(dist, 1e-300)
        atomic[block] = dist ** (prm.alpha - prm.n) @ m.atom_weights[keep]
    f_val, f_se = _mc_mean(atomic * smooth2 ** (prm.p_prime - 1.0) / g2)
    return EnergyReport(e_val, e_se, f_val, f_se, quad.samples)
