"""Nonnegative measures as grid-cell densities with deterministic pseudo-atoms.

A measure is stored as a set of equal-sided cells on a regular lattice, each
carrying a nonnegative mass.  Every cell is expanded into ``s`` pseudo-atoms
placed at a fixed low-discrepancy offset pattern inside the cell, so that ball
and cube mass queries reduce to exact, reproducible point counts.  Atom weights
are compensated so the per-cell weight sum reproduces the cell mass to the last
bit (see ``_split_exact``).
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path

import numpy as np

from .errors import ValidationError

__all__ = [
    "Params",
    "GridMeasure",
    "RadialMassProfile",
    "Ball",
    "GridSpec",
    "UniformBall",
    "RadialPower",
    "RandomCells",
    "FromFile",
    "Empty",
    "build_grid_measure",
    "ball_mass",
    "radial_profile",
    "restrict",
    "cube_mass",
    "save_measure",
    "load_measure",
    "unit_ball_volume",
    "sphere_area",
]

_PRIMES = (2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37)


def unit_ball_volume(n: int) -> float:
    """Volume of the unit ball in R^n."""
    return math.pi ** (n / 2.0) / math.gamma(n / 2.0 + 1.0)


def sphere_area(n: int) -> float:
    """Surface area of the unit sphere S^(n-1) in R^n."""
    return n * unit_ball_volume(n)


@dataclass(frozen=True)
class Params:
    """Exponent tuple (n, alpha, p, q) with derived decay and threshold data.

    Constraints: n >= 1, alpha > 0, p > 1, 0 < q < p-1.  When alpha*p >= n the
    radial kernel is non-integrable and only trivial-measure code paths are
    legal; operations that need the kernel raise ``NonIntegrableKernel``.
    """

    n: int
    alpha: float
    p: float
    q: float

    def __post_init__(self):
        if int(self.n) != self.n or self.n < 1:
            raise ValidationError(f"dimension must be a positive integer, got {self.n}")
        if not self.alpha > 0:
            raise ValidationError(f"alpha must be positive, got {self.alpha}")
        if not self.p > 1:
            raise ValidationError(f"p must exceed 1, got {self.p}")
        if not 0 < self.q < self.p - 1:
            raise ValidationError(f"q must lie in (0, p-1), got q={self.q}, p={self.p}")

    @property
    def kernel_integrable(self) -> bool:
        return self.alpha * self.p < self.n

    @property
    def gamma(self) -> float:
        """Decay exponent (n - alpha*p)/(p - 1); positive iff the kernel is integrable."""
        return (self.n - self.alpha * self.p) / (self.p - 1.0)

    @property
    def lr_threshold(self) -> float:
        """Critical integrability exponent n(p-1)/(n - alpha*p)."""
        if not self.kernel_integrable:
            raise ValidationError("lr_threshold is defined only for alpha*p < n")
        return self.n * (self.p - 1.0) / (self.n - self.alpha * self.p)

    @property
    def p_prime(self) -> float:
        return self.p / (self.p - 1.0)

    @property
    def wolff_exponent(self) -> float:
        """Outer exponent 1/(p-1) applied to ball masses."""
        return 1.0 / (self.p - 1.0)

    @property
    def kappa_exponent(self) -> float:
        """Exponent q/(p-1-q) applied to embedding constants in radial integrands."""
        return self.q / (self.p - 1.0 - self.q)

    @property
    def kappa_power(self) -> float:
        """Inner power q(p-1)/(p-1-q) on embedding constants before the 1/(p-1) root."""
        return self.q * (self.p - 1.0) / (self.p - 1.0 - self.q)

    @property
    def solution_exponent(self) -> float:
        """Power (p-1)/(p-1-q) turning a base potential into a natural iterate seed."""
        return (self.p - 1.0) / (self.p - 1.0 - self.q)


def _radical_inverse(base: int, index: int) -> float:
    inv = 0.0
    f = 1.0 / base
    i = index
    while i > 0:
        inv += f * (i % base)
        i //= base
        f /= base
    return inv


def _atom_offsets(dim: int, count: int) -> np.ndarray:
    """Fixed low-discrepancy offsets in (0,1)^dim, one row per atom.

    Halton points with an irrational shift per coordinate; the shift keeps the
    offsets away from 0.5 (cell centers) and from low dyadic rationals (cube
    faces).
    """
    if dim > len(_PRIMES):
        raise ValidationError(f"dimension {dim} exceeds supported maximum {len(_PRIMES)}")
    out = np.empty((count, dim), dtype=float)
    shifts = [math.sqrt(_PRIMES[d]) % 1.0 for d in range(dim)]
    for i in range(count):
        for d in range(dim):
            v = (_radical_inverse(_PRIMES[d], i + 1) + shifts[d]) % 1.0
            if v == 0.5 or v == 0.0:  # never exactly a center or a face
                v += 2.0 ** -30
            out[i, d] = v
    return out


def _split_exact(total: float, count: int) -> np.ndarray:
    """Split ``total`` into ``count`` nearly equal parts whose float values sum
    back to ``total`` exactly under correctly rounded summation."""
    if count == 1:
        return np.array([total], dtype=float)
    w = total / count
    parts = np.full(count, w, dtype=float)
    rem = Fraction(total) - (count - 1) * Fraction(w)
    parts[-1] = float(rem)
    return parts


def _proportional_masses(total: float, weights: np.ndarray) -> np.ndarray:
    """Masses proportional to ``weights`` summing to ``total`` exactly (fsum)."""
    wsum = math.fsum(weights.tolist())
    if wsum <= 0:
        raise ValidationError("proportional mass split needs a positive weight sum")
    masses = total * (weights / wsum)
    if masses.size == 1:
        masses[0] = total
        return masses
    k = int(np.argmax(masses))
    rem = Fraction(total)
    for i, v in enumerate(masses.tolist()):
        if i != k:
            rem -= Fraction(v)
    adj = float(rem)
    if adj < 0:
        raise ValidationError("degenerate proportional split")
    masses[k] = adj
    return masses


class GridMeasure:
    """Compactly supported nonnegative measure on equal-sided grid cells.

    Immutable after construction; all queries are pure.  ``atoms`` carry the
    whole mass: per-cell atom weights sum to the cell mass exactly.
    """

    def __init__(self, dim, side, subsample, cell_centers, cell_masses,
                 _atoms=None):
        cell_centers = np.atleast_2d(np.asarray(cell_centers, dtype=float))
        cell_masses = np.asarray(cell_masses, dtype=float).ravel()
        if cell_masses.size == 0:
            cell_centers = cell_centers.reshape(0, dim)
        if cell_centers.shape[0] != cell_masses.size:
            raise ValidationError("cell centers and masses disagree in length")
        if cell_centers.shape[0] and cell_centers.shape[1] != dim:
            raise ValidationError("cell centers do not match the stated dimension")
        if np.any(cell_masses < 0):
            raise ValidationError("cell masses must be nonnegative")
        if not np.all(np.isfinite(cell_centers)) or not np.all(np.isfinite(cell_masses)):
            raise ValidationError("measure support must be bounded and masses finite")
        if side <= 0 or not math.isfinite(side):
            raise ValidationError(f"cell side must be positive and finite, got {side}")
        if int(subsample) != subsample or subsample < 1:
            raise ValidationError(f"subsample count must be an integer >= 1, got {subsample}")

        self.dim = int(dim)
        self.side = float(side)
        self.subsample = int(subsample)
        self.cell_centers = cell_centers
        self.cell_masses = cell_masses

        if _atoms is None:
            k = cell_masses.size
            s = self.subsample
            offsets = _atom_offsets(self.dim, s)
            pos = (cell_centers[:, None, :] + (offsets[None, :, :] - 0.5) * side)
            pos = pos.reshape(k * s, self.dim)
            weights = np.concatenate(
                [_split_exact(m, s) for m in cell_masses.tolist()]
            ) if k else np.zeros(0)
            cell_of_atom = np.repeat(np.arange(k, dtype=np.int64), s)
        else:
            pos, weights, cell_of_atom = _atoms
        self.atom_positions = np.asarray(pos, dtype=float).reshape(-1, self.dim)
        self.atom_weights = np.asarray(weights, dtype=float).ravel()
        self.atom_cell = np.asarray(cell_of_atom, dtype=np.int64).ravel()

        # lattice index for exact point-in-cell lookups
        if cell_masses.size:
            origin = cell_centers.min(axis=0) - 0.5 * side
            idx = np.rint((cell_centers - origin) / side - 0.5).astype(np.int64)
        else:
            origin = np.zeros(self.dim)
            idx = np.zeros((0, self.dim), dtype=np.int64)
        self._origin = origin
        self._cell_index = {tuple(row): i for i, row in enumerate(idx.tolist())}

        for arr in (self.cell_centers, self.cell_masses, self.atom_positions,
                    self.atom_weights, self.atom_cell, self._origin):
            arr.setflags(write=False)

    # -- basic queries ---------------------------------------------------

    @property
    def cells(self):
        """List of (center, side, mass) triples."""
        return [(self.cell_centers[i].copy(), self.side, float(self.cell_masses[i]))
                for i in range(self.cell_masses.size)]

    @property
    def num_cells(self) -> int:
        return int(self.cell_masses.size)

    @property
    def num_atoms(self) -> int:
        return int(self.atom_weights.size)

    @property
    def cell_volume(self) -> float:
        return self.side ** self.dim

    def total_mass(self) -> float:
        return math.fsum(self.atom_weights.tolist())

    def is_empty(self) -> bool:
        return self.num_atoms == 0 or float(np.max(self.atom_weights, initial=0.0)) == 0.0

    def cell_of_point(self, x) -> int:
        """Index of the cell whose half-open box contains x, or -1."""
        x = np.asarray(x, dtype=float).ravel()
        key = tuple(int(v) for v in np.floor((x - self._origin) / self.side))
        return self._cell_index.get(key, -1)

    def local_density(self, x) -> float:
        i = self.cell_of_point(x)
        return float(self.cell_masses[i]) / self.cell_volume if i >= 0 else 0.0

    def near_radius(self, x) -> float:
        """Cell diameter at x (0 outside the support grid)."""
        return self.side * math.sqrt(self.dim) if self.cell_of_point(x) >= 0 else 0.0

    def support_radius(self, origin=None) -> float:
        """Largest atom distance from ``origin`` (default 0)."""
        if self.num_atoms == 0:
            return 0.0
        o = np.zeros(self.dim) if origin is None else np.asarray(origin, dtype=float)
        return float(np.max(np.linalg.norm(self.atom_positions - o, axis=1)))

    def bounding_box(self):
        if self.num_cells == 0:
            z = np.zeros(self.dim)
            return z, z
        half = 0.5 * self.side
        return self.cell_centers.min(axis=0) - half, self.cell_centers.max(axis=0) + half

    def scaled(self, t: float) -> "GridMeasure":
        """Measure with every mass multiplied by t >= 0."""
        if t < 0:
            raise ValidationError("mass scale must be nonnegative")
        return GridMeasure(
            self.dim, self.side, self.subsample,
            self.cell_centers, self.cell_masses * t,
            _atoms=(self.atom_positions, self.atom_weights * t, self.atom_cell),
        )

    def dilated(self, lam: float) -> "GridMeasure":
        """Pushforward under x -> lam*x (masses unchanged)."""
        if lam <= 0:
            raise ValidationError("dilation factor must be positive")
        return GridMeasure(
            self.dim, self.side * lam, self.subsample,
            self.cell_centers * lam, self.cell_masses,
            _atoms=(self.atom_positions * lam, self.atom_weights, self.atom_cell),
        )


@dataclass(frozen=True)
class RadialMassProfile:
    """Step-function representation of rho -> mass within distance rho of origin."""

    origin: np.ndarray
    breakpoints: np.ndarray   # ascending distinct atom distances
    cumulative: np.ndarray    # mass within distance breakpoints[i] (closed ball)
    local_density: float
    near_radius: float
    total_mass: float

    def mass_at(self, rho: float) -> float:
        """Interpolate the step function at radius rho (closed-ball convention)."""
        if rho < 0:
            raise ValidationError("radius must be nonnegative")
        i = int(np.searchsorted(self.breakpoints, rho, side="right")) - 1
        return float(self.cumulative[i]) if i >= 0 else 0.0


@dataclass(frozen=True)
class Ball:
    """Closed ball used as a restriction / embedding region."""

    center: tuple
    radius: float

    def __post_init__(self):
        if self.radius < 0 or not math.isfinite(self.radius):
            raise ValidationError(f"ball radius must be finite and nonnegative, got {self.radius}")

    def contains_points(self, pts: np.ndarray) -> np.ndarray:
        c = np.asarray(self.center, dtype=float)
        return np.linalg.norm(np.atleast_2d(pts) - c, axis=1) <= self.radius

    @property
    def region_id(self) -> str:
        coords = ",".join(repr(float(v)) for v in self.center)
        return f"{coords};{self.radius!r}"


# -- measure specifications -----------------------------------------------


@dataclass(frozen=True)
class GridSpec:
    """Regular grid: cells_per_side cells along each axis of ``box``."""

    cells_per_side: int
    box: tuple  # ((lo, hi), ...) per dimension

    def __post_init__(self):
        if self.cells_per_side < 1:
            raise ValidationError("grid needs at least one cell per side")
        for lo, hi in self.box:
            if not (math.isfinite(lo) and math.isfinite(hi) and hi > lo):
                raise ValidationError("grid box must be finite with hi > lo")

    @property
    def dim(self) -> int:
        return len(self.box)

    def centers(self) -> tuple[np.ndarray, float]:
        lo = np.array([b[0] for b in self.box])
        hi = np.array([b[1] for b in self.box])
        widths = (hi - lo) / self.cells_per_side
        side = float(widths[0])
        if not np.allclose(widths, side, rtol=1e-12, atol=0):
            raise ValidationError("grid cells must be cubes: box widths must agree")
        axes = [lo[d] + (np.arange(self.cells_per_side) + 0.5) * side
                for d in range(self.dim)]
        mesh = np.meshgrid(*axes, indexing="ij")
        centers = np.stack([g.ravel() for g in mesh], axis=1)
        return centers, side


@dataclass(frozen=True)
class UniformBall:
    center: tuple
    radius: float
    mass: float


@dataclass(frozen=True)
class RadialPower:
    """Density proportional to |x - center|^(-exponent) on the annulus [r_inner, r_outer]."""

    exponent: float
    r_inner: float
    r_outer: float
    mass: float
    center: tuple | None = None


@dataclass(frozen=True)
class RandomCells:
    """Independent cells kept with probability ``fill``, masses U(0,1), optionally rescaled."""

    seed: int
    box: tuple
    fill: float = 0.25
    mass: float | None = None


@dataclass(frozen=True)
class FromFile:
    path: str


@dataclass(frozen=True)
class Empty:
    dim: int


def build_grid_measure(spec, grid: GridSpec | None = None, subsamples: int = 8) -> GridMeasure:
    """Discretize a measure specification onto a grid.

    Total mass matches the spec exactly (cell masses are compensated);
    identical inputs give bit-identical measures.
    """
    if isinstance(spec, Empty):
        return GridMeasure(spec.dim, 1.0, subsamples, np.zeros((0, spec.dim)), np.zeros(0))

    if isinstance(spec, FromFile):
        return load_measure(spec.path)

    if grid is None:
        raise ValidationError("grid specification required for synthetic measures")
    centers, side = grid.centers()

    if isinstance(spec, UniformBall):
        if spec.mass < 0:
            raise ValidationError("total mass must be nonnegative")
        if not math.isfinite(spec.radius) or spec.radius <= 0:
            raise ValidationError("ball radius must be positive and finite")
        keep = np.linalg.norm(centers - np.asarray(spec.center), axis=1) <= spec.radius
        centers = centers[keep]
        if centers.shape[0] == 0 or spec.mass == 0:
            return GridMeasure(grid.dim, side, subsamples, np.zeros((0, grid.dim)), np.zeros(0))
        masses = _proportional_masses(spec.mass, np.ones(centers.shape[0]))
        return GridMeasure(grid.dim, side, subsamples, centers, masses)

    if isinstance(spec, RadialPower):
        if spec.mass < 0:
            raise ValidationError("total mass must be nonnegative")
        if not math.isfinite(spec.r_outer):
            raise ValidationError("unbounded annulus rejected: r_outer must be finite")
        if spec.r_inner < 0 or spec.r_outer <= spec.r_inner:
            raise ValidationError("annulus needs 0 <= r_inner < r_outer")
        c = np.zeros(grid.dim) if spec.center is None else np.asarray(spec.center, dtype=float)
        r = np.linalg.norm(centers - c, axis=1)
        keep = (r >= spec.r_inner) & (r <= spec.r_outer)
        if spec.exponent > 0 and np.any(r[keep] == 0.0):
            raise ValidationError("singular density at a cell center: increase r_inner")
        centers = centers[keep]
        if centers.shape[0] == 0 or spec.mass == 0:
            return GridMeasure(grid.dim, side, subsamples, np.zeros((0, grid.dim)), np.zeros(0))
        dens = np.linalg.norm(centers - c, axis=1) ** (-spec.exponent)
        masses = _proportional_masses(spec.mass, dens)
        return GridMeasure(grid.dim, side, subsamples, centers, masses)

    if isinstance(spec, RandomCells):
        rng = np.random.default_rng(spec.seed)
        if not 0 < spec.fill <= 1:
            raise ValidationError("fill fraction must lie in (0, 1]")
        keep = rng.random(centers.shape[0]) < spec.fill
        raw = rng.random(centers.shape[0])[keep]
        centers = centers[keep]
        if centers.shape[0] == 0:
            return GridMeasure(grid.dim, side, subsamples, np.zeros((0, grid.dim)), np.zeros(0))
        if spec.mass is not None:
            if spec.mass < 0:
                raise ValidationError("total mass must be nonnegative")
            masses = _proportional_masses(spec.mass, raw) if spec.mass > 0 else raw * 0.0
        else:
            masses = raw
        return GridMeasure(grid.dim, side, subsamples, centers, masses)

    raise ValidationError(f"unknown measure specification {type(spec).__name__}")


# -- mass queries ----------------------------------------------------------


def ball_mass(m: GridMeasure, x, rho: float) -> float:
    """Atom mass within (closed) distance rho of x; nondecreasing in rho."""
    if rho < 0:
        raise ValidationError("radius must be nonnegative")
    if m.num_atoms == 0:
        return 0.0
    d = np.linalg.norm(m.atom_positions - np.asarray(x, dtype=float), axis=1)
    sel = m.atom_weights[d <= rho]
    return math.fsum(sel.tolist())


def radial_profile(m: GridMeasure, x) -> RadialMassProfile:
    """Sorted distinct atom distances from x with cumulative masses."""
    x = np.asarray(x, dtype=float).ravel()
    if m.num_atoms == 0:
        return RadialMassProfile(x, np.zeros(0), np.zeros(0), 0.0, m.near_radius(x), 0.0)
    d = np.linalg.norm(m.atom_positions - x, axis=1)
    order = np.argsort(d, kind="stable")
    ds = d[order]
    ws = m.atom_weights[order]
    cum = np.cumsum(ws)
    # merge ties: keep the last index of each distinct distance
    last = np.ones(ds.size, dtype=bool)
    last[:-1] = ds[1:] != ds[:-1]
    return RadialMassProfile(
        origin=x,
        breakpoints=ds[last],
        cumulative=cum[last],
        local_density=m.local_density(x),
        near_radius=m.near_radius(x),
        total_mass=float(cum[-1]),
    )


def restrict(m: GridMeasure, region) -> GridMeasure:
    """Restriction of m to a region (Ball or DyadicCube).

    Atoms inside the region keep their weights; cell masses are recomputed from
    the surviving atoms.  Restricting to a superset of the support returns a
    measure equal to m.
    """
    if m.num_atoms == 0:
        return m
    keep = np.asarray(region.contains_points(m.atom_positions), dtype=bool)
    if not np.any(keep):
        return GridMeasure(m.dim, m.side, m.subsample,
                           np.zeros((0, m.dim)), np.zeros(0))
    pos = m.atom_positions[keep]
    w = m.atom_weights[keep]
    old_cell = m.atom_cell[keep]
    kept_cells, new_cell = np.unique(old_cell, return_inverse=True)
    masses = np.array([math.fsum(w[new_cell == i].tolist())
                       for i in range(kept_cells.size)])
    return GridMeasure(
        m.dim, m.side, m.subsample,
        m.cell_centers[kept_cells], masses,
        _atoms=(pos, w, new_cell),
    )


def cube_mass(m: GridMeasure, cube) -> float:
    """Atom mass inside a half-open dyadic cube."""
    if m.num_atoms == 0:
        return 0.0
    inside = cube.contains_points(m.atom_positions)
    return math.fsum(m.atom_weights[inside].tolist())


# -- file format ------------------------------------------------------------


def save_measure(m: GridMeasure, path) -> None:
    """Write the measure as CSV: header ``dim,side,subsample``, one row with
    those values, then rows ``c1,...,cdim,mass``."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["dim", "side", "subsample"])
        w.writerow([m.dim, repr(m.side), m.subsample])
        for i in range(m.num_cells):
            w.writerow([repr(float(v)) for v in m.cell_centers[i]]
                       + [repr(float(m.cell_masses[i]))])


def load_measure(path) -> GridMeasure:
    path = Path(path)
    if not path.exists():
        raise ValidationError(f"measure file not found: {path}")
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if len(rows) < 2 or [c.strip() for c in rows[0]] != ["dim", "side", "subsample"]:
        raise ValidationError("measure file must start with header dim,side,subsample")
    dim = int(rows[1][0])
    side = float(rows[1][1])
    subsample = int(rows[1][2])
    data = [r for r in rows[2:] if r]
    centers = np.array([[float(v) for v in r[:dim]] for r in data], dtype=float)
    masses = np.array([float(r[dim]) for r in data], dtype=float)
    if np.any(masses < 0):
        raise ValidationError("negative mass in measure file")
    if centers.size == 0:
        centers = np.zeros((0, dim))
    return GridMeasure(dim, side, subsample, centers, masses)
