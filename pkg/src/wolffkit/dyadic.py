"""Dyadic cube lattice and the dyadic radial/intrinsic potentials.

Cubes are half-open boxes prod_d [k_d 2^-j, (k_d+1) 2^-j); membership and
parent/child relations are decided in exact integer arithmetic (scaling a
float by a power of two is exact).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import IncompleteTable, ValidationError
from .measure import GridMeasure, Params, cube_mass

__all__ = [
    "DyadicCube",
    "cube_of",
    "parse_cube_id",
    "dyadic_cover",
    "dyadic_wolff",
    "dyadic_intrinsic",
    "dyadic_tail_test",
    "TailReport",
]


@dataclass(frozen=True)
class DyadicCube:
    """Level-j dyadic cube with integer index vector k."""

    level: int
    index: tuple

    def __post_init__(self):
        if any(int(k) != k for k in self.index):
            raise ValidationError("cube index must be integral")

    @property
    def dim(self) -> int:
        return len(self.index)

    @property
    def side(self) -> float:
        return 2.0 ** (-self.level)

    @property
    def volume(self) -> float:
        return 2.0 ** (-self.level * self.dim)

    @property
    def lo(self) -> np.ndarray:
        return np.array(self.index, dtype=float) * self.side

    @property
    def hi(self) -> np.ndarray:
        return (np.array(self.index, dtype=float) + 1.0) * self.side

    @property
    def center(self) -> np.ndarray:
        return (np.array(self.index, dtype=float) + 0.5) * self.side

    @property
    def region_id(self) -> str:
        return f"{self.level}:" + ",".join(str(int(k)) for k in self.index)

    def parent(self) -> "DyadicCube":
        return DyadicCube(self.level - 1, tuple(k // 2 for k in self.index))

    def ancestor(self, level: int) -> "DyadicCube":
        if level > self.level:
            raise ValidationError("ancestor level must be coarser (smaller)")
        shift = self.level - level
        return DyadicCube(level, tuple(k >> shift for k in self.index))

    def children(self):
        dim = self.dim
        out = []
        for mask in range(2 ** dim):
            k = tuple(2 * self.index[d] + ((mask >> d) & 1) for d in range(dim))
            out.append(DyadicCube(self.level + 1, k))
        return out

    def contains_cube(self, other: "DyadicCube") -> bool:
        if other.level < self.level:
            return False
        return other.ancestor(self.level) == self

    def contains_points(self, pts) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(pts, dtype=float))
        scaled = pts * (2.0 ** self.level)   # exact: power-of-two scaling
        k = np.floor(scaled)
        return np.all(k == np.array(self.index, dtype=float), axis=1)

    def contains_point(self, x) -> bool:
        return bool(self.contains_points(np.asarray(x, dtype=float).reshape(1, -1))[0])

    def contains_box(self, lo, hi) -> bool:
        """Whether the closed box [lo, hi] lies inside this half-open cube."""
        lo = np.asarray(lo, dtype=float)
        hi = np.asarray(hi, dtype=float)
        return bool(np.all(self.lo <= lo) and np.all(hi < self.hi))


def cube_of(x, level: int) -> DyadicCube:
    """The unique level-j cube containing x (faces belong to the upper cube)."""
    x = np.asarray(x, dtype=float).ravel()
    k = np.floor(x * (2.0 ** level))
    if not np.all(np.isfinite(k)):
        raise ValidationError("point not representable at this level")
    return DyadicCube(int(level), tuple(int(v) for v in k))


def parse_cube_id(s: str) -> DyadicCube:
    level_str, _, idx = s.partition(":")
    return DyadicCube(int(level_str), tuple(int(v) for v in idx.split(",")))


def dyadic_cover(m: GridMeasure, j_min: int, j_max: int):
    """All cubes with positive mass in the level window [j_min, j_max]."""
    if j_min > j_max:
        raise ValidationError("level window needs j_min <= j_max")
    cubes = []
    for j in range(j_min, j_max + 1):
        if m.num_atoms == 0:
            continue
        k = np.floor(m.atom_positions * (2.0 ** j)).astype(np.int64)
        for row in np.unique(k, axis=0):
            cubes.append(DyadicCube(j, tuple(int(v) for v in row)))
    return cubes


def _wolff_term(mass: float, volume: float, prm: Params) -> float:
    if mass == 0.0:
        return 0.0
    return (mass / volume ** (1.0 - prm.alpha * prm.p / prm.n)) ** prm.wolff_exponent


def _riesz_term(mass: float, volume: float, prm: Params) -> float:
    return mass / volume ** (1.0 - prm.alpha / prm.n)


def dyadic_wolff(m: GridMeasure, prm: Params, x, j_min: int, j_max: int,
                 root: DyadicCube | None = None, kind: str = "wolff") -> float:
    """Sum over cubes containing x in the level window (within ``root`` if given).

    ``kind``: "wolff" uses the 1/(p-1) power of sigma(Q)/|Q|^(1-alpha*p/n);
    "riesz" is the linear variant with |Q|^(1-alpha/n).
    """
    if kind == "wolff" and not prm.kernel_integrable:
        from .errors import NonIntegrableKernel
        raise NonIntegrableKernel(f"alpha*p={prm.alpha * prm.p} >= n={prm.n}")
    term = _wolff_term if kind == "wolff" else _riesz_term
    if kind not in ("wolff", "riesz"):
        raise ValidationError(f"unknown dyadic kernel kind {kind!r}")
    total = 0.0
    for j in range(j_min, j_max + 1):
        q = cube_of(x, j)
        if root is not None and not root.contains_cube(q):
            continue
        total += term(cube_mass(m, q), q.volume, prm)
    return total


def _kappa_term(kappa: float, volume: float, prm: Params) -> float:
    if kappa == 0.0:
        return 0.0
    return (kappa ** prm.kappa_power / volume ** (1.0 - prm.alpha * prm.p / prm.n)) \
        ** prm.wolff_exponent


def dyadic_intrinsic(kt, prm: Params, x, root: DyadicCube | None = None) -> float:
    """Intrinsic dyadic sum over the table's level window at point x."""
    j_min, j_max = kt.dyadic_window()
    total = 0.0
    for j in range(j_min, j_max + 1):
        q = cube_of(x, j)
        if root is not None and not root.contains_cube(q):
            continue
        total += _kappa_term(kt.cube_kappa(q), q.volume, prm)
    return total


@dataclass(frozen=True)
class TailReport:
    verdict: str           # "Finite" | "Infinite"
    value: float
    exact: bool            # whether the coarse continuation was exact


def dyadic_tail_test(kt, prm: Params, cube: DyadicCube) -> TailReport:
    """Ancestor sum over R >= cube up to the table's coarsest level, plus the
    exact geometric continuation with the global embedding constant.

    Finite iff alpha*p < n or the measure is trivial.
    """
    j_min, _ = kt.dyadic_window()
    if cube.level < j_min:
        raise IncompleteTable(f"cube level {cube.level} coarser than table window")
    kglob = kt.global_kappa
    if kglob == 0.0:
        return TailReport("Finite", 0.0, True)
    gamma = prm.gamma
    if gamma <= 0:
        return TailReport("Infinite", math.inf, True)

    total = 0.0
    for j in range(j_min, cube.level + 1):
        r = cube.ancestor(j)
        total += _kappa_term(kt.cube_kappa(r), r.volume, prm)

    # coarser than the window: kappa equals the global constant once the
    # ancestor cube contains the support box, and 0 while it is disjoint
    lo, hi = kt.support_bbox
    kexp = prm.kappa_exponent
    geom = 1.0 / (1.0 - 2.0 ** -gamma)
    exact = True
    guard = 0
    anc = cube.ancestor(j_min)
    while guard < 1200:
        anc = anc.parent()
        guard += 1
        if anc.contains_box(lo, hi):
            # all coarser ancestors contain the support: geometric series of
            # terms kglob^kexp * 2^(j*gamma) over levels j <= anc.level
            total += kglob ** kexp * 2.0 ** (anc.level * gamma) * geom
            break
        inter = bool(np.all(anc.lo <= hi) and np.all(lo <= anc.hi))
        if all(k in (-1, 0) for k in anc.index):
            # chain has stabilized to an orthant; overlap status is final
            if inter:
                # support straddles the orthant boundary: model the remaining
                # constants by the global one (upper model, flagged inexact)
                total += kglob ** kexp * 2.0 ** (anc.level * gamma) * geom
                exact = False
            break
        if inter:
            total += _kappa_term(kglob, anc.volume, prm)
            exact = False
    return TailReport("Finite", total, exact)
