import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import wolffkit as wk
from wolffkit import ValidationError

BOX3 = ((-1.0, 1.0),) * 3


def brute_ball_mass(m, x, rho):
    """Independent recount: plain loop over atoms."""
    total = Fraction(0)
    x = np.asarray(x, dtype=float)
    for pos, w in zip(m.atom_positions, m.atom_weights):
        if math.dist(pos, x) <= rho:
            total += Fraction(float(w))
    return float(total)


class TestParams:
    def test_derived_quantities(self):
        prm = wk.Params(3, 1.0, 2.0, 0.5)
        assert prm.gamma == 1.0
        assert prm.lr_threshold == 3.0
        assert prm.p_prime == 2.0
        assert prm.kernel_integrable

    def test_invalid_exponents(self):
        with pytest.raises(ValidationError):
            wk.Params(3, 1.0, 2.0, 1.5)   # q >= p-1
        with pytest.raises(ValidationError):
            wk.Params(3, -1.0, 2.0, 0.5)
        with pytest.raises(ValidationError):
            wk.Params(0, 1.0, 2.0, 0.5)
        with pytest.raises(ValidationError):
            wk.Params(3, 1.0, 0.9, 0.1)

    def test_non_integrable_regime_flagged(self):
        prm = wk.Params(2, 1.0, 2.0, 0.5)   # alpha*p = n
        assert not prm.kernel_integrable
        with pytest.raises(ValidationError):
            _ = prm.lr_threshold


class TestBuild:
    def test_uniform_ball_mass_exact(self, ball16_s8):
        assert ball16_s8.total_mass() == 1.0
        assert ball16_s8.subsample == 8

    def test_empty_spec(self, empty3):
        assert empty3.num_cells == 0
        assert empty3.total_mass() == 0.0

    def test_random_cells_deterministic(self):
        spec = wk.RandomCells(7, BOX3, fill=0.3)
        grid = wk.GridSpec(6, BOX3)
        m1 = wk.build_grid_measure(spec, grid, subsamples=3)
        m2 = wk.build_grid_measure(spec, grid, subsamples=3)
        assert np.array_equal(m1.atom_positions, m2.atom_positions)
        assert np.array_equal(m1.atom_weights, m2.atom_weights)
        assert np.array_equal(m1.cell_masses, m2.cell_masses)

    def test_negative_mass_rejected(self):
        with pytest.raises(ValidationError):
            wk.build_grid_measure(wk.UniformBall((0, 0, 0), 1.0, -1.0),
                                  wk.GridSpec(4, BOX3))

    def test_unbounded_spec_rejected(self):
        with pytest.raises(ValidationError):
            wk.build_grid_measure(
                wk.RadialPower(1.0, 0.1, math.inf, 1.0),
                wk.GridSpec(4, BOX3))

    def test_radial_power_total_mass(self):
        m = wk.build_grid_measure(wk.RadialPower(1.5, 0.2, 0.9, 2.5),
                                  wk.GridSpec(10, BOX3), subsamples=2)
        assert m.total_mass() == pytest.approx(2.5, rel=1e-12)

    def test_atom_weights_sum_to_cell_mass(self):
        m = wk.build_grid_measure(wk.RandomCells(3, BOX3, fill=0.4),
                                  wk.GridSpec(5, BOX3), subsamples=7)
        for i in range(m.num_cells):
            w = m.atom_weights[m.atom_cell == i]
            assert math.fsum(w.tolist()) == m.cell_masses[i]

    def test_atoms_avoid_cell_centers(self):
        m = wk.build_grid_measure(wk.UniformBall((0, 0, 0), 1.0, 1.0),
                                  wk.GridSpec(8, BOX3), subsamples=8)
        for c in m.cell_centers[:10]:
            d = np.linalg.norm(m.atom_positions - c, axis=1)
            assert np.all(d > 0)


class TestBallMass:
    def test_volume_fraction(self, ball16_s8):
        got = wk.ball_mass(ball16_s8, [0.0, 0.0, 0.0], 0.5)
        assert got == pytest.approx(0.125, abs=0.02)   # subsampling tolerance

    def test_zero_radius(self, ball16_s8):
        assert wk.ball_mass(ball16_s8, [0.1, 0.2, 0.3], 0.0) == 0.0

    def test_total_beyond_support(self, ball16_s8):
        assert wk.ball_mass(ball16_s8, [0.0, 0.0, 0.0], 10.0) == 1.0

    def test_monotone_in_radius(self, ball8):
        rng = np.random.default_rng(11)
        for _ in range(1000):
            x = rng.uniform(-2, 2, size=3)
            r1, r2 = sorted(rng.uniform(0, 3, size=2))
            assert wk.ball_mass(ball8, x, r1) <= wk.ball_mass(ball8, x, r2)

    def test_negative_radius_rejected(self, ball8):
        with pytest.raises(ValidationError):
            wk.ball_mass(ball8, [0, 0, 0], -0.1)


class TestRadialProfile:
    def test_single_cell_single_atom(self):
        m = wk.GridMeasure(3, 0.25, 1, [[0.0, 0.0, 0.0]], [1.0])
        prof = wk.radial_profile(m, [2.0, 0.0, 0.0])
        assert prof.breakpoints.size == 1
        assert prof.cumulative[0] == 1.0
        assert prof.total_mass == 1.0

    def test_dilation_symmetry_exact(self, ball8):
        # powers of two scale positions exactly, so profiles map exactly
        x = np.array([0.25, -0.5, 0.125])
        p1 = wk.radial_profile(ball8, x)
        p2 = wk.radial_profile(ball8.dilated(2.0), 2.0 * x)
        assert np.array_equal(p2.breakpoints, 2.0 * p1.breakpoints)
        assert np.array_equal(p2.cumulative, p1.cumulative)

    def test_profile_matches_ball_mass_recount(self, ball8):
        rng = np.random.default_rng(5)
        for _ in range(100):
            x = rng.uniform(-1.5, 1.5, size=3)
            rho = rng.uniform(0, 3)
            prof = wk.radial_profile(ball8, x)
            direct = brute_ball_mass(ball8, x, rho)
            assert prof.mass_at(rho) == pytest.approx(direct, rel=1e-12, abs=1e-15)

    def test_local_density(self, ball16_s8):
        prof = wk.radial_profile(ball16_s8, [0.01, 0.02, 0.03])
        vol_ball = 4.0 * math.pi / 3.0
        assert prof.local_density == pytest.approx(1.0 / vol_ball, rel=0.1)
        outside = wk.radial_profile(ball16_s8, [5.0, 0.0, 0.0])
        assert outside.local_density == 0.0
        assert outside.near_radius == 0.0


class TestRestrict:
    def test_superset_is_identity(self, ball8):
        r = wk.restrict(ball8, wk.Ball((0.0, 0.0, 0.0), 5.0))
        assert np.array_equal(r.atom_positions, ball8.atom_positions)
        assert np.array_equal(r.atom_weights, ball8.atom_weights)
        assert np.array_equal(r.cell_masses, ball8.cell_masses)

    def test_disjoint_gives_zero(self, ball8):
        r = wk.restrict(ball8, wk.Ball((10.0, 0.0, 0.0), 1.0))
        assert r.total_mass() == 0.0
        assert r.num_cells == 0

    def test_child_additivity(self, ball8):
        parent = wk.cube_of([0.3, 0.3, 0.3], 0)
        kids = parent.children()
        total_parent = wk.restrict(ball8, parent).total_mass()
        total_kids = math.fsum(wk.restrict(ball8, k).total_mass() for k in kids)
        assert total_kids == pytest.approx(total_parent, rel=1e-14)

    def test_ball_restriction_matches_ball_mass(self, ball8):
        b = wk.Ball((0.2, 0.1, -0.3), 0.6)
        r = wk.restrict(ball8, b)
        assert r.total_mass() == pytest.approx(
            wk.ball_mass(ball8, b.center, b.radius), rel=1e-14)


class TestCubeMass:
    def test_superset_cube(self):
        m = wk.build_grid_measure(wk.UniformBall((0.5, 0.5, 0.5), 0.4, 2.0),
                                  wk.GridSpec(8, ((0.0, 1.0),) * 3), subsamples=2)
        q = wk.DyadicCube(0, (0, 0, 0))   # [0,1)^3 contains the support
        assert wk.cube_mass(m, q) == m.total_mass()

    def test_partition_of_unity(self, ball8):
        total = ball8.total_mass()
        for j in (0, 1, 2):
            k = np.floor(ball8.atom_positions * 2.0 ** j).astype(int)
            cubes = {tuple(row) for row in k}
            s = math.fsum(wk.cube_mass(ball8, wk.DyadicCube(j, c)) for c in cubes)
            assert s == pytest.approx(total, rel=1e-13)
            # exact partition in rational arithmetic: every atom in exactly one
            # cube, so the per-cube rational sums reassemble the rational total
            per_cube = [sum((Fraction(float(w))
                             for w, row in zip(ball8.atom_weights, k)
                             if tuple(row) == c), Fraction(0)) for c in cubes]
            assert sum(per_cube, Fraction(0)) == sum(
                (Fraction(float(w)) for w in ball8.atom_weights), Fraction(0))

    def test_children_sum_to_parent(self, ball8):
        parent = wk.cube_of([-0.4, 0.2, 0.1], 1)
        kids_sum = math.fsum(wk.cube_mass(ball8, c) for c in parent.children())
        assert kids_sum == pytest.approx(wk.cube_mass(ball8, parent), rel=1e-13)

    def test_uniform_density_spot_value(self):
        # uniform density 1 on [0,1)^3: level-j cube mass ~ 2^(-3j)
        grid = wk.GridSpec(16, ((0.0, 1.0),) * 3)
        centers, side = grid.centers()
        m = wk.GridMeasure(3, side, 2, centers, np.full(centers.shape[0], side ** 3))
        q = wk.DyadicCube(2, (1, 2, 3))
        got = wk.cube_mass(m, q)
        brute = brute_ball_mass(m, [0, 0, 0], 100.0)  # sanity: total mass 1
        assert brute == pytest.approx(1.0, rel=1e-12)
        assert got == pytest.approx(2.0 ** -6, rel=1e-12)


class TestFileFormat:
    def test_round_trip_bit_identical(self, tmp_path, ball8):
        path = tmp_path / "m.csv"
        wk.save_measure(ball8, path)
        back = wk.load_measure(path)
        assert np.array_equal(back.cell_centers, ball8.cell_centers)
        assert np.array_equal(back.cell_masses, ball8.cell_masses)
        assert np.array_equal(back.atom_positions, ball8.atom_positions)
        assert back.side == ball8.side
        assert back.subsample == ball8.subsample

    def test_header_required(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("nope\n1,2,3\n")
        with pytest.raises(ValidationError):
            wk.load_measure(path)

    def test_negative_mass_rejected(self, tmp_path):
        path = tmp_path / "neg.csv"
        path.write_text("dim,side,subsample\n1,0.5,1\n0.25,-1.0\n")
        with pytest.raises(ValidationError):
            wk.load_measure(path)


@settings(max_examples=60, deadline=None)
@given(x=st.tuples(st.floats(-2, 2), st.floats(-2, 2), st.floats(-2, 2)),
       rho=st.floats(0, 4))
def test_profile_interpolation_property(x, rho):
    m = _shared_measure()
    prof = wk.radial_profile(m, np.array(x))
    assert prof.mass_at(rho) == pytest.approx(
        brute_ball_mass(m, np.array(x), rho), rel=1e-12, abs=1e-15)


def _shared_measure(_cache={}):
    if "m" not in _cache:
        _cache["m"] = wk.build_grid_measure(
            wk.RandomCells(13, BOX3, fill=0.3), wk.GridSpec(4, BOX3), subsamples=2)
    return _cache["m"]
