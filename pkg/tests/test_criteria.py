import math

import numpy as np
import pytest

import wolffkit as wk
from wolffkit import ValidationError
from conftest import random_measure_2d, random_measure_3d

BOX3 = ((-1.0, 1.0),) * 3
BOX2 = ((-1.0, 1.0),) * 2


@pytest.fixture(scope="module")
def lr_setup(ball8, prm_std):
    probes, vol = wk.make_probe_grid(((-1.5, 1.5),) * 3, 3)
    radii = wk.log_radius_grid(ball8.side, 4.0 * 2.0 * ball8.support_radius(),
                               per_decade=6)
    kt = wk.build_kappa_table(ball8, prm_std, wk.ball_grid(probes, radii))
    return kt, probes, vol


class TestLrExistence:
    def test_threshold_dichotomy(self, ball8, prm_std, lr_setup):
        kt, probes, vol = lr_setup
        assert prm_std.lr_threshold == 3.0
        below = wk.lr_existence(ball8, prm_std, 2.0, kt, probes, vol)
        at = wk.lr_existence(ball8, prm_std, 3.0, kt, probes, vol)
        above = wk.lr_existence(ball8, prm_std, 3.5, kt, probes, vol)
        assert below.verdict == "TrivialOnly"
        assert at.verdict == "TrivialOnly"
        assert above.verdict == "Holds"
        assert math.isfinite(above.constants["integral"])

    def test_flips_at_machine_step(self, ball8, prm_std, lr_setup):
        kt, probes, vol = lr_setup
        r_plus = float(np.nextafter(3.0, 4.0))
        rep = wk.lr_existence(ball8, prm_std, r_plus, kt, probes, vol)
        assert rep.verdict == "Holds"

    def test_zero_measure(self, empty3, prm_std):
        rep = wk.lr_existence(empty3, prm_std, 4.0, None)
        assert rep.verdict == "TrivialOnly"
        assert rep.constants["integral"] == 0.0

    def test_non_integrable_kernel(self, ball8):
        prm = wk.Params(3, 1.5, 2.0, 0.5)
        rep = wk.lr_existence(ball8, prm, 4.0, None)
        assert rep.verdict == "TrivialOnly"

    def test_scaling_covariance(self, ball8, prm_std, lr_setup):
        kt, probes, vol = lr_setup
        r = 4.0
        base = wk.lr_existence(ball8, prm_std, r, kt, probes, vol)
        radii = wk.log_radius_grid(ball8.side, 4.0 * 2.0 * ball8.support_radius(),
                                   per_decade=6)
        kt2 = wk.build_kappa_table(ball8.scaled(2.0), prm_std,
                                   wk.ball_grid(probes, radii))
        scaled = wk.lr_existence(ball8.scaled(2.0), prm_std, r, kt2, probes, vol)
        expo = r / (prm_std.p - 1.0 - prm_std.q)
        assert scaled.constants["integral"] == pytest.approx(
            2.0 ** expo * base.constants["integral"], rel=1e-8)


class TestLrLocalExistence:
    def test_zero_measure(self, empty3, prm_std):
        rep = wk.lr_local_existence(empty3, prm_std, 4.0, 1.0, None)
        assert rep.verdict == "Holds"
        assert rep.constants["integral"] == 0.0

    def test_below_threshold_needs_only_tails(self, ball8, prm_std, lr_setup):
        kt, probes, vol = lr_setup
        rep = wk.lr_local_existence(ball8, prm_std, 2.0, 1.0, kt)
        assert rep.verdict == "Holds"
        assert math.isfinite(rep.constants["mass_tail"])
        assert math.isfinite(rep.constants["kappa_tail"])

    def test_above_threshold_records_local_value(self, ball8, prm_std, lr_setup):
        kt, probes, vol = lr_setup
        rep = wk.lr_local_existence(ball8, prm_std, 4.0, 1.0, kt, probes, vol)
        assert rep.verdict == "Holds"
        assert math.isfinite(rep.constants["local_integral"])

    def test_diverging_mass_tail(self, ball8):
        prm = wk.Params(3, 1.5, 2.0, 0.5)
        rep = wk.lr_local_existence(ball8, prm, 4.0, 1.0, None)
        assert rep.verdict == "TrivialOnly"


class TestBmoCriteria:
    def test_zero_measure(self, empty3, prm_std):
        rep = wk.bmo_criteria(empty3, prm_std, None, [])
        assert rep.constants == {"C1": 0.0, "C2": 0.0, "C3": 0.0}

    def test_standard_instance_finite(self, ball8, prm_std, kt_ball8):
        kt, regions, probes, vol = kt_ball8
        rep = wk.bmo_criteria(ball8, prm_std, kt, regions)
        assert rep.verdict == "Holds"
        for key in ("C1", "C2", "C3"):
            assert 0 < rep.constants[key] < math.inf

    def test_c3_covariance_exact(self, ball8, prm_std, kt_ball8):
        kt, regions, probes, vol = kt_ball8
        base = wk.bmo_criteria(ball8, prm_std, kt, regions)
        radii = kt.radius_grid(probes[0])
        kt2 = wk.build_kappa_table(ball8.scaled(2.0), prm_std,
                                   wk.ball_grid(probes, radii),
                                   lb_probes=probes)
        regions2 = wk.ball_grid(probes, radii)
        scaled = wk.bmo_criteria(ball8.scaled(2.0), prm_std, kt2, regions2)
        factor = 2.0 ** prm_std.solution_exponent   # (p-1)/(p-1-q) = 2 -> 4x
        assert scaled.constants["C3"] == pytest.approx(
            factor * base.constants["C3"], rel=1e-10)
        assert scaled.constants["C1"] == pytest.approx(
            factor * base.constants["C1"], rel=1e-6)
        assert scaled.constants["C2"] == pytest.approx(
            factor * base.constants["C2"], rel=1e-6)

    def test_sample_refinement_stability(self, ball8, prm_std):
        # the "for all balls" sup is evaluated over a sampled family; the
        # honest surrogate for uniformity is stability when the family is
        # refined.  Doubling the radius density keeps the coarse radii as an
        # exact subset, so each sup can only grow; stability bounds the growth.
        probes, _ = wk.make_probe_grid(((-0.75, 0.75),) * 3, 3)
        vals = {}
        for level, per_decade in {"coarse": 8, "fine": 16}.items():
            radii = wk.log_radius_grid(0.25, 8.0, per_decade=per_decade)
            regions = wk.ball_grid(probes, radii)
            kt = wk.build_kappa_table(ball8, prm_std, regions)
            vals[level] = wk.bmo_criteria(ball8, prm_std, kt, regions).constants
        for key in ("C1", "C2", "C3"):
            assert vals["fine"][key] >= vals["coarse"][key] * (1 - 1e-12)
            drift = (vals["fine"][key] - vals["coarse"][key]) / vals["coarse"][key]
            assert drift < 0.02, (key, vals)


class TestBmoWolff:
    def test_zero_measure(self, empty3, prm_std):
        rep = wk.bmo_wolff_criterion(empty3, prm_std, [])
        assert rep.constants["C"] == 0.0

    def test_spot_value_oracle(self, ball8, prm_std):
        # brute-force recount of the pairing over one ball
        b = wk.Ball((0.0, 0.0, 0.0), 0.7)
        rep = wk.bmo_wolff_criterion(ball8, prm_std, [b])
        acc = 0.0
        for pos, w in zip(ball8.atom_positions, ball8.atom_weights):
            if math.dist(pos, b.center) <= b.radius:
                acc += float(w) * wk.wolff(ball8, prm_std, pos) ** prm_std.kappa_power
        want = acc / b.radius ** (prm_std.n - prm_std.alpha * prm_std.p)
        assert rep.constants["C"] == pytest.approx(want, rel=1e-10)

    def test_equivalent_to_mass_form_on_family(self, prm_2d):
        # both the potential-pairing and the mass-tail constants stay finite
        # together across random instances (equivalence up to constants)
        ratios = []
        for seed in range(8):
            m = random_measure_2d(seed, cells=6)
            if m.is_empty():
                continue
            radii = wk.log_radius_grid(m.side, 6.0, per_decade=6)
            probes = np.array([[0.0, 0.0]])
            regions = wk.ball_grid(probes, radii)
            kt = wk.build_kappa_table(m, prm_2d, regions)
            c3 = wk.bmo_criteria(m, prm_2d, kt, regions).constants["C3"]
            cw = wk.bmo_wolff_criterion(m, prm_2d, regions).constants["C"]
            assert math.isfinite(c3) and math.isfinite(cw)
            if c3 > 0:
                ratios.append(cw / c3)
        ratios = np.array(ratios)
        assert ratios.size >= 5
        assert ratios.max() / ratios.min() < 25.0


class TestCapacity:
    def test_zero_measure(self, empty3, prm_std):
        rep = wk.capacity_ball_criterion(empty3, prm_std, [], "cap-p")
        assert rep.constants["C"] == 0.0

    def test_p_at_least_n_rejected(self, ball8):
        prm = wk.Params(3, 0.5, 3.5, 1.0)
        with pytest.raises(ValidationError):
            wk.capacity_ball_criterion(ball8, prm, [], "cap-p")

    def test_zero_measure_uses_p_below_n(self, prm_std):
        m = wk.build_grid_measure(wk.Empty(3))
        rep = wk.capacity_ball_criterion(m, prm_std, [], "class1")
        assert rep.constants["C"] == 0.0

    def test_class1_never_weaker_pattern(self):
        # across the sampled family: whenever class1 holds (stable under
        # refinement), cap-p holds too; never the converse failure pattern
        prm = wk.Params(2, 0.5, 1.75, 0.375)   # needs p < n
        for seed in range(6):
            coarse = random_measure_2d(seed, cells=6)
            fine = random_measure_2d(seed, cells=6)
            if coarse.is_empty():
                continue
            balls = wk.ball_grid(np.array([[0.0, 0.0]]),
                                 wk.log_radius_grid(coarse.side, 4.0, 6))
            cap = wk.capacity_ball_criterion(coarse, prm, balls, "cap-p",
                                             refined=fine)
            cl1 = wk.capacity_ball_criterion(coarse, prm, balls, "class1",
                                             refined=fine)
            assert not (cap.verdict == "Fails" and cl1.verdict == "Holds")

    def test_concentrated_measure_blows_up(self):
        # one tiny cell holding all the mass: the sup grows under refinement
        prm = wk.Params(2, 0.5, 1.75, 0.375)

        def concentrated(cells):
            grid = wk.GridSpec(cells, BOX2)
            centers, side = grid.centers()
            keep = np.argmin(np.linalg.norm(centers - 0.001, axis=1))
            return wk.GridMeasure(2, side, 1, centers[keep:keep + 1], [1.0])
        coarse = concentrated(8)
        fine = concentrated(32)
        balls = wk.ball_grid(np.array([[0.0, 0.0]]),
                             wk.log_radius_grid(fine.side, 4.0, 6))
        rep = wk.capacity_ball_criterion(coarse, prm, balls, "cap-p",
                                         refined=fine, growth_limit=2.0)
        assert rep.verdict == "Fails"
        assert rep.constants["growth"] > 2.0


class TestWolffInequality:
    def test_zero_measure(self, empty3, prm_std):
        rep = wk.verify_wolff_inequality(empty3, prm_std, wk.QuadratureSpec(512, 0))
        assert rep.constants["energy"] == 0.0

    def test_standard_instance(self, prm_std):
        m = wk.build_grid_measure(wk.UniformBall((0, 0, 0), 1.0, 1.0),
                                  wk.GridSpec(8, BOX3), subsamples=2)
        rep = wk.verify_wolff_inequality(m, prm_std, wk.QuadratureSpec(4096, 5))
        assert rep.constants["fubini_within_3se"]
        assert rep.constants["composed_over_radial"] > 0
        assert math.isfinite(rep.constants["energy_over_radial"])

    def test_ratio_band_across_instances(self, prm_std):
        ratios = []
        for seed in range(10):
            m = random_measure_3d(seed, cells=5, mass=1.0)
            if m.is_empty():
                continue
            rep = wk.verify_wolff_inequality(m, prm_std,
                                             wk.QuadratureSpec(2048, 100 + seed))
            ratios.append(rep.constants["energy_over_radial"])
        ratios = np.array(ratios)
        assert ratios.size >= 8
        assert ratios.max() / ratios.min() < 3.0


@pytest.fixture(scope="module")
def cube_setup(prm_2d):
    m = wk.build_grid_measure(wk.UniformBall((0.5, 0.5), 0.35, 1.0),
                              wk.GridSpec(8, ((0.0, 1.0),) * 2), subsamples=1)
    kt = wk.build_kappa_table(m, prm_2d, wk.dyadic_cover(m, 0, 3))
    return m, kt


class TestEnhancedWolff:
    def test_zero_measure(self, prm_2d):
        m = wk.build_grid_measure(wk.Empty(2))
        rep = wk.verify_enhanced_wolff(m, prm_2d, 3.0, None)
        assert rep.constants["sum_integral"] == 0.0
        assert rep.constants["direction_holds"]

    def test_direction_and_ratio(self, cube_setup, prm_2d):
        m, kt = cube_setup
        rep = wk.verify_enhanced_wolff(m, prm_2d, 3.0, kt)
        assert rep.constants["direction_holds"]
        assert rep.constants["sup_integral"] <= rep.constants["sum_integral"]
        assert rep.constants["ratio"] > 1.0

    def test_threshold_regime_rejected(self, cube_setup, prm_2d):
        m, kt = cube_setup
        with pytest.raises(ValidationError):
            wk.verify_enhanced_wolff(m, prm_2d, 2.0, kt)

    def test_refinement_stability(self, cube_setup, prm_2d):
        m, kt = cube_setup
        base = wk.verify_enhanced_wolff(m, prm_2d, 3.0, kt).constants["ratio"]
        m2 = wk.build_grid_measure(wk.UniformBall((0.5, 0.5), 0.35, 1.0),
                                   wk.GridSpec(16, ((0.0, 1.0),) * 2), subsamples=1)
        kt2 = wk.build_kappa_table(m2, prm_2d, wk.dyadic_cover(m2, 0, 4))
        fine = wk.verify_enhanced_wolff(m2, prm_2d, 3.0, kt2).constants["ratio"]
        assert abs(fine - base) / base < 0.10

    def test_localized_variant(self, cube_setup, prm_2d):
        m, kt = cube_setup
        root = wk.DyadicCube(1, (0, 0))
        rep = wk.verify_enhanced_wolff(m, prm_2d, 3.0, kt, root=root)
        assert rep.constants["direction_holds"]

    def test_scaling_covariance(self, cube_setup, prm_2d):
        m, kt = cube_setup
        base = wk.verify_enhanced_wolff(m, prm_2d, 3.0, kt)
        m2 = m.scaled(2.0)
        kt2 = wk.build_kappa_table(m2, prm_2d, wk.dyadic_cover(m2, 0, 3))
        scaled = wk.verify_enhanced_wolff(m2, prm_2d, 3.0, kt2)
        expo = 3.0 / (prm_2d.p - 1.0 - prm_2d.q)
        assert scaled.constants["sum_integral"] == pytest.approx(
            2.0 ** expo * base.constants["sum_integral"], rel=1e-8)
        assert scaled.constants["ratio"] == pytest.approx(
            base.constants["ratio"], rel=1e-8)

    def test_random_family_direction(self, prm_2d):
        for seed in range(6):
            m = wk.build_grid_measure(
                wk.RandomCells(seed, ((0.0, 1.0),) * 2, fill=0.4),
                wk.GridSpec(8, ((0.0, 1.0),) * 2), subsamples=1)
            if m.is_empty():
                continue
            kt = wk.build_kappa_table(m, prm_2d, wk.dyadic_cover(m, 0, 3))
            rep = wk.verify_enhanced_wolff(m, prm_2d, 3.0, kt)
            assert rep.constants["direction_holds"]
