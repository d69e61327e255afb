"""Nonlinear radial potentials, sublinear integral equations, and intrinsic
embedding constants on grid measures."""

__version__ = "0.1.0"

from .errors import (Divergent, IncompleteTable, NonIntegrableKernel,
                     ValidationError, WolffkitError)
from .measure import (Ball, Empty, FromFile, GridMeasure, GridSpec, Params,
                      RadialMassProfile, RadialPower, RandomCells, UniformBall,
                      ball_mass, build_grid_measure, cube_mass, load_measure,
                      radial_profile, restrict, save_measure, sphere_area,
                      unit_ball_volume)
from .dyadic import (DyadicCube, TailReport, cube_of, dyadic_cover,
                     dyadic_intrinsic, dyadic_tail_test, dyadic_wolff,
                     parse_cube_id)
from .potentials import (EnergyReport, Field, FinitenessReport,
                         PotentialEstimate, QuadratureSpec, WolffEvaluator,
                         energy, finiteness_test, havin_mazya, riesz,
                         riesz_smooth, wolff, wolff_field)
from .solver import (RatioReport, SolveReport, apply_T, picard_iterate,
                     solve_minimal, verify_two_sided)
from .kappa import (KappaEntry, KappaTable, ball_grid, build_kappa_table,
                    intrinsic_potential, kappa_est, kappa_lower_dirac,
                    load_kappa_table, log_radius_grid, low_k_domination,
                    save_kappa_table, sup_functional)
from .criteria import (CriteriaReport, bmo_criteria, bmo_wolff_criterion,
                       capacity_ball_criterion, lr_existence,
                       lr_local_existence, make_probe_grid,
                       verify_enhanced_wolff, verify_wolff_inequality)
