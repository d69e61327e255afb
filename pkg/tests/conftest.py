import numpy as np
import pytest

import wolffkit as wk

BOX3 = ((-1.0, 1.0),) * 3
BOX2 = ((-1.0, 1.0),) * 2


@pytest.fixture(scope="session")
def prm_std():
    return wk.Params(3, 1.0, 2.0, 0.5)


@pytest.fixture(scope="session")
def prm_2d():
    return wk.Params(2, 0.5, 2.0, 0.5)


@pytest.fixture(scope="session")
def ball8(prm_std):
    return wk.build_grid_measure(wk.UniformBall((0.0, 0.0, 0.0), 1.0, 1.0),
                                 wk.GridSpec(8, BOX3), subsamples=1)


@pytest.fixture(scope="session")
def ball16(prm_std):
    return wk.build_grid_measure(wk.UniformBall((0.0, 0.0, 0.0), 1.0, 1.0),
                                 wk.GridSpec(16, BOX3), subsamples=1)


@pytest.fixture(scope="session")
def ball16_s8():
    return wk.build_grid_measure(wk.UniformBall((0.0, 0.0, 0.0), 1.0, 1.0),
                                 wk.GridSpec(16, BOX3), subsamples=8)


@pytest.fixture(scope="session")
def empty3():
    return wk.build_grid_measure(wk.Empty(3))


@pytest.fixture(scope="session")
def kt_ball8(ball8, prm_std):
    """Ball table on a 3x3x3 probe grid for the small standard instance."""
    probes, vol = wk.make_probe_grid(BOX3, 3)
    radii = wk.log_radius_grid(ball8.side, 4.0 * 2.0 * ball8.support_radius(),
                               per_decade=8)
    regions = wk.ball_grid(probes, radii)
    kt = wk.build_kappa_table(ball8, prm_std, regions,
                              lb_probes=probes)
    return kt, regions, probes, vol


def random_measure_2d(seed, cells=8, mass=None):
    return wk.build_grid_measure(wk.RandomCells(seed, BOX2, fill=0.3, mass=mass),
                                 wk.GridSpec(cells, BOX2), subsamples=1)


def random_measure_3d(seed, cells=6, mass=None):
    return wk.build_grid_measure(wk.RandomCells(seed, BOX3, fill=0.2, mass=mass),
                                 wk.GridSpec(cells, BOX3), subsamples=1)
