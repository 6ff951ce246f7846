"""Shared fixtures: the benchmark model, certificate, schedules and the
(expensive) full three-variant case study, each built once per session."""

import numpy as np
import pytest

from quadcascade.harness import (ExperimentConfig, compare_variants, prepare)
from quadcascade.outer_model import discretize
from quadcascade.reference import build_rho_schedule, circular_profile
from quadcascade.vehicle import PlantParams

H = 0.05
GAMMA = 0.1
DRAG = np.array([0.26, 0.28, 0.42])
Q_DIAG = np.array([100, 1, 1, 1, 100, 1, 1, 1, 80, 1, 1, 1], dtype=float)
R_DIAG = np.array([0.01, 0.01, 0.1])


@pytest.fixture(scope="session")
def model():
    return discretize(GAMMA, H, DRAG)


@pytest.fixture(scope="session")
def weights():
    return np.diag(Q_DIAG), np.diag(R_DIAG)


@pytest.fixture(scope="session")
def circular_schedule():
    params = PlantParams()
    traj = circular_profile(horizon=25.0)
    return build_rho_schedule(traj, params, delta=1.0, h=H, horizon=26.5,
                              gamma=GAMMA)


@pytest.fixture(scope="session")
def bench_setup():
    """Model + schedule + certificate + reference table for the benchmark
    trajectory (25 s horizon), as the harness builds them."""
    return prepare(ExperimentConfig(outdir="unused"))


@pytest.fixture(scope="session")
def cert(bench_setup):
    return bench_setup.cert


@pytest.fixture(scope="session")
def case_study(tmp_path_factory):
    """Full 25 s comparison of the three controller variants (expensive)."""
    import time
    outdir = tmp_path_factory.mktemp("case_study")
    config = ExperimentConfig(outdir=str(outdir), max_solver_failures=100)
    t0 = time.perf_counter()
    setup = prepare(config)
    results, errors = compare_variants(config, setup)
    wall = time.perf_counter() - t0
    assert not errors, f"variant runs failed: {errors}"
    return {"config": config, "setup": setup, "results": results,
            "outdir": outdir, "wall_time": wall}


@pytest.fixture(scope="session")
def hover_setup():
    config = ExperimentConfig(trajectory="hover", horizon=3.0,
                              p_offset=(0.0, 0.0, 0.0), outdir="unused")
    return prepare(config)
