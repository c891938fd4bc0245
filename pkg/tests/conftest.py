"""Shared fixtures.

The expensive benchmark runs (coarse cube fixed/adaptive, staged cylinder)
are session-scoped so every test that asserts on them shares one solve.
Wall times are measured around precompute+solve only, with the default
single worker, because several acceptance checks bound the runtime.
"""

import time
from types import SimpleNamespace

import numpy as np
import pytest

from mtled.benchmarks import (
    cube_reference,
    force_depth_curve,
    make_cube_model,
    make_cylinder_model,
    staged_indentation,
)
from mtled.metrics import error_report
from mtled.solver import precompute, solve


def timed_cube_run(tau=None):
    model, config = make_cube_model(tau=tau)
    t0 = time.perf_counter()
    pre = precompute(model, config)
    res = solve(model, config, precomputed=pre)
    wall = time.perf_counter() - t0
    u_ref, lateral = cube_reference(model)
    rep = error_report(res.u, u_ref)
    return SimpleNamespace(
        model=model,
        config=config,
        pre=pre,
        res=res,
        rep=rep,
        u_ref=u_ref,
        lateral=lateral,
        wall=wall,
    )


@pytest.fixture(scope="session")
def cube_fixed():
    """Coarse cube, 20% compression, fixed 4-point cell rule."""
    return timed_cube_run(tau=None)


@pytest.fixture(scope="session")
def cube_adaptive():
    """Coarse cube with adaptively refined integration (tau = 0.01)."""
    return timed_cube_run(tau=0.01)


@pytest.fixture(scope="session")
def cylinder_run():
    """Staged indentation of the cylinder benchmark to 70% of height."""
    model, config = make_cylinder_model()
    t0 = time.perf_counter()
    pre, stages = staged_indentation(model, config, n_stages=7)
    wall = time.perf_counter() - t0
    curve = force_depth_curve(model, stages)
    return SimpleNamespace(
        model=model, config=config, pre=pre, stages=stages, curve=curve, wall=wall
    )


@pytest.fixture(scope="session")
def small_cube():
    """125-node cube that solves in a couple of seconds; for plumbing tests."""
    model, config = make_cube_model((5, 5, 5), radius_factor=1.75)
    pre = precompute(model, config)
    res = solve(model, config, precomputed=pre)
    return SimpleNamespace(model=model, config=config, pre=pre, res=res)


@pytest.fixture
def rng():
    return np.random.default_rng(20260814)
