import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mtled.cloud import build_cloud
from mtled.errors import InadmissibleSupportError, SingularMomentMatrixError
from mtled.mmls import (
    MmlsConfig,
    MmlsEvaluator,
    mls_shape_oracle,
    mmls_shape,
    quartic_weight,
    quartic_weight_deriv,
)

SCAFFOLD = np.array(
    [[99.0, 99, 99], [100.0, 99, 99], [99.0, 100, 99], [99.0, 99, 100]]
)


def tet_cloud(nodes, density=1000.0):
    nodes = np.asarray(nodes, dtype=float)
    n = len(nodes)
    return build_cloud(
        np.vstack([nodes, SCAFFOLD]), np.array([[n, n + 1, n + 2, n + 3]]), density
    )


def grid_cloud(n=6, spacing=0.2):
    nodes = np.array(list(itertools.product(range(n), repeat=3)), float) * spacing
    return tet_cloud(nodes), nodes


def jittered_cloud(rng, n=6, spacing=0.2):
    nodes = np.array(list(itertools.product(range(n), repeat=3)), float) * spacing
    nodes += rng.uniform(-0.25, 0.25, nodes.shape) * spacing
    return tet_cloud(nodes), nodes


def random_cloud(rng, count=216, extent=1.0):
    nodes = rng.uniform(0, extent, (count, 3))
    return tet_cloud(nodes), nodes


# -- weight function -------------------------------------------------------


def test_weight_endpoint_values():
    assert quartic_weight(np.array([0.0]))[0] == 1.0
    assert quartic_weight(np.array([1.0]))[0] == 0.0
    # direct evaluation of 1 - 6d^2 + 8d^3 - 3d^4 at d = 1/2
    assert quartic_weight(np.array([0.5]))[0] == pytest.approx(0.3125, abs=1e-15)


def test_weight_slope_vanishes_at_both_ends():
    assert quartic_weight_deriv(np.array([0.0]))[0] == 0.0
    assert quartic_weight_deriv(np.array([1.0]))[0] == pytest.approx(0.0, abs=1e-15)


def test_weight_monotone_decreasing_inside():
    d = np.linspace(0.0, 1.0, 1001)
    w = quartic_weight(d)
    assert (np.diff(w) <= 0.0).all()
    assert (w >= 0.0).all() and (w <= 1.0).all()


def test_weight_derivative_matches_finite_differences():
    d = np.linspace(0.01, 0.99, 199)
    h = 1e-7
    fd = (quartic_weight(d + h) - quartic_weight(d - h)) / (2 * h)
    np.testing.assert_allclose(quartic_weight_deriv(d), fd, atol=1e-6)


@settings(max_examples=200, deadline=None)
@given(st.floats(0.0, 1.0))
def test_weight_bounded_on_unit_interval(d):
    w = float(quartic_weight(np.array([d]))[0])
    assert 0.0 <= w <= 1.0


# -- consistency: partition of unity and field reproduction -----------------


def reproduction_errors(cloud, nodes, radius, points):
    ev = MmlsEvaluator(cloud, MmlsConfig(radius=radius))
    lin = 2.0 * nodes[:, 0] - 3.0 * nodes[:, 1] + 0.5 * nodes[:, 2] + 1.0
    lin_all = np.concatenate([lin, np.zeros(4)])  # scaffold values unused
    pu = lr = 0.0
    for x in points:
        sh = ev.evaluate(x)
        pu = max(pu, abs(sh.phi.sum() - 1.0))
        exact = 2.0 * x[0] - 3.0 * x[1] + 0.5 * x[2] + 1.0
        lr = max(lr, abs(sh.phi @ lin_all[sh.node_indices] - exact) / abs(exact))
    return pu, lr


def test_partition_of_unity_and_linear_fields_regular(rng):
    cloud, nodes = grid_cloud()
    pts = rng.uniform(0.1, 0.9, (100, 3))
    pu, lr = reproduction_errors(cloud, nodes, radius=0.56, points=pts)
    assert pu < 1e-12
    assert lr < 1e-12


def test_partition_of_unity_and_linear_fields_jittered(rng):
    cloud, nodes = jittered_cloud(rng)
    pts = rng.uniform(0.15, 0.85, (100, 3))
    pu, lr = reproduction_errors(cloud, nodes, radius=0.6, points=pts)
    assert pu < 1e-11
    assert lr < 1e-11


def test_partition_of_unity_and_linear_fields_random(rng):
    cloud, nodes = random_cloud(rng)
    pts = rng.uniform(0.2, 0.8, (100, 3))
    pu, lr = reproduction_errors(cloud, nodes, radius=0.42, points=pts)
    assert pu < 1e-10
    assert lr < 1e-9


def test_quadratic_fields_carry_the_penalty_error(rng):
    # second-degree coefficients are the regularized ones, so quadratics
    # come back only to ~mu-level accuracy -- small but deliberately nonzero
    cloud, nodes = grid_cloud()
    ev = MmlsEvaluator(cloud, MmlsConfig(radius=0.56))
    vals = 1.3 * nodes[:, 0] ** 2 - 0.7 * nodes[:, 1] * nodes[:, 2] + 0.5
    vals = np.concatenate([vals, np.zeros(4)])
    worst = 0.0
    for x in rng.uniform(0.2, 0.8, (40, 3)):
        sh = ev.evaluate(x)
        exact = 1.3 * x[0] ** 2 - 0.7 * x[1] * x[2] + 0.5
        worst = max(worst, abs(sh.phi @ vals[sh.node_indices] - exact) / abs(exact))
    assert worst < 1e-4
    assert worst > 1e-10


def test_derivatives_match_finite_differences(rng):
    cloud, nodes = grid_cloud()
    radius = 0.56
    ev = MmlsEvaluator(cloud, MmlsConfig(radius=radius))
    step = 1e-6 * radius
    vals = np.sin(3 * nodes[:, 0]) + nodes[:, 1] * nodes[:, 2]
    vals = np.concatenate([vals, np.zeros(4)])
    for x in rng.uniform(0.2, 0.8, (100, 3)):
        sh = ev.evaluate(x)
        grad = sh.dphi @ vals[sh.node_indices]
        for k in range(3):
            xp, xm = x.copy(), x.copy()
            xp[k] += step
            xm[k] -= step
            a = ev.evaluate(xp)
            b = ev.evaluate(xm)
            fd = (
                a.phi @ vals[a.node_indices] - b.phi @ vals[b.node_indices]
            ) / (2 * step)
            assert grad[k] == pytest.approx(fd, rel=1e-4, abs=1e-8)


def test_derivative_rows_sum_to_zero(rng):
    cloud, _ = grid_cloud()
    radius = 0.56
    ev = MmlsEvaluator(cloud, MmlsConfig(radius=radius))
    for x in rng.uniform(0.1, 0.9, (50, 3)):
        sh = ev.evaluate(x)
        assert np.abs(sh.dphi.sum(axis=1)).max() < 1e-8 / radius


def test_penalized_and_classical_agree_on_rich_supports(rng):
    cloud, _ = grid_cloud()
    radius = 0.56
    for x in rng.uniform(0.2, 0.8, (20, 3)):
        a = mmls_shape(cloud, x, MmlsConfig(radius=radius))
        b = mls_shape_oracle(cloud, x, radius)
        np.testing.assert_array_equal(a.node_indices, b.node_indices)
        np.testing.assert_allclose(a.phi, b.phi, atol=1e-5)
        np.testing.assert_allclose(a.dphi, b.dphi, atol=1e-5 / radius)


def test_batch_evaluation_matches_pointwise(rng):
    cloud, _ = grid_cloud()
    ev = MmlsEvaluator(cloud, MmlsConfig(radius=0.56))
    pts = rng.uniform(0.1, 0.9, (30, 3))
    batch = ev.evaluate_many(pts)
    for i, x in enumerate(pts):
        one = ev.evaluate(x)
        single = batch.single(i)
        np.testing.assert_array_equal(single.node_indices, one.node_indices)
        np.testing.assert_allclose(single.phi, one.phi, rtol=0, atol=1e-14)
        np.testing.assert_allclose(single.dphi, one.dphi, rtol=0, atol=1e-11)


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 2**31))
def test_partition_of_unity_random_clouds(seed):
    r = np.random.default_rng(seed)
    nodes = r.uniform(0, 1, (150, 3))
    cloud = tet_cloud(nodes)
    x = r.uniform(0.35, 0.65, 3)
    sh = mmls_shape(cloud, x, MmlsConfig(radius=0.45))
    assert abs(sh.phi.sum() - 1.0) < 1e-9
    assert np.isfinite(sh.dphi).all()


# -- failure modes -----------------------------------------------------------


def test_empty_support_raises():
    cloud, nodes = grid_cloud()
    with pytest.raises(InadmissibleSupportError):
        mmls_shape(cloud, [50.0, 50.0, 50.0], MmlsConfig(radius=0.3))


def test_fully_coplanar_supports_fail_for_both_variants():
    # with every node in one plane not even the penalized system can
    # produce an out-of-plane gradient: the linear block is singular and
    # only second-degree coefficients are regularized
    xy = np.random.default_rng(0).uniform(0, 1, (12, 2))
    nodes = np.column_stack([xy, np.zeros(12)])
    cloud = tet_cloud(nodes)
    x = [0.5, 0.5, 0.0]
    with pytest.raises(SingularMomentMatrixError):
        mls_shape_oracle(cloud, x, 2.0)
    with pytest.raises(SingularMomentMatrixError):
        mmls_shape(cloud, x, MmlsConfig(radius=2.0))


def test_condition_limit_is_enforced():
    cloud, _ = grid_cloud()
    with pytest.raises(SingularMomentMatrixError):
        mmls_shape(cloud, [0.5, 0.5, 0.5], MmlsConfig(radius=0.56, cond_limit=1.0))


def test_classical_oracle_fails_on_deficient_support(rng):
    nodes = rng.uniform(0, 1, (6, 3))  # fewer nodes than basis functions
    cloud = tet_cloud(nodes)
    x = nodes.mean(axis=0)
    with pytest.raises(SingularMomentMatrixError):
        mls_shape_oracle(cloud, x, 2.0)
    sh = mmls_shape(cloud, x, MmlsConfig(radius=2.0))
    assert abs(sh.phi.sum() - 1.0) < 1e-9
