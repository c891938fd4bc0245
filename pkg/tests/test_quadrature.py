import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mtled.cloud import build_cloud
from mtled.quadrature import (
    REF_VOLUME,
    AdaptiveConfig,
    adaptive_integrate,
    fixed_integration_set,
    make_rule,
    subdivide_tet,
)


def monomial_exact(a, b, c):
    """Integral of x^a y^b z^c over the reference tetrahedron."""
    return (
        math.factorial(a)
        * math.factorial(b)
        * math.factorial(c)
        / math.factorial(a + b + c + 3)
    )


def rule_monomial(rule, a, b, c):
    x, y, z = rule.bary[:, 1], rule.bary[:, 2], rule.bary[:, 3]
    return float(np.dot(rule.weights, x**a * y**b * z**c))


EXPECTED_RULES = {1: (1, 1), 2: (4, 2), 3: (8, 3), 4: (27, 5), 5: (27, 5), 6: (64, 7)}


@pytest.mark.parametrize("order", sorted(EXPECTED_RULES))
def test_rule_inventory(order):
    rule = make_rule(order)
    npoints, degree = EXPECTED_RULES[order]
    assert rule.npoints == npoints
    assert rule.degree == degree
    assert (rule.weights > 0).all()
    assert rule.weights.sum() == pytest.approx(REF_VOLUME, rel=1e-14)
    np.testing.assert_allclose(rule.bary.sum(axis=1), 1.0, rtol=0, atol=1e-14)


@pytest.mark.parametrize("order", sorted(EXPECTED_RULES))
def test_rule_degree_exactness(order):
    rule = make_rule(order)
    for total in range(rule.degree + 1):
        for a in range(total + 1):
            for b in range(total - a + 1):
                c = total - a - b
                approx = rule_monomial(rule, a, b, c)
                exact = monomial_exact(a, b, c)
                assert abs(approx - exact) / abs(exact) <= 1e-12


@pytest.mark.parametrize("order", sorted(EXPECTED_RULES))
def test_rule_not_exact_beyond_degree(order):
    # one degree higher must NOT integrate exactly, otherwise the declared
    # degree undersells the rule and the refinement estimates are misranked
    rule = make_rule(order)
    worst = 0.0
    total = rule.degree + 1
    for a in range(total + 1):
        for b in range(total - a + 1):
            c = total - a - b
            exact = monomial_exact(a, b, c)
            worst = max(worst, abs(rule_monomial(rule, a, b, c) - exact) / exact)
    assert worst > 1e-12


@pytest.mark.parametrize("order", [0, -1, 7])
def test_rule_invalid_order(order):
    with pytest.raises(ValueError):
        make_rule(order)


# -- recursive subdivision ---------------------------------------------------

TET = np.array([[0.1, 0.2, -0.3], [1.2, 0.1, 0.0], [0.3, 0.9, 0.2], [0.4, 0.3, 1.1]])


def signed_volume(verts):
    return float(np.linalg.det(verts[1:] - verts[0]) / 6.0)


@pytest.mark.parametrize("scheme", [2, 4, 8])
def test_subdivision_counts_and_volume(scheme):
    children = subdivide_tet(TET, scheme)
    assert len(children) == scheme
    vols = [abs(signed_volume(np.asarray(ch))) for ch in children]
    assert sum(vols) == pytest.approx(abs(signed_volume(TET)), rel=1e-12)
    assert min(vols) > 0


def test_subdivision_invalid_scheme():
    with pytest.raises(ValueError):
        subdivide_tet(TET, 3)


@settings(max_examples=60, deadline=None)
@given(seed=st.integers(0, 2**31), scheme=st.sampled_from([2, 4, 8]))
def test_subdivision_volume_conservation_random(seed, scheme):
    r = np.random.default_rng(seed)
    verts = r.uniform(-1, 1, (4, 3))
    parent = abs(signed_volume(verts))
    if parent < 1e-6:
        return
    vols = [abs(signed_volume(np.asarray(c))) for c in subdivide_tet(verts, scheme)]
    assert math.fsum(vols) == pytest.approx(parent, rel=1e-12)


# -- integration sets over a mesh --------------------------------------------


def kuhn_mesh(n=4, edge=1.0):
    pts = np.array(list(itertools.product(range(n), repeat=3)), float)
    pts *= edge / (n - 1)

    def nid(i, j, k):
        return (i * n + j) * n + k

    cells = []
    for i, j, k in itertools.product(range(n - 1), repeat=3):
        for perm in itertools.permutations(range(3)):
            off = [0, 0, 0]
            verts = [nid(i, j, k)]
            for ax in perm[:2]:
                off[ax] = 1
                verts.append(nid(i + off[0], j + off[1], k + off[2]))
            verts.append(nid(i + 1, j + 1, k + 1))
            cells.append(verts)
    return build_cloud(pts, np.array(cells), 1000.0)


def test_fixed_set_counts_and_volume():
    cloud = kuhn_mesh()
    rule = make_rule(2)
    iset = fixed_integration_set(cloud, rule)
    assert iset.npoints == cloud.n_cells * rule.npoints
    assert iset.total_weight == pytest.approx(cloud.total_volume, rel=1e-12)
    assert (iset.depths == 0).all()
    assert (iset.cells == np.repeat(np.arange(cloud.n_cells), rule.npoints)).all()


def test_fixed_set_integrates_polynomial_exactly():
    # x^2 y is degree 3; the order-3 rule must integrate it exactly over the
    # unit cube tessellation: integral = (1/3)(1/2)(1) = 1/6
    cloud = kuhn_mesh()
    iset = fixed_integration_set(cloud, make_rule(3))
    f = iset.points[:, 0] ** 2 * iset.points[:, 1]
    assert float(np.dot(iset.weights, f)) == pytest.approx(1.0 / 6.0, rel=1e-12)


def test_adaptive_leaves_smooth_integrand_unrefined():
    cloud = kuhn_mesh()

    def smooth(pts):
        return (1.0 + pts[:, 0] + pts[:, 1] * pts[:, 2])[:, None]

    iset = adaptive_integrate(cloud, smooth, AdaptiveConfig(tau=0.05))
    assert int(iset.depths.max()) == 0
    assert iset.npoints == cloud.n_cells * 4
    assert iset.warnings == ()


@pytest.mark.parametrize("scheme", [2, 4, 8])
def test_adaptive_refines_sharp_bump_and_conserves_volume(scheme):
    cloud = kuhn_mesh()
    center = np.array([0.5, 0.5, 0.5])
    width = 0.05

    def bump(pts):
        d2 = np.sum((pts - center) ** 2, axis=1)
        return np.exp(-d2 / (2 * width * width))[:, None]

    iset = adaptive_integrate(
        cloud, bump, AdaptiveConfig(tau=0.05, scheme=scheme, max_depth=4)
    )
    assert int(iset.depths.max()) >= 1
    assert iset.npoints > cloud.n_cells * 4
    rel = abs(iset.total_weight - cloud.total_volume) / cloud.total_volume
    assert rel <= 1e-10


def test_adaptive_zero_integrand_stops_immediately():
    cloud = kuhn_mesh()
    iset = adaptive_integrate(
        cloud, lambda p: np.zeros((len(p), 1)), AdaptiveConfig(tau=1e-6)
    )
    assert int(iset.depths.max()) == 0


def test_adaptive_depth_cap_reports_warnings():
    cloud = kuhn_mesh(n=2)

    def jagged(pts):
        return (np.sign(np.sin(40 * pts[:, 0]) * np.sin(40 * pts[:, 1])) + 1.5)[
            :, None
        ]

    iset = adaptive_integrate(cloud, jagged, AdaptiveConfig(tau=1e-9, max_depth=2))
    assert int(iset.depths.max()) == 2
    assert len(iset.warnings) > 0
    rel = abs(iset.total_weight - cloud.total_volume) / cloud.total_volume
    assert rel <= 1e-10


def test_adaptive_point_count_grows_as_tau_shrinks():
    cloud = kuhn_mesh()
    center = np.array([0.4, 0.55, 0.5])

    def bump(pts):
        d2 = np.sum((pts - center) ** 2, axis=1)
        return np.exp(-d2 / (2 * 0.08 * 0.08))[:, None]

    counts = [
        adaptive_integrate(cloud, bump, AdaptiveConfig(tau=tau)).npoints
        for tau in (0.1, 0.05, 0.01)
    ]
    assert counts[0] <= counts[1] <= counts[2]
    assert counts[2] > counts[0]
