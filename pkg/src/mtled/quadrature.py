"""Tetrahedral quadrature: fixed rules, subdivision and adaptive refinement.

Background cells only carry integration points — they are never used for
interpolation — so refinement is free to produce badly shaped children.
The adaptive driver compares each cell's integral estimate against the sum
over its subdivided children and recurses while the relative difference
exceeds the tolerance; an accepted cell contributes its own rule points.
"""

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
from scipy.special import roots_jacobi, roots_legendre

from .errors import DegenerateCellError

REF_VOLUME = 1.0 / 6.0

# Fixed edge ordering (ties in longest-edge selection break deterministically).
_EDGES = ((0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3))


@dataclass(frozen=True)
class QuadratureRule:
    """Barycentric rule on the reference tetrahedron.

    Weights sum to the reference volume 1/6; ``degree`` is the advertised
    polynomial exactness.
    """

    bary: np.ndarray     # (q, 4)
    weights: np.ndarray  # (q,)
    degree: int

    def __post_init__(self):
        bary = np.asarray(self.bary, dtype=float).reshape(-1, 4)
        weights = np.asarray(self.weights, dtype=float).ravel()
        object.__setattr__(self, "bary", bary)
        object.__setattr__(self, "weights", weights)
        if bary.shape[0] != weights.shape[0]:
            raise ValueError("points/weights length mismatch")
        if (weights <= 0).any():
            raise ValueError("rule weights must be positive")
        if abs(math.fsum(weights.tolist()) - REF_VOLUME) > 1e-12:
            raise ValueError("rule weights must sum to the reference volume 1/6")

    @property
    def npoints(self):
        return self.bary.shape[0]


def make_rule(order):
    """Quadrature rule exact for polynomials of total degree >= ``order``.

    Order 1 is the centroid rule, order 2 the symmetric 4-point rule; higher
    orders come from a conical (collapsed Gauss-Jacobi) product, which keeps
    every weight positive at any order.
    """
    if order < 1:
        raise ValueError("order must be >= 1")
    if order == 1:
        return QuadratureRule(
            bary=np.full((1, 4), 0.25), weights=np.array([REF_VOLUME]), degree=1
        )
    if order == 2:
        a = (5.0 + 3.0 * math.sqrt(5.0)) / 20.0
        b = (5.0 - math.sqrt(5.0)) / 20.0
        bary = np.full((4, 4), b)
        np.fill_diagonal(bary, a)
        return QuadratureRule(
            bary=bary, weights=np.full(4, REF_VOLUME / 4.0), degree=2
        )
    n = (order + 2) // 2  # 2n - 1 >= order
    u2, w2m = roots_jacobi(n, 2.0, 0.0)
    u1, w1m = roots_jacobi(n, 1.0, 0.0)
    u0, w0m = roots_legendre(n)
    t1, w1 = (1.0 + u2) / 2.0, w2m / 8.0
    t2, w2 = (1.0 + u1) / 2.0, w1m / 4.0
    t3, w3 = (1.0 + u0) / 2.0, w0m / 2.0
    x = np.repeat(t1, n * n)
    tt2 = np.tile(np.repeat(t2, n), n)
    y = tt2 * (1.0 - x)
    z = np.tile(t3, n * n) * (1.0 - x) * (1.0 - tt2)
    w = np.repeat(w1, n * n) * np.tile(np.repeat(w2, n), n) * np.tile(w3, n * n)
    bary = np.stack([1.0 - x - y - z, x, y, z], axis=1)
    return QuadratureRule(bary=bary, weights=w, degree=2 * n - 1)


def _signed_volume(verts):
    return float(np.linalg.det(verts[1:] - verts[0]) / 6.0)


def _longest_edge(verts):
    l2 = [float(np.sum((verts[i] - verts[j]) ** 2)) for i, j in _EDGES]
    return _EDGES[int(np.argmax(l2))]


def _bisect(verts):
    i, j = _longest_edge(verts)
    mid = 0.5 * (verts[i] + verts[j])
    child_a = verts.copy()
    child_a[j] = mid
    child_b = verts.copy()
    child_b[i] = mid
    return [child_a, child_b]


def subdivide_tet(verts, scheme):
    """Split one tetrahedron into 2, 4 or 8 children covering it exactly.

    Scheme 2 bisects across the longest edge; scheme 4 applies the bisection
    twice (the parent's longest edge, then each half's own — three new
    midpoints); scheme 8 is the standard corner-plus-octahedron midpoint
    refinement with a fixed interior diagonal.
    """
    verts = np.asarray(verts, dtype=float).reshape(4, 3)
    parent_vol = abs(_signed_volume(verts))
    if scheme == 2:
        children = _bisect(verts)
    elif scheme == 4:
        children = [g for h in _bisect(verts) for g in _bisect(h)]
    elif scheme == 8:
        v = verts
        m = {(i, j): 0.5 * (v[i] + v[j]) for i, j in _EDGES}
        children = [
            np.array([v[0], m[0, 1], m[0, 2], m[0, 3]]),
            np.array([m[0, 1], v[1], m[1, 2], m[1, 3]]),
            np.array([m[0, 2], m[1, 2], v[2], m[2, 3]]),
            np.array([m[0, 3], m[1, 3], m[2, 3], v[3]]),
            # interior octahedron, split along the (0,2)-(1,3) diagonal
            np.array([m[0, 1], m[0, 2], m[0, 3], m[1, 3]]),
            np.array([m[0, 1], m[0, 2], m[1, 2], m[1, 3]]),
            np.array([m[0, 2], m[0, 3], m[1, 3], m[2, 3]]),
            np.array([m[0, 2], m[1, 2], m[1, 3], m[2, 3]]),
        ]
    else:
        raise ValueError(f"scheme must be 2, 4 or 8, got {scheme}")
    for k, child in enumerate(children):
        if abs(_signed_volume(child)) <= 1e-12 * parent_vol:
            raise DegenerateCellError(k, _signed_volume(child))
    return children


@dataclass(frozen=True)
class AdaptiveConfig:
    """Adaptive integration controls."""

    tau: float
    scheme: int = 8
    max_depth: int = 6

    def __post_init__(self):
        if self.tau <= 0:
            raise ValueError("tau must be positive")
        if self.scheme not in (2, 4, 8):
            raise ValueError("scheme must be 2, 4 or 8")
        if self.max_depth < 0:
            raise ValueError("max_depth must be non-negative")


@dataclass(frozen=True)
class IntegrationSet:
    """Integration points with weights and provenance.

    ``cells`` holds the index of the *original* background cell each point
    descends from, ``depths`` the subdivision depth of the cell that finally
    contributed the point. ``warnings`` lists original cells in which the
    recursion hit the depth cap.
    """

    points: np.ndarray   # (P, 3)
    weights: np.ndarray  # (P,)
    cells: np.ndarray    # (P,) int
    depths: np.ndarray   # (P,) int
    total_weight: float
    warnings: tuple = ()

    def __post_init__(self):
        if (self.weights <= 0).any():
            raise ValueError("integration weights must all be positive")

    @property
    def npoints(self):
        return self.points.shape[0]

    def to_csv(self, path):
        """Audit dump: one row per point, deterministic formatting."""
        with open(path, "w", encoding="ascii", newline="\n") as f:
            f.write("x,y,z,weight,cell,depth\n")
            for p, w, c, d in zip(self.points, self.weights, self.cells, self.depths):
                f.write(
                    f"{p[0]:.17g},{p[1]:.17g},{p[2]:.17g},{w:.17g},{c:d},{d:d}\n"
                )


def _cell_vertex_array(cells):
    if hasattr(cells, "cell_vertices"):
        return cells.cell_vertices()
    arr = np.asarray(cells, dtype=float)
    if arr.ndim != 3 or arr.shape[1:] != (4, 3):
        raise ValueError(f"cells must be (M, 4, 3), got {arr.shape}")
    return arr


def _map_rule(rule, verts, vol):
    pts = rule.bary @ verts
    wts = rule.weights * (6.0 * vol)
    return pts, wts


def fixed_integration_set(cells, rule):
    """One mapped rule per cell, no refinement."""
    verts = _cell_vertex_array(cells)
    m = verts.shape[0]
    vols = np.abs(np.linalg.det(verts[:, 1:] - verts[:, :1]) / 6.0)
    pts = np.einsum("qb,mbd->mqd", rule.bary, verts).reshape(m * rule.npoints, 3)
    wts = (vols[:, None] * (6.0 * rule.weights)[None, :]).reshape(-1)
    cells_idx = np.repeat(np.arange(m, dtype=np.int64), rule.npoints)
    depths = np.zeros(m * rule.npoints, dtype=np.int64)
    total = math.fsum(wts.tolist())
    ref = math.fsum(vols.tolist())
    if ref > 0 and abs(total - ref) > 1e-10 * ref:
        raise ValueError("integration weights do not reproduce the cell volume")
    return IntegrationSet(
        points=pts, weights=wts, cells=cells_idx, depths=depths, total_weight=total
    )


def _rel_error(q_parent, q_children):
    """Componentwise relative difference, small components count as converged."""
    err = 0.0
    for qp, qc in zip(np.atleast_1d(q_parent), np.atleast_1d(q_children)):
        if abs(qp) < 1e-30:
            continue
        err = max(err, abs((qp - qc) / qp))
    return err


def _refine_cell(verts, vol, pts, wts, fvals, depth, cfg, rule, integrand, sink):
    q_parent = wts @ fvals
    if depth >= cfg.max_depth:
        sink(pts, wts, depth, capped=True)
        return
    children = subdivide_tet(verts, cfg.scheme)
    child_vols = [abs(_signed_volume(c)) for c in children]
    mapped = [_map_rule(rule, c, v) for c, v in zip(children, child_vols)]
    all_pts = np.concatenate([m[0] for m in mapped])
    all_f = np.asarray(integrand(all_pts), dtype=float).reshape(len(all_pts), -1)
    q = rule.npoints
    q_children = np.zeros(all_f.shape[1])
    for k in range(len(children)):
        q_children += mapped[k][1] @ all_f[k * q:(k + 1) * q]
    if _rel_error(q_parent, q_children) <= cfg.tau:
        sink(pts, wts, depth, capped=False)
        return
    for k, child in enumerate(children):
        _refine_cell(
            child,
            child_vols[k],
            mapped[k][0],
            mapped[k][1],
            all_f[k * q:(k + 1) * q],
            depth + 1,
            cfg,
            rule,
            integrand,
            sink,
        )


def adaptive_integrate(cells, integrand, cfg, rule=None):
    """Adaptively refined integration points driven by ``integrand``.

    ``integrand`` maps an (K, 3) point array to (K, c) component values (the
    solver passes the summed squared shape-derivative field); the refinement
    criterion is the max componentwise relative difference between a cell's
    estimate and the sum over its children. Deterministic: identical inputs
    produce identical point sets, regardless of worker count.
    """
    verts = _cell_vertex_array(cells)
    if rule is None:
        rule = make_rule(2)
    vols = np.abs(np.linalg.det(verts[:, 1:] - verts[:, :1]) / 6.0)
    base_pts = np.einsum("qb,mbd->mqd", rule.bary, verts)
    base_f = np.asarray(
        integrand(base_pts.reshape(-1, 3)), dtype=float
    ).reshape(len(verts), rule.npoints, -1)

    def run_cell(i):
        pts_acc, wts_acc, dep_acc = [], [], []
        capped_flag = [False]

        def sink(pts, wts, depth, capped):
            pts_acc.append(pts)
            wts_acc.append(wts)
            dep_acc.append(np.full(len(wts), depth, dtype=np.int64))
            if capped:
                capped_flag[0] = True

        _refine_cell(
            verts[i],
            vols[i],
            base_pts[i],
            rule.weights * (6.0 * vols[i]),
            base_f[i],
            0,
            cfg,
            rule,
            integrand,
            sink,
        )
        return (
            np.concatenate(pts_acc),
            np.concatenate(wts_acc),
            np.concatenate(dep_acc),
            capped_flag[0],
        )

    from .mmls import worker_count

    workers = worker_count()
    indices = range(len(verts))
    if workers > 1 and len(verts) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(run_cell, indices))
    else:
        results = [run_cell(i) for i in indices]

    pts = np.concatenate([r[0] for r in results]) if results else np.zeros((0, 3))
    wts = np.concatenate([r[1] for r in results]) if results else np.zeros(0)
    dep = (
        np.concatenate([r[2] for r in results])
        if results
        else np.zeros(0, dtype=np.int64)
    )
    cell_ids = np.repeat(
        np.arange(len(verts), dtype=np.int64), [len(r[1]) for r in results]
    )
    warnings = tuple(i for i, r in enumerate(results) if r[3])
    total = math.fsum(wts.tolist())
    ref = math.fsum(vols.tolist())
    if ref > 0 and abs(total - ref) > 1e-10 * ref:
        raise ValueError("refined weights do not conserve the reference volume")
    return IntegrationSet(
        points=pts,
        weights=wts,
        cells=cell_ids,
        depths=dep,
        total_weight=total,
        warnings=warnings,
    )


def less_smooth_integrand(shape_provider, x):
    """Summed squared shape-derivative components, per axis.

    This is deliberately the roughest field the approximation produces —
    second derivatives of the displacement interpolant — so cells where the
    shape functions bend get refined first. ``shape_provider`` is either an
    object with ``evaluate_many`` (the solver's evaluator) or a callable
    returning a per-point shape evaluation.
    """
    pts = np.asarray(x, dtype=float)
    single = pts.ndim == 1
    pts = pts.reshape(-1, 3)
    if hasattr(shape_provider, "evaluate_many"):
        batch = shape_provider.evaluate_many(pts)
        vals = np.einsum("pkn,pkn->pk", batch.dphi, batch.dphi)
    else:
        vals = np.empty((len(pts), 3))
        for i, p in enumerate(pts):
            se = shape_provider(p)
            vals[i] = np.sum(np.asarray(se.dphi) ** 2, axis=1)
    return vals[0] if single else vals
