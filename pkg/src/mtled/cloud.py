"""Reference-configuration node cloud and background integration cells.

The geometry carried here is immutable for the lifetime of a simulation:
a total-Lagrangian formulation never rebuilds supports or cells, so every
spatial query refers to the reference coordinates stored on the cloud.
"""

import math
from dataclasses import dataclass

import numpy as np

from .errors import DegenerateCellError

# Relative volume below which a cell counts as degenerate.
DEGENERACY_TOL = 1e-14


def tet_volume(verts):
    """Signed volume of a tetrahedron given as a (4, 3) vertex array."""
    v = np.asarray(verts, dtype=float)
    return float(np.linalg.det(v[1:] - v[0]) / 6.0)


@dataclass(frozen=True)
class NodeCloud:
    """Nodes, background tetrahedral cells and mass density.

    Attributes
    ----------
    nodes : (N, 3) float array
        Reference coordinates, SI meters.
    cells : (M, 4) int array
        Vertex indices per background cell, positively oriented.
    density : float
        Reference mass density in kg/m^3.
    cell_volumes : (M,) float array
    total_volume : float
        Permutation-invariant (exact) sum of cell volumes.
    """

    nodes: np.ndarray
    cells: np.ndarray
    density: float
    cell_volumes: np.ndarray
    total_volume: float

    @property
    def n_nodes(self):
        return self.nodes.shape[0]

    @property
    def n_cells(self):
        return self.cells.shape[0]

    @property
    def diameter(self):
        lo = self.nodes.min(axis=0)
        hi = self.nodes.max(axis=0)
        return float(np.linalg.norm(hi - lo))

    def cell_vertices(self):
        """(M, 4, 3) array of cell vertex coordinates."""
        return self.nodes[self.cells]


def build_cloud(nodes, cells, density):
    """Validate geometry and assemble a :class:`NodeCloud`.

    Cells with negative orientation are silently reordered (two vertices
    swapped); cells with |volume| below ``1e-14`` of the mean cell volume
    raise :class:`DegenerateCellError`.
    """
    nodes = np.ascontiguousarray(np.asarray(nodes, dtype=float))
    cells = np.ascontiguousarray(np.asarray(cells, dtype=np.int64))
    if nodes.ndim != 2 or nodes.shape[1] != 3:
        raise ValueError(f"nodes must be (N, 3), got {nodes.shape}")
    if cells.ndim != 2 or cells.shape[1] != 4:
        raise ValueError(f"cells must be (M, 4), got {cells.shape}")
    if not np.isfinite(nodes).all():
        raise ValueError("non-finite node coordinates")
    if density <= 0.0 or not math.isfinite(density):
        raise ValueError(f"density must be positive and finite, got {density}")
    if cells.size and (cells.min() < 0 or cells.max() >= nodes.shape[0]):
        bad = np.where((cells < 0) | (cells >= nodes.shape[0]))[0][0]
        raise ValueError(f"cell {bad} references a node index out of range")

    verts = nodes[cells]
    signed = np.linalg.det(verts[:, 1:] - verts[:, :1]) / 6.0
    flipped = signed < 0.0
    if flipped.any():
        cells = cells.copy()
        cells[flipped, 2], cells[flipped, 3] = (
            cells[flipped, 3].copy(),
            cells[flipped, 2].copy(),
        )
        signed = np.abs(signed)
    volumes = np.abs(signed)

    if volumes.size:
        mean_vol = float(volumes.mean())
        degenerate = volumes <= DEGENERACY_TOL * mean_vol
        if degenerate.any():
            idx = int(np.argmax(degenerate))
            raise DegenerateCellError(idx, volumes[idx])

    total = math.fsum(volumes.tolist())
    return NodeCloud(
        nodes=nodes,
        cells=cells,
        density=float(density),
        cell_volumes=volumes,
        total_volume=total,
    )


@dataclass(frozen=True)
class BoundarySpec:
    """Essential boundary description.

    ``fixed_nodes`` are clamped to zero in all three axes. ``driven_nodes``
    carry per-axis final displacement targets in ``driven_targets``; a NaN
    component leaves that axis unconstrained (e.g. a face held only in z).
    The full target is reached when the load factor hits 1; the load
    schedule itself belongs to the solve configuration.
    """

    fixed_nodes: np.ndarray          # (F,) int
    driven_nodes: np.ndarray         # (D,) int
    driven_targets: np.ndarray       # (D, 3) float, NaN = free component

    def __post_init__(self):
        fixed = np.asarray(self.fixed_nodes, dtype=np.int64).ravel()
        driven = np.asarray(self.driven_nodes, dtype=np.int64).ravel()
        targets = np.asarray(self.driven_targets, dtype=float).reshape(-1, 3)
        object.__setattr__(self, "fixed_nodes", np.sort(fixed))
        order = np.argsort(driven)
        object.__setattr__(self, "driven_nodes", driven[order])
        object.__setattr__(self, "driven_targets", targets[order])
        if driven.shape[0] != targets.shape[0]:
            raise ValueError("driven_nodes and driven_targets length mismatch")
        if np.intersect1d(fixed, driven).size:
            raise ValueError("fixed and driven node sets overlap")
        if len(np.unique(fixed)) != len(fixed) or len(np.unique(driven)) != len(driven):
            raise ValueError("duplicate node index in boundary sets")

    def constrained_nodes(self, axis):
        """Sorted node indices constrained along ``axis`` (0, 1 or 2)."""
        has_target = ~np.isnan(self.driven_targets[:, axis])
        return np.sort(
            np.concatenate([self.fixed_nodes, self.driven_nodes[has_target]])
        )

    def axis_targets(self, axis):
        """(nodes, targets, driven_mask) for one axis.

        ``targets`` are the full-load values; fixed nodes contribute zeros.
        ``driven_mask`` marks rows belonging to the driven set (used for
        reaction reporting).
        """
        has_target = ~np.isnan(self.driven_targets[:, axis])
        nodes = np.concatenate([self.fixed_nodes, self.driven_nodes[has_target]])
        vals = np.concatenate(
            [
                np.zeros(self.fixed_nodes.shape[0]),
                self.driven_targets[has_target, axis],
            ]
        )
        mask = np.concatenate(
            [
                np.zeros(self.fixed_nodes.shape[0], dtype=bool),
                np.ones(int(has_target.sum()), dtype=bool),
            ]
        )
        order = np.argsort(nodes)
        return nodes[order], vals[order], mask[order]

    def all_constrained(self):
        """Union of constrained node indices over all axes."""
        parts = [self.fixed_nodes]
        for axis in range(3):
            has = ~np.isnan(self.driven_targets[:, axis])
            parts.append(self.driven_nodes[has])
        return np.unique(np.concatenate(parts))


class SupportGrid:
    """Uniform spatial bins (bin edge = radius) over the cloud nodes.

    A support query only ever has to look at the query point's bin and its
    26 neighbors, because supports use a strict ``distance < radius`` test.
    """

    def __init__(self, cloud, radius):
        if radius <= 0.0:
            raise ValueError("radius must be positive")
        self.cloud = cloud
        self.radius = float(radius)
        nodes = cloud.nodes
        self.origin = nodes.min(axis=0)
        keys = np.floor((nodes - self.origin) / self.radius).astype(np.int64)
        self.dims = keys.max(axis=0) + 1 if len(nodes) else np.ones(3, np.int64)
        flat = self._flatten(keys)
        order = np.argsort(flat, kind="stable")
        self._sorted_nodes = order
        self._sorted_keys = flat[order]
        # bin id -> slice into _sorted_nodes
        uniq, starts = np.unique(self._sorted_keys, return_index=True)
        self._bins = dict(
            zip(uniq.tolist(), zip(starts.tolist(), np.append(starts[1:], len(flat)).tolist()))
        )

    def _flatten(self, keys):
        d = self.dims
        return (keys[..., 0] * d[1] + keys[..., 1]) * d[2] + keys[..., 2]

    def _candidates(self, key):
        """Node indices in the 27 bins around integer bin coordinate ``key``."""
        chunks = []
        for dx in (-1, 0, 1):
            kx = key[0] + dx
            if kx < 0 or kx >= self.dims[0]:
                continue
            for dy in (-1, 0, 1):
                ky = key[1] + dy
                if ky < 0 or ky >= self.dims[1]:
                    continue
                for dz in (-1, 0, 1):
                    kz = key[2] + dz
                    if kz < 0 or kz >= self.dims[2]:
                        continue
                    flat = (kx * self.dims[1] + ky) * self.dims[2] + kz
                    span = self._bins.get(int(flat))
                    if span is not None:
                        chunks.append(self._sorted_nodes[span[0]:span[1]])
        if not chunks:
            return np.empty(0, dtype=np.int64)
        return np.concatenate(chunks)

    def query(self, x):
        """Sorted indices of nodes with strict distance < radius from ``x``."""
        x = np.asarray(x, dtype=float)
        key = np.floor((x - self.origin) / self.radius).astype(np.int64)
        cand = self._candidates(key)
        if cand.size == 0:
            return cand
        d2 = np.sum((self.cloud.nodes[cand] - x) ** 2, axis=1)
        hit = cand[d2 < self.radius * self.radius]
        return np.sort(hit)

    def query_many(self, points):
        """Support lists for many points, grouped by bin for speed.

        Returns a list of sorted index arrays, one per query point, in the
        input order.
        """
        points = np.asarray(points, dtype=float).reshape(-1, 3)
        keys = np.floor((points - self.origin) / self.radius).astype(np.int64)
        flat = self._flatten(keys)
        out = [None] * len(points)
        order = np.argsort(flat, kind="stable")
        r2 = self.radius * self.radius
        i = 0
        while i < len(order):
            j = i
            while j < len(order) and flat[order[j]] == flat[order[i]]:
                j += 1
            group = order[i:j]
            cand = self._candidates(keys[group[0]])
            if cand.size == 0:
                for g in group:
                    out[g] = np.empty(0, dtype=np.int64)
            else:
                coords = self.cloud.nodes[cand]
                diff = coords[None, :, :] - points[group][:, None, :]
                d2 = np.einsum("gnd,gnd->gn", diff, diff)
                within = d2 < r2
                for row, g in enumerate(group):
                    out[g] = np.sort(cand[within[row]])
            i = j
        return out


def support_nodes(cloud, x, radius, grid=None):
    """Indices of cloud nodes strictly inside the sphere of ``radius`` at ``x``.

    Nodes exactly at ``radius`` are excluded — the weight function vanishes
    there, so they would contribute nothing but singular bookkeeping.
    """
    if grid is None or grid.radius != radius or grid.cloud is not cloud:
        grid = SupportGrid(cloud, radius)
    return grid.query(x)


def min_node_spacing(cloud, radius=None):
    """Minimum inter-node distance (used for the critical time step)."""
    nodes = cloud.nodes
    n = len(nodes)
    if n < 2:
        raise ValueError("need at least two nodes")
    best = math.inf
    if radius is not None and radius > 0:
        grid = SupportGrid(cloud, radius)
        lists = grid.query_many(nodes)
        missing = []
        for i, neigh in enumerate(lists):
            others = neigh[neigh != i]
            if others.size == 0:
                missing.append(i)
                continue
            d = np.sqrt(np.min(np.sum((nodes[others] - nodes[i]) ** 2, axis=1)))
            best = min(best, float(d))
        if not missing:
            return best
    # brute force fallback (also used when no radius hint is available)
    chunk = 512
    for start in range(0, n, chunk):
        block = nodes[start:start + chunk]
        d2 = np.sum((block[:, None, :] - nodes[None, :, :]) ** 2, axis=2)
        rows = np.arange(block.shape[0])
        d2[rows, start + rows] = math.inf
        best = min(best, float(np.sqrt(d2.min())))
    return best


def nearest_neighbor_distances(cloud):
    """Distance from each node to its nearest neighbor, (N,) array."""
    nodes = cloud.nodes
    n = len(nodes)
    if n < 2:
        raise ValueError("need at least two nodes")
    out = np.empty(n)
    chunk = 512
    for start in range(0, n, chunk):
        block = nodes[start:start + chunk]
        d2 = np.sum((block[:, None, :] - nodes[None, :, :]) ** 2, axis=2)
        rows = np.arange(block.shape[0])
        d2[rows, start + rows] = math.inf
        out[start:start + chunk] = np.sqrt(d2.min(axis=1))
    return out


@dataclass(frozen=True)
class FlaggedPoint:
    index: int
    reason: str
    support_count: int


@dataclass(frozen=True)
class AdmissibilityReport:
    """Per-point support diagnostics for a set of evaluation points."""

    support_counts: np.ndarray
    condition: np.ndarray
    flagged: tuple

    @property
    def ok(self):
        return len(self.flagged) == 0

    @property
    def n_points(self):
        return len(self.support_counts)


# Relative singular-value threshold for the coplanarity test.
COPLANAR_TOL = 1e-10


def check_admissibility(cloud, eval_points, radius, basis_size=10, mu=1e-7):
    """Report support counts, moment conditioning and deficient points.

    A point is flagged when its support has fewer than 4 nodes, when the
    support nodes are coplanar within tolerance, or when the (penalized)
    moment matrix condition estimate exceeds 1e14. ``basis_size`` may be 4
    (linear) or 10 (quadratic); the quadratic basis is the one used by the
    solver.
    """
    from .mmls import MmlsConfig, moment_condition  # local import: avoid cycle

    if basis_size not in (4, 10):
        raise ValueError("basis_size must be 4 or 10")
    points = np.asarray(eval_points, dtype=float).reshape(-1, 3)
    grid = SupportGrid(cloud, radius)
    supports = grid.query_many(points)
    counts = np.array([len(s) for s in supports], dtype=np.int64)

    cfg = MmlsConfig(radius=radius, mu=mu)
    condition = moment_condition(cloud, points, supports, cfg, basis_size)

    flagged = []
    for i, sup in enumerate(supports):
        if counts[i] < 4:
            flagged.append(FlaggedPoint(i, "fewer than 4 support nodes", counts[i]))
            continue
        coords = cloud.nodes[sup]
        centered = coords - coords.mean(axis=0)
        svals = np.linalg.svd(centered, compute_uv=False)
        if svals[2] <= COPLANAR_TOL * max(svals[0], 1e-300):
            flagged.append(FlaggedPoint(i, "support nodes coplanar", counts[i]))
        elif not np.isfinite(condition[i]) or condition[i] > cfg.cond_limit:
            flagged.append(FlaggedPoint(i, "ill-conditioned moment matrix", counts[i]))
    return AdmissibilityReport(
        support_counts=counts, condition=condition, flagged=tuple(flagged)
    )
