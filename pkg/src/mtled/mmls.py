"""Modified moving least squares shape functions with analytic derivatives.

The approximation solves, at every evaluation point x, the weighted
least-squares fit of a quadratic polynomial with an extra quadratic penalty
on the second-degree coefficients:

    a(x) = argmin  sum_j w_j (p(xi_j) . a - u_j)^2  +  a_q^T diag(mu) a_q

which leads to shape functions

    phi(x) = p(0)^T (P^T W P + H)^{-1} P^T W .

The penalty matrix H touches only the six quadratic monomials, so constants
and linear fields are reproduced exactly while supports that would make the
classical quadratic moment matrix singular (too few nodes, nodes clustered
on lines or planes plus a few off) remain solvable. Coordinates are shifted
to the evaluation point and scaled by the influence radius before the basis
is formed, which keeps the moment matrix O(1).

Derivatives are full derivatives: the weights, the shifted basis and hence
the moment matrix are all differentiated with respect to the evaluation
point.
"""

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .cloud import SupportGrid
from .errors import InadmissibleSupportError, SingularMomentMatrixError

BASIS_SIZE = 10  # [1, x, y, z, x^2, y^2, z^2, xy, xz, yz]
DEFAULT_MU = 1e-7
COND_LIMIT = 1e14


def worker_count():
    """Worker count from the MTLED_WORKERS environment variable (default 1)."""
    try:
        return max(1, int(os.environ.get("MTLED_WORKERS", "1")))
    except ValueError:
        return 1


def quartic_weight(d):
    """Quartic spline weight: w = 1 - 6d^2 + 8d^3 - 3d^4 for d <= 1, else 0.

    Satisfies w(0) = 1, w(1) = 0 and w'(1) = 0, so supports defined by a
    strict distance test lose nothing at the boundary.
    """
    d = np.asarray(d, dtype=float)
    w = 1.0 + d * d * (-6.0 + d * (8.0 - 3.0 * d))
    return np.where(d < 1.0, w, 0.0)


def quartic_weight_deriv(d):
    """dw/dd = -12d + 24d^2 - 12d^3 = -12 d (1-d)^2 for d <= 1, else 0."""
    d = np.asarray(d, dtype=float)
    return np.where(d < 1.0, -12.0 * d * (1.0 - d) ** 2, 0.0)


def _weight_slope_over_d(d):
    """w'(d)/d, finite at d = 0 (equals -12 (1-d)^2 inside the support)."""
    d = np.asarray(d, dtype=float)
    return np.where(d < 1.0, -12.0 * (1.0 - d) ** 2, 0.0)


def _basis(xi):
    """Quadratic monomial basis at local coordinates xi, shape (..., 10)."""
    x, y, z = xi[..., 0], xi[..., 1], xi[..., 2]
    one = np.ones_like(x)
    return np.stack(
        [one, x, y, z, x * x, y * y, z * z, x * y, x * z, y * z], axis=-1
    )


def _basis_grad(xi):
    """d p / d xi, shape (..., 10, 3)."""
    x, y, z = xi[..., 0], xi[..., 1], xi[..., 2]
    zero = np.zeros_like(x)
    one = np.ones_like(x)
    gx = np.stack([zero, one, zero, zero, 2 * x, zero, zero, y, z, zero], axis=-1)
    gy = np.stack([zero, zero, one, zero, zero, 2 * y, zero, x, zero, z], axis=-1)
    gz = np.stack([zero, zero, zero, one, zero, zero, 2 * z, zero, x, y], axis=-1)
    return np.stack([gx, gy, gz], axis=-1)


@dataclass(frozen=True)
class MmlsConfig:
    """Influence radius, quadratic penalties and conditioning limit."""

    radius: float
    mu: np.ndarray = DEFAULT_MU
    cond_limit: float = COND_LIMIT

    def __post_init__(self):
        mu = np.asarray(self.mu, dtype=float)
        if mu.ndim == 0:
            mu = np.full(6, float(mu))
        if mu.shape != (6,):
            raise ValueError("mu must be a scalar or a vector of 6 penalties")
        if (mu < 0).any():
            raise ValueError("penalties must be non-negative")
        object.__setattr__(self, "mu", mu)
        if self.radius <= 0:
            raise ValueError("radius must be positive")

    def h_matrix(self, basis_size=BASIS_SIZE):
        h = np.zeros((basis_size, basis_size))
        if basis_size == BASIS_SIZE:
            h[np.arange(4, 10), np.arange(4, 10)] = self.mu
        return h


@dataclass(frozen=True)
class ShapeEval:
    """Shape functions of one evaluation point over its support."""

    node_indices: np.ndarray  # (n,) int
    phi: np.ndarray           # (n,)
    dphi: np.ndarray          # (3, n) rows are d/dx, d/dy, d/dz


@dataclass(frozen=True)
class ShapeBatch:
    """Padded shape evaluations for many points (padding: index -1, zeros)."""

    indices: np.ndarray  # (P, nmax) int
    counts: np.ndarray   # (P,)
    phi: np.ndarray      # (P, nmax)
    dphi: np.ndarray     # (P, 3, nmax)

    def __len__(self):
        return self.indices.shape[0]

    def single(self, i):
        n = self.counts[i]
        return ShapeEval(
            node_indices=self.indices[i, :n].copy(),
            phi=self.phi[i, :n].copy(),
            dphi=self.dphi[i, :, :n].copy(),
        )


def _pad_supports(supports, nmax):
    count = np.array([len(s) for s in supports], dtype=np.int64)
    idx = np.zeros((len(supports), nmax), dtype=np.int64)
    mask = np.zeros((len(supports), nmax), dtype=bool)
    for row, s in enumerate(supports):
        idx[row, : len(s)] = s
        mask[row, : len(s)] = True
    return idx, count, mask


def _local_geometry(nodes, points, idx, mask, radius):
    """Scaled offsets, distances and (masked) weights for a padded chunk."""
    xi = (nodes[idx] - points[:, None, :]) / radius
    d = np.sqrt(np.einsum("cnk,cnk->cn", xi, xi))
    w = quartic_weight(d)
    w[~mask] = 0.0
    slope = _weight_slope_over_d(d)
    slope[~mask] = 0.0
    # dw/dx_k = -(w'(d)/d) * xi_k / radius
    dw = -slope[:, :, None] * xi / radius
    return xi, d, w, dw


def _moment_matrices(xi, w, h):
    p = _basis(xi)
    wp = w[:, :, None] * p
    a = p.transpose(0, 2, 1) @ wp
    return p, wp, a + h


def _condition_numbers(a):
    lam = np.linalg.eigvalsh(a)
    lo, hi = lam[:, 0], lam[:, -1]
    cond = np.full(len(a), np.inf)
    good = (lo > 0) & (hi > 0)
    cond[good] = hi[good] / lo[good]
    return cond


def moment_condition(cloud, points, supports, cfg, basis_size=BASIS_SIZE):
    """Condition estimates of the penalized moment matrix (report path)."""
    points = np.asarray(points, dtype=float).reshape(-1, 3)
    out = np.empty(len(points))
    h = cfg.h_matrix(basis_size)
    chunk = 2048
    for start in range(0, len(points), chunk):
        sl = slice(start, min(start + chunk, len(points)))
        sub = supports[sl]
        nmax = max((len(s) for s in sub), default=1)
        nmax = max(nmax, 1)
        idx, _, mask = _pad_supports(sub, nmax)
        xi, _, w, _ = _local_geometry(cloud.nodes, points[sl], idx, mask, cfg.radius)
        if basis_size == BASIS_SIZE:
            _, _, a = _moment_matrices(xi, w, h)
        else:
            p = _basis(xi)[..., :4]
            a = np.einsum("cnm,cnl->cml", p, w[:, :, None] * p)
        out[sl] = _condition_numbers(a)
    return out


class MmlsEvaluator:
    """Reusable evaluator bound to one cloud and one configuration."""

    def __init__(self, cloud, cfg):
        self.cloud = cloud
        self.cfg = cfg
        self.grid = SupportGrid(cloud, cfg.radius)
        self._h = cfg.h_matrix()

    # -- core batched kernel ------------------------------------------------

    def _eval_chunk(self, points, supports):
        """Evaluate one padded chunk. Returns (idx, counts, phi, dphi)."""
        cfg = self.cfg
        nodes = self.cloud.nodes
        counts = np.array([len(s) for s in supports], dtype=np.int64)
        short = counts < 4
        if short.any():
            i = int(np.argmax(short))
            raise InadmissibleSupportError(points[i], counts[i])
        nmax = int(counts.max())
        idx, counts, mask = _pad_supports(supports, nmax)

        xi, _, w, dw = _local_geometry(nodes, points, idx, mask, cfg.radius)
        p, wp, a = _moment_matrices(xi, w, self._h)

        cond = _condition_numbers(a)
        bad = ~np.isfinite(cond) | (cond > cfg.cond_limit)
        if bad.any():
            i = int(np.argmax(bad))
            raise SingularMomentMatrixError(points[i], cond[i])

        e0 = np.zeros((len(points), BASIS_SIZE, 1))
        e0[:, 0, 0] = 1.0
        gamma = np.linalg.solve(a, e0)[:, :, 0]

        # Full derivative: A, P and W all depend on the evaluation point.
        # The axis-k pieces run as batched matmuls (BLAS) instead of einsums.
        dp = -_basis_grad(xi) / cfg.radius  # (C, n, 10, 3)
        pt = p.transpose(0, 2, 1)
        rhs = np.empty((len(points), BASIS_SIZE, 3))
        for k in range(3):
            t1 = dp[..., k].transpose(0, 2, 1) @ wp
            t3 = pt @ (p * dw[:, :, k, None])
            da_k = t1 + t1.transpose(0, 2, 1) + t3
            rhs[:, :, k] = -(da_k @ gamma[:, :, None])[:, :, 0]
        dgamma = np.linalg.solve(a, rhs)  # (C, 10, 3)

        gp = (p @ gamma[:, :, None])[:, :, 0]
        phi = w * gp
        d1 = (p @ dgamma) * w[:, :, None]
        d2 = np.einsum("cm,cnmk->cnk", gamma, dp) * w[:, :, None]
        d3 = gp[:, :, None] * dw
        dphi = (d1 + d2 + d3).transpose(0, 2, 1)  # (C, 3, n)

        idx = np.where(mask, idx, -1)
        return idx, counts, phi, dphi

    def iter_chunks(self, points, chunk_size=2048):
        """Yield (start, idx, counts, phi, dphi) chunks in input order."""
        points = np.asarray(points, dtype=float).reshape(-1, 3)
        supports = self.grid.query_many(points)
        starts = list(range(0, len(points), chunk_size))
        pieces = [
            (s, points[s:s + chunk_size], supports[s:s + chunk_size])
            for s in starts
        ]
        workers = worker_count()
        if workers == 1 or len(pieces) == 1:
            for s, pts, sup in pieces:
                yield (s, *self._eval_chunk(pts, sup))
        else:
            with ThreadPoolExecutor(max_workers=workers) as pool:
                results = pool.map(
                    lambda piece: self._eval_chunk(piece[1], piece[2]), pieces
                )
                for (s, _, _), res in zip(pieces, results):
                    yield (s, *res)

    def evaluate_many(self, points, chunk_size=2048):
        """Batched evaluation of many points into one padded ShapeBatch."""
        points = np.asarray(points, dtype=float).reshape(-1, 3)
        n = len(points)
        chunks = list(self.iter_chunks(points, chunk_size))
        nmax = max((c[3].shape[1] for c in chunks), default=1)
        indices = np.full((n, nmax), -1, dtype=np.int64)
        counts = np.zeros(n, dtype=np.int64)
        phi = np.zeros((n, nmax))
        dphi = np.zeros((n, 3, nmax))
        for start, idx, cnt, ph, dph in chunks:
            m = idx.shape[1]
            sl = slice(start, start + len(idx))
            indices[sl, :m] = idx
            counts[sl] = cnt
            phi[sl, :m] = ph
            dphi[sl, :, :m] = dph
        return ShapeBatch(indices=indices, counts=counts, phi=phi, dphi=dphi)

    def evaluate(self, x):
        batch = self.evaluate_many(np.asarray(x, dtype=float).reshape(1, 3))
        return batch.single(0)


def mmls_shape(cloud, x, cfg, evaluator=None):
    """MMLS shape functions and first derivatives at one point.

    Raises :class:`InadmissibleSupportError` for supports with fewer than 4
    nodes and :class:`SingularMomentMatrixError` when the penalized moment
    matrix condition exceeds the configured limit (covers coplanar supports,
    whose out-of-plane slope no quadratic penalty can recover).
    """
    if evaluator is None:
        evaluator = MmlsEvaluator(cloud, cfg)
    return evaluator.evaluate(x)


# -- classical MLS oracle ---------------------------------------------------


def _classical_phi(nodes, idx, x, radius, cond_limit=COND_LIMIT):
    """Plain-loop classical MLS (no penalty), kept independent on purpose."""
    n = len(idx)
    p = np.empty((n, BASIS_SIZE))
    w = np.empty(n)
    for row, j in enumerate(idx):
        xi = (nodes[j] - x) / radius
        xx, yy, zz = xi
        p[row] = (
            1.0, xx, yy, zz, xx * xx, yy * yy, zz * zz, xx * yy, xx * zz, yy * zz
        )
        w[row] = float(quartic_weight(np.linalg.norm(xi)))
    a = p.T @ (w[:, None] * p)
    cond = np.linalg.cond(a)
    if not np.isfinite(cond) or cond > cond_limit:
        raise SingularMomentMatrixError(x, cond)
    e0 = np.zeros(BASIS_SIZE)
    e0[0] = 1.0
    try:
        gamma = np.linalg.solve(a, e0)
    except np.linalg.LinAlgError:
        raise SingularMomentMatrixError(x, np.inf) from None
    return w * (p @ gamma)


def mls_shape_oracle(cloud, x, radius):
    """Classical quadratic MLS shape functions (zero penalty), for oracles.

    Uses a brute-force support scan and a dense direct solve; derivatives
    come from central differences of the shape functions themselves, so the
    whole route shares no machinery with :func:`mmls_shape` beyond the
    weight definition.
    """
    x = np.asarray(x, dtype=float)
    nodes = cloud.nodes
    dist = np.linalg.norm(nodes - x, axis=1)
    idx = np.where(dist < radius)[0]
    if len(idx) < 4:
        raise InadmissibleSupportError(x, len(idx))
    phi = _classical_phi(nodes, idx, x, radius)

    pos = {int(j): row for row, j in enumerate(idx)}
    dphi = np.zeros((3, len(idx)))
    step = 1e-6 * radius
    for k in range(3):
        xp = x.copy()
        xp[k] += step
        xm = x.copy()
        xm[k] -= step
        for pt, sgn in ((xp, +1.0), (xm, -1.0)):
            d = np.linalg.norm(nodes - pt, axis=1)
            sub = np.where(d < radius)[0]
            vals = _classical_phi(nodes, sub, pt, radius)
            for row, j in enumerate(sub):
                slot = pos.get(int(j))
                if slot is not None:
                    dphi[k, slot] += sgn * vals[row] / (2.0 * step)
    return ShapeEval(node_indices=idx, phi=phi, dphi=dphi)
