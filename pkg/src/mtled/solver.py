"""Total-Lagrangian explicit solver with dynamic relaxation.

Everything expensive — integration points, shape functions and their
derivatives, the lumped mass and the essential-boundary operators — is
assembled once on the reference configuration. Each explicit step then
costs two sparse products (displacement gradients and nodal forces), a
batched stress evaluation, and the small dense boundary correction.

Essential boundary conditions are imposed exactly: a predictor step runs
unconstrained, then the displacement field is corrected with an operator
built from the shape functions at the constrained nodes, so the constrained
degrees of freedom land on their prescribed values to round-off at every
step. Fixed nodes are prescribed-zero constraints through the same
operator.
"""

import math
from dataclasses import dataclass, replace

import numpy as np
import scipy.linalg
import scipy.sparse

from .cloud import nearest_neighbor_distances, min_node_spacing
from .errors import (
    ConvergenceError,
    DiscretizationError,
    DivergenceError,
    EbcConditioningError,
    InvertedElementError,
)
from .materials import small_strain_moduli, spk_stress, strain_energy
from .mmls import MmlsConfig, MmlsEvaluator
from .quadrature import (
    AdaptiveConfig,
    adaptive_integrate,
    fixed_integration_set,
    less_smooth_integrand,
    make_rule,
)

EBC_IDENTITY_TOL = 1e-10
DAMPING_CLAMP = 1.98  # keep c*h strictly below 2


def smooth_load_factor(t, total):
    """3-4-5 polynomial ramp: zero slope at both ends, reaches 1 at t = total."""
    if total <= 0.0:
        return 1.0
    tau = min(max(t / total, 0.0), 1.0)
    return tau ** 3 * (10.0 - 15.0 * tau + 6.0 * tau * tau)


def critical_timestep(cloud, material, density=None, radius=None, safety=0.5):
    """Stable explicit step: safety * (min node spacing) / (dilatational wave speed)."""
    rho = cloud.density if density is None else float(density)
    lam, mu = small_strain_moduli(material)
    c_wave = math.sqrt((lam + 2.0 * mu) / rho)
    h_min = min_node_spacing(cloud, radius=radius)
    return safety * h_min / c_wave


@dataclass(frozen=True)
class DrConfig:
    """Dynamic relaxation parameters (pseudo-time step and damping)."""

    h: float
    c: float = 0.0
    adaptive: bool = True
    adapt_interval: int = 10
    lam: float = 0.0  # smoothed lowest-eigenvalue estimate behind c

    def __post_init__(self):
        if self.h <= 0:
            raise ValueError("h must be positive")
        if self.c < 0:
            raise ValueError("c must be non-negative")
        if self.c * self.h >= 2.0:
            raise ValueError("c*h must stay below 2 for stability")

    @property
    def alpha(self):
        return 2.0 * self.h * self.h / (2.0 + self.c * self.h)

    @property
    def beta(self):
        return (2.0 - self.c * self.h) / (2.0 + self.c * self.h)


@dataclass
class SimulationState:
    """Displacement history pair and clock for the explicit schemes."""

    u_now: np.ndarray
    u_prev: np.ndarray
    t: float = 0.0
    step: int = 0
    max_increment: float = 0.0
    kinetic_proxy: float = 0.0
    def_gradients: np.ndarray = None

    @classmethod
    def zeros(cls, n_nodes):
        return cls(u_now=np.zeros((n_nodes, 3)), u_prev=np.zeros((n_nodes, 3)))


def _advance(u, u_prev, minv_r, alpha, beta):
    return u + beta * (u - u_prev) + alpha * minv_r


def _stepped(state, u_next, dt):
    if not np.isfinite(u_next).all():
        raise DivergenceError(state.step + 1, state)
    delta = np.abs(u_next - state.u_now).max() if u_next.size else 0.0
    return SimulationState(
        u_now=u_next,
        u_prev=state.u_now,
        t=state.t + dt,
        step=state.step + 1,
        max_increment=float(delta),
    )


def central_difference_step(state, f_ext, f_int, mass, dt):
    """Undamped explicit update: u+ = dt^2 M^-1 (F_ext - F_int) + 2u - u-."""
    minv_r = (f_ext - f_int) / mass[:, None]
    u_next = _advance(state.u_now, state.u_prev, minv_r, dt * dt, 1.0)
    return _stepped(state, u_next, dt)


def dr_step(state, f_ext, f_int, mass, cfg):
    """Damped relaxation update; c = 0 reproduces the central difference."""
    minv_r = (f_ext - f_int) / mass[:, None]
    u_next = _advance(state.u_now, state.u_prev, minv_r, cfg.alpha, cfg.beta)
    return _stepped(state, u_next, cfg.h)


def adapt_dr_params(u_now, u_anchor, f_int_now, f_int_anchor, mass, cfg):
    """Re-estimate the damping from the displacement accumulated since the
    last adaptation.

    Rayleigh quotient of the tangent stiffness along that increment in the
    mass metric: the iteration error aligns with the lowest mode over time,
    so the estimate settles at the smallest effective eigenvalue and
    c = 2 sqrt(lam) damps it critically. The raw quotient is blended with
    the running estimate — jumping c every adaptation modulates beta and can
    pump energy into a marginal mode instead of draining it. Degenerate
    quotients (tiny denominator, negative curvature, non-finite) leave the
    previous damping untouched.
    """
    du = u_now - u_anchor
    den = float(np.sum(mass[:, None] * du * du))
    num = float(np.sum(du * (f_int_now - f_int_anchor)))
    if not math.isfinite(num) or not math.isfinite(den):
        return cfg
    if den <= 1e-300 or num <= 0.0:
        return cfg
    lam_est = num / den
    if cfg.lam <= 0.0 or lam_est < cfg.lam:
        # The quotient upper-bounds the softest mode present; lower sightings
        # are better, and undershooting only underdamps (still convergent).
        lam = lam_est
    else:
        # Rise reluctantly: overdamping stalls the softest mode outright.
        lam = min(cfg.lam * 1.1, lam_est)
    c = min(2.0 * math.sqrt(lam), DAMPING_CLAMP / cfg.h)
    return replace(cfg, c=c, lam=lam)


# -- precomputation ----------------------------------------------------------


def build_operators(evaluator, points):
    """Sparse shape/gradient operators at the integration points.

    Returns (phi_op, grad_op): phi_op is (P, N) with phi_j(x_p); grad_op is
    (3P, N) with row 3p+b holding d phi_j / d x_b at point p.
    """
    n_nodes = evaluator.cloud.n_nodes
    n_pts = len(np.asarray(points).reshape(-1, 3))
    rows_p, cols_p, vals_p = [], [], []
    rows_g, cols_g, vals_g = [], [], []
    for start, idx, counts, phi, dphi in evaluator.iter_chunks(points):
        mask = idx >= 0
        c_arr, n_arr = np.nonzero(mask)
        cols = idx[mask]
        pts_ids = start + c_arr
        rows_p.append(pts_ids)
        cols_p.append(cols)
        vals_p.append(phi[mask])
        for b in range(3):
            rows_g.append(3 * pts_ids + b)
            cols_g.append(cols)
            vals_g.append(dphi[c_arr, b, n_arr])
    phi_op = scipy.sparse.csr_matrix(
        (np.concatenate(vals_p), (np.concatenate(rows_p), np.concatenate(cols_p))),
        shape=(n_pts, n_nodes),
    )
    grad_op = scipy.sparse.csr_matrix(
        (np.concatenate(vals_g), (np.concatenate(rows_g), np.concatenate(cols_g))),
        shape=(3 * n_pts, n_nodes),
    )
    return phi_op, grad_op


def lump_mass(cloud, integration, phi_op):
    """Row-sum mass: m_j = rho * sum_p w_p phi_j(x_p).

    Partition of unity makes the total exactly rho * V0 (up to round-off);
    strongly non-interpolating shape functions could drive individual
    entries negative, which is rejected.
    """
    m = cloud.density * np.asarray(phi_op.T @ integration.weights).ravel()
    if (m <= 0.0).any():
        j = int(np.argmax(m <= 0.0))
        raise DiscretizationError(
            f"non-positive lumped mass at node {j}: {m[j]:.3e}"
        )
    total = math.fsum(m.tolist())
    expected = cloud.density * cloud.total_volume
    if abs(total - expected) > 1e-10 * expected:
        raise DiscretizationError(
            f"lumped mass {total!r} does not match rho*V0 {expected!r}"
        )
    return m


# -- essential boundary operators ---------------------------------------------

# Degree-5 7-point triangle rule; the boundary shape functions are rational,
# so the surface moments deserve a few more points than the volume rule.
_TRI_A1, _TRI_B1 = 0.059715871789770, 0.470142064105115
_TRI_A2, _TRI_B2 = 0.797426985353087, 0.101286507323456
_TRI_GAUSS_BARY = np.array(
    [
        [1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0],
        [_TRI_A1, _TRI_B1, _TRI_B1],
        [_TRI_B1, _TRI_A1, _TRI_B1],
        [_TRI_B1, _TRI_B1, _TRI_A1],
        [_TRI_A2, _TRI_B2, _TRI_B2],
        [_TRI_B2, _TRI_A2, _TRI_B2],
        [_TRI_B2, _TRI_B2, _TRI_A2],
    ]
)
_TRI_GAUSS_W = np.array(
    [
        0.225,
        0.132394152788506, 0.132394152788506, 0.132394152788506,
        0.125939180544827, 0.125939180544827, 0.125939180544827,
    ]
)


def ebciem_v_matrix(phi_s, interp, weights):
    """Assemble V_jk = sum_i phi_j(s_i) N_k(s_i) w_i from surface quadrature."""
    w_interp = np.asarray(interp) * np.asarray(weights)[:, None]
    return np.asarray(phi_s.T @ w_interp)


def _surface_quadrature(cloud, nodes, surface):
    """Gauss points/weights/hat-matrix for the triangles covering ``nodes``."""
    node_set = {int(j): k for k, j in enumerate(nodes)}
    tris = [t for t in np.asarray(surface, dtype=np.int64) if all(int(v) in node_set for v in t)]
    if not tris:
        raise EbcConditioningError(
            "no boundary triangles cover the constrained node set"
        )
    pts, wts, rows, cols, vals = [], [], [], [], []
    gp = 0
    for tri in tris:
        verts = cloud.nodes[tri]
        area = 0.5 * np.linalg.norm(
            np.cross(verts[1] - verts[0], verts[2] - verts[0])
        )
        for q in range(len(_TRI_GAUSS_BARY)):
            pts.append(_TRI_GAUSS_BARY[q] @ verts)
            wts.append(area * _TRI_GAUSS_W[q])
            for v in range(3):
                rows.append(gp)
                cols.append(node_set[int(tri[v])])
                vals.append(_TRI_GAUSS_BARY[q, v])
            gp += 1
    interp = np.zeros((gp, len(nodes)))
    interp[rows, cols] = vals
    return np.asarray(pts), np.asarray(wts), interp


@dataclass
class BoundaryOperator:
    """Correction operator for one constrained node set (one axis pattern)."""

    nodes: np.ndarray        # (K,) constrained node indices
    phi_e: scipy.sparse.csr_matrix  # (K, N)
    v: np.ndarray            # (N, K)
    p: np.ndarray            # (N, K), satisfies phi_e @ p = I
    lu: tuple                # factorization of phi_e M^-1 V

    def residual(self, u_axis, ubar):
        return ubar - self.phi_e @ u_axis

    def condensed_solve(self, r):
        return scipy.linalg.lu_solve(self.lu, r)


def _build_boundary_operator(method, cloud, nodes, evaluator, mass, surface):
    coords = cloud.nodes[nodes]
    batch = evaluator.evaluate_many(coords)
    mask = batch.indices >= 0
    r_arr, c_arr = np.nonzero(mask)
    phi_e = scipy.sparse.csr_matrix(
        (batch.phi[mask], (r_arr, batch.indices[mask])),
        shape=(len(nodes), cloud.n_nodes),
    )
    if method == "sebciem":
        v = phi_e.T.toarray()
    elif method == "ebciem":
        pts, wts, interp = _surface_quadrature(cloud, nodes, surface)
        sb = evaluator.evaluate_many(pts)
        smask = sb.indices >= 0
        sr, sc = np.nonzero(smask)
        phi_s = scipy.sparse.csr_matrix(
            (sb.phi[smask], (sr, sb.indices[smask])),
            shape=(len(pts), cloud.n_nodes),
        )
        v = ebciem_v_matrix(phi_s, interp, wts)
    else:
        raise ValueError(f"unknown essential-boundary method {method!r}")

    minv_v = v / mass[:, None]
    condensed = np.asarray(phi_e @ minv_v)
    try:
        lu = scipy.linalg.lu_factor(condensed)
        p = minv_v @ scipy.linalg.lu_solve(lu, np.eye(len(nodes)))
    except (scipy.linalg.LinAlgError, ValueError) as exc:
        raise EbcConditioningError(f"condensed boundary matrix is singular: {exc}")
    err = np.abs(phi_e @ p - np.eye(len(nodes))).max()
    if not err <= EBC_IDENTITY_TOL:
        raise EbcConditioningError(
            f"phi_e P deviates from identity by {err:.3e} (> {EBC_IDENTITY_TOL})"
        )
    return BoundaryOperator(nodes=nodes, phi_e=phi_e, v=v, p=p, lu=lu)


@dataclass
class EbcOperator:
    """Per-axis exact-imposition operators plus full-load target values."""

    axes: tuple       # 3 entries: BoundaryOperator or None
    targets: tuple    # 3 entries: (K,) full-load values or None
    driven: tuple     # 3 entries: (K,) bool mask (True = reaction-reported row)
    method: str
    targets_base: tuple = None  # ramp start values; None = ramp from zero

    def ubar(self, load_factor):
        """Prescribed values at the given load factor (base -> target ramp)."""
        out = []
        for axis in range(3):
            t = self.targets[axis]
            if t is None:
                out.append(None)
                continue
            base = None if self.targets_base is None else self.targets_base[axis]
            if base is None:
                out.append(t * load_factor)
            else:
                out.append(base + load_factor * (t - base))
        return tuple(out)

    def correct(self, u_pred, ubar_axes):
        """Correction displacement and condensed tractions per axis."""
        corr = np.zeros_like(u_pred)
        tractions = [None, None, None]
        for axis in range(3):
            op = self.axes[axis]
            if op is None:
                continue
            r = op.residual(u_pred[:, axis], ubar_axes[axis])
            t = op.condensed_solve(r)
            corr[:, axis] = op.p @ r
            tractions[axis] = t
        return corr, tractions

    def violation(self, u, ubar_axes):
        """Worst constrained-displacement error over all axes (meters)."""
        worst = 0.0
        for axis in range(3):
            op = self.axes[axis]
            if op is None:
                continue
            r = op.residual(u[:, axis], ubar_axes[axis])
            if r.size:
                worst = max(worst, float(np.abs(r).max()))
        return worst

    def reaction(self, tractions, alpha):
        """Per-axis total boundary force over the driven (reported) rows."""
        out = np.zeros(3)
        for axis in range(3):
            t = tractions[axis]
            if t is None:
                continue
            out[axis] = float(np.sum(t[self.driven[axis]])) / alpha
        return out

    def constrained_union(self, n_nodes):
        mask = np.zeros(n_nodes, dtype=bool)
        for op in self.axes:
            if op is not None:
                mask[op.nodes] = True
        return mask


def build_ebc_operator(method, cloud, boundary, evaluator, mass, surface=None):
    """Build the exact-imposition operator for every constrained axis.

    ``method`` is "sebciem" (collocation at the constrained nodes — the
    default) or "ebciem" (surface-integrated V from a boundary
    triangulation). Identical node sets across axes share one operator.
    """
    if method == "ebciem" and surface is None:
        raise ValueError("ebciem requires a boundary surface triangulation")
    cache = {}
    axes, targets, driven = [], [], []
    for axis in range(3):
        nodes, vals, mask = boundary.axis_targets(axis)
        if len(nodes) == 0:
            axes.append(None)
            targets.append(None)
            driven.append(None)
            continue
        key = tuple(int(j) for j in nodes)
        if key not in cache:
            cache[key] = _build_boundary_operator(
                method, cloud, nodes, evaluator, mass, surface
            )
        axes.append(cache[key])
        targets.append(vals)
        driven.append(mask)
    if all(op is None for op in axes):
        raise ValueError("boundary has no constrained nodes")
    return EbcOperator(
        axes=tuple(axes), targets=tuple(targets), driven=tuple(driven), method=method
    )


def ebc_correct(u_pred, ebc, ubar_axes):
    """Corrected displacement field: u = u~ + P (ubar - phi_e u~) per axis."""
    corr, _ = ebc.correct(u_pred, ubar_axes)
    return u_pred + corr


# -- internal force ------------------------------------------------------------


@dataclass(frozen=True)
class InternalForceResult:
    f: np.ndarray        # (N, 3) nodal internal forces
    det_min: float
    det_max: float


def deformation_gradients(u, pre):
    """F = I + grad u at every integration point, (P, 3, 3)."""
    h = np.asarray(pre.grad_op @ u)
    h = h.reshape(-1, 3, 3)  # [point, b, a] = d u_a / d X_b
    return np.eye(3)[None] + h.transpose(0, 2, 1)


def internal_force(u, pre, material):
    """Nodal internal forces of the total-Lagrangian weak form.

    f_j = sum_p w_p (F S)(x_p) grad phi_j(x_p); raises
    :class:`InvertedElementError` as soon as det F drops to zero anywhere.
    """
    f_def = deformation_gradients(u, pre)
    det = np.linalg.det(f_def)
    if (det <= 0.0).any():
        i = int(np.argmax(det <= 0.0))
        raise InvertedElementError(i, det[i])
    s = spk_stress(material, f_def)
    p1 = f_def @ s
    y = (pre.integration.weights[:, None, None] * p1).transpose(0, 2, 1)
    f = np.asarray(pre.grad_op_t @ y.reshape(-1, 3))
    if not np.isfinite(f).all():
        j = int(np.argmax(~np.isfinite(f).all(axis=1)))
        raise DivergenceError(j)
    return InternalForceResult(
        f=f, det_min=float(det.min()), det_max=float(det.max())
    )


def total_strain_energy(u, pre, material):
    """Integrated strain energy of the current displacement field."""
    f_def = deformation_gradients(u, pre)
    w = strain_energy(material, f_def)
    return float(np.dot(pre.integration.weights, w))


# -- model + configuration ------------------------------------------------------


@dataclass
class Model:
    """Geometry, boundary conditions and material of one problem."""

    cloud: object
    boundary: object
    material: object
    surface: np.ndarray = None   # optional (T, 3) boundary triangulation
    name: str = "model"


@dataclass
class SolveConfig:
    """User-facing solve options; None means "derive a default".

    Defaults (applied during precompute): radius = 2.8 x max nearest-neighbor
    spacing; h = critical time step with safety 0.5; steady duration = 400 h,
    dynamic duration = 1000 h; conv_tol = 1e-7 x domain diameter; damping
    adaptive; ebc_method sebciem unless a surface is present.
    """

    radius: float = None
    mu: object = 1e-7
    tau: float = None
    scheme: int = 8
    max_depth: int = 6
    rule_order: int = 2
    mode: str = "steady"
    h: float = None
    safety: float = 0.5
    duration: float = None
    damping: float = None
    conv_tol: float = None
    conv_window: int = 10
    max_steps: int = 20000
    ebc_method: str = None
    mass_scale: float = 1.0

    def __post_init__(self):
        if self.mode not in ("steady", "dynamic"):
            raise ValueError("mode must be 'steady' or 'dynamic'")
        if self.mass_scale <= 0:
            raise ValueError("mass_scale must be positive")


@dataclass
class Precomputed:
    """Reference-configuration data shared by every step of a run."""

    cloud: object
    material: object
    evaluator: MmlsEvaluator
    integration: object
    phi_op: scipy.sparse.csr_matrix
    grad_op: object              # csr or dense, whichever multiplies faster
    grad_op_t: object
    mass: np.ndarray            # physical lumped mass
    mass_effective: np.ndarray  # stepping mass (scaled)
    ebc: EbcOperator
    radius: float
    h: float
    duration: float
    conv_tol: float
    config: SolveConfig


def precompute(model, config):
    """Resolve defaults and assemble every run-invariant quantity."""
    cloud = model.cloud
    radius = config.radius
    if radius is None:
        # Wide default: spanning ~3 node shells keeps the quadratic moment
        # matrix comfortably ranked between nodes, the lumped masses
        # positive, and the shape-derivative field smooth enough that
        # adaptive refinement is spent on the solution, not the shapes.
        radius = 2.8 * float(nearest_neighbor_distances(cloud).max())
    mcfg = MmlsConfig(radius=radius, mu=config.mu)
    evaluator = MmlsEvaluator(cloud, mcfg)

    rule = make_rule(config.rule_order)
    if config.tau is not None:
        acfg = AdaptiveConfig(
            tau=config.tau, scheme=config.scheme, max_depth=config.max_depth
        )
        integration = adaptive_integrate(
            cloud,
            lambda pts: less_smooth_integrand(evaluator, pts),
            acfg,
            rule,
        )
    else:
        integration = fixed_integration_set(cloud, rule)

    phi_op, grad_op = build_operators(evaluator, integration.points)
    mass = lump_mass(cloud, integration, phi_op)
    mass_eff = mass * config.mass_scale

    # Wide supports fill these operators well past the point where sparse
    # indexing pays; hand dense matrices to BLAS instead.
    fill = grad_op.nnz / (grad_op.shape[0] * grad_op.shape[1])
    if fill > 0.2:
        grad_op = np.ascontiguousarray(grad_op.toarray())
        grad_op_t = np.ascontiguousarray(grad_op.T)
    else:
        grad_op_t = grad_op.T.tocsr()

    method = config.ebc_method
    if method is None:
        method = "ebciem" if model.surface is not None else "sebciem"
    ebc = build_ebc_operator(
        method, cloud, model.boundary, evaluator, mass_eff, model.surface
    )

    h = config.h
    if h is None:
        h = critical_timestep(
            cloud, model.material, radius=radius, safety=config.safety
        )
    duration = config.duration
    if duration is None:
        duration = (400.0 if config.mode == "steady" else 1000.0) * h
    conv_tol = config.conv_tol
    if conv_tol is None:
        conv_tol = 1e-7 * cloud.diameter

    return Precomputed(
        cloud=cloud,
        material=model.material,
        evaluator=evaluator,
        integration=integration,
        phi_op=phi_op,
        grad_op=grad_op,
        grad_op_t=grad_op_t,
        mass=mass,
        mass_effective=mass_eff,
        ebc=ebc,
        radius=radius,
        h=h,
        duration=duration,
        conv_tol=conv_tol,
        config=config,
    )


@dataclass
class SolveResult:
    """Final field plus per-step series and run diagnostics."""

    u: np.ndarray
    state: SimulationState
    series: dict
    snapshots: list          # (step, time, displacement copy)
    converged: bool
    steps: int
    mode: str
    reaction: np.ndarray     # (3,) final driven-set reaction force
    ebc_error_max: float
    residual_rel: float
    det_min: float
    det_max: float
    precomputed: Precomputed


class _SnapshotReservoir:
    """Evenly thinned snapshot store with bounded memory."""

    def __init__(self, limit=256):
        self.limit = max(2, limit)
        self.stride = 1
        self.items = []

    def offer(self, step, t, u):
        if step % self.stride == 0:
            self.items.append((step, t, u.copy()))
            if len(self.items) > 2 * self.limit:
                self.items = self.items[::2]
                self.stride *= 2

    def finalize(self, step, t, u):
        if not self.items or self.items[-1][0] != step:
            self.items.append((step, t, u.copy()))
        return self.items


def solve(
    model,
    config,
    precomputed=None,
    initial_state=None,
    progress=None,
    snapshot_limit=256,
):
    """Run the explicit schedule to steady state (or through the duration).

    Steady mode uses dynamic relaxation with (by default) adaptive damping
    and stops once the max nodal increment stays below the convergence
    tolerance for ``conv_window`` consecutive steps after the load is fully
    applied; it raises :class:`ConvergenceError` (carrying the partial
    result) if the step cap is hit first. Dynamic mode runs an undamped
    central-difference transient until t >= duration.
    """
    pre = precomputed if precomputed is not None else precompute(model, config)
    cloud, material, ebc = pre.cloud, pre.material, pre.ebc
    mass = pre.mass_effective
    steady = config.mode == "steady"
    dr = DrConfig(h=pre.h, c=config.damping or 0.0, adaptive=config.damping is None)

    state = initial_state if initial_state is not None else SimulationState.zeros(
        cloud.n_nodes
    )
    f_ext = np.zeros((cloud.n_nodes, 3))
    snaps = _SnapshotReservoir(snapshot_limit)
    series = {k: [] for k in (
        "step", "time", "load_factor", "max_increment", "reaction", "ebc_error"
    )}
    u_anchor = None
    f_anchor = None
    adapt_on = True
    streak = 0
    converged = False
    det_lo, det_hi = math.inf, -math.inf
    last_corr = np.zeros_like(state.u_now)

    for _ in range(config.max_steps):
        fi = internal_force(state.u_now, pre, material)
        det_lo = min(det_lo, fi.det_min)
        det_hi = max(det_hi, fi.det_max)
        if steady and dr.adaptive:
            if u_anchor is None:
                u_anchor, f_anchor = state.u_now.copy(), fi.f
            elif state.step % dr.adapt_interval == 0 and state.step > 0:
                if adapt_on:
                    dr = adapt_dr_params(
                        state.u_now, u_anchor, fi.f, f_anchor, mass, dr
                    )
                u_anchor, f_anchor = state.u_now.copy(), fi.f

        load = smooth_load_factor(state.t + dr.h, pre.duration)
        ubar = ebc.ubar(load)
        if steady:
            pred = dr_step(state, f_ext, fi.f, mass, dr)
            alpha = dr.alpha
        else:
            pred = central_difference_step(state, f_ext, fi.f, mass, dr.h)
            alpha = dr.h * dr.h
        corr, tractions = ebc.correct(pred.u_now, ubar)
        u_next = pred.u_now + corr
        last_corr = corr
        state_next = SimulationState(
            u_now=u_next,
            u_prev=state.u_now,
            t=pred.t,
            step=pred.step,
            max_increment=float(np.abs(u_next - state.u_now).max()),
            kinetic_proxy=float(
                np.sum(mass[:, None] * (u_next - state.u_now) ** 2)
                / (2.0 * dr.h * dr.h)
            ),
        )
        reaction = ebc.reaction(tractions, alpha)
        violation = ebc.violation(u_next, ubar)

        series["step"].append(state_next.step)
        series["time"].append(state_next.t)
        series["load_factor"].append(load)
        series["max_increment"].append(state_next.max_increment)
        series["reaction"].append(reaction)
        series["ebc_error"].append(violation)
        snaps.offer(state_next.step, state_next.t, u_next)
        if progress is not None and state_next.step % 50 == 0:
            progress(state_next.step, state_next.max_increment)

        state = state_next
        if steady:
            # Near the threshold, freeze the damping: re-estimating it from
            # vanishing increments jitters beta and keeps feeding the very
            # modes being drained. Resume only if the error grows back.
            if load >= 1.0:
                if state.max_increment < 50.0 * pre.conv_tol:
                    adapt_on = False
                elif state.max_increment > 500.0 * pre.conv_tol:
                    adapt_on = True
            if load >= 1.0 and state.max_increment < pre.conv_tol:
                streak += 1
                if streak >= config.conv_window:
                    converged = True
                    break
            else:
                streak = 0
        else:
            if state.t >= pre.duration - 1e-15:
                converged = True
                break

    # Reaction-corrected equilibrium residual on the unconstrained nodes.
    fi = internal_force(state.u_now, pre, material)
    f_e = mass[:, None] * last_corr / (dr.alpha if steady else dr.h * dr.h)
    free = ~ebc.constrained_union(cloud.n_nodes)
    denom = float(np.abs(fi.f).max())
    residual = float(np.abs((f_ext + f_e - fi.f)[free]).max())
    residual_rel = residual / denom if denom > 0 else 0.0

    state.def_gradients = deformation_gradients(state.u_now, pre)
    result = SolveResult(
        u=state.u_now,
        state=state,
        series={
            k: (np.array(v) if k != "reaction" else np.array(v).reshape(-1, 3))
            for k, v in series.items()
        },
        snapshots=snaps.finalize(state.step, state.t, state.u_now),
        converged=converged,
        steps=state.step,
        mode=config.mode,
        reaction=series["reaction"][-1] if series["reaction"] else np.zeros(3),
        ebc_error_max=float(np.max(series["ebc_error"])) if series["ebc_error"] else 0.0,
        residual_rel=residual_rel,
        det_min=det_lo,
        det_max=det_hi,
        precomputed=pre,
    )
    if steady and not converged:
        raise ConvergenceError(state.step, state.max_increment, result=result)
    return result
