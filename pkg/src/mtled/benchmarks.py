"""Built-in benchmark geometries: compressed cube, indented cylinder.

Both generators produce regular structured clouds with a six-tetrahedra
split per grid box (all tets share the box diagonal, so the split tiles
space consistently) and per-axis boundary constraints.
"""

from dataclasses import replace
from itertools import permutations, product

import numpy as np

from .cloud import BoundarySpec, build_cloud
from .materials import NeoHookeanParams, OgdenParams
from .metrics import cube_uniaxial_solution
from .solver import Model, SimulationState, SolveConfig, precompute, solve

CUBE_LAYOUTS = {"coarse": (6, 6, 6), "fine": (15, 15, 15)}


def _kuhn_cells(nx, ny, nz):
    """Six tets per grid box, all sharing the (0,0,0)-(1,1,1) diagonal."""

    def nid(i, j, k):
        return (i * ny + j) * nz + k

    cells = []
    for i, j, k in product(range(nx - 1), range(ny - 1), range(nz - 1)):
        for perm in permutations(range(3)):
            off = np.zeros(3, dtype=int)
            verts = [nid(i, j, k)]
            for ax in perm[:2]:
                off[ax] = 1
                verts.append(nid(i + off[0], j + off[1], k + off[2]))
            verts.append(nid(i + 1, j + 1, k + 1))
            cells.append(verts)
    return np.asarray(cells, dtype=np.int64)


def _grid_layers(nx, ny, nz):
    """Node index arrays of the k = 0 and k = nz-1 layers."""
    base, top = [], []
    for i in range(nx):
        for j in range(ny):
            base.append((i * ny + j) * nz)
            top.append((i * ny + j) * nz + nz - 1)
    return np.asarray(base, dtype=np.int64), np.asarray(top, dtype=np.int64)


def _grid_face_triangles(nx, ny, nz, k):
    """Two triangles per grid square on the z-layer ``k`` (diagonal-matched)."""

    def nid(i, j):
        return (i * ny + j) * nz + k

    tris = []
    for i in range(nx - 1):
        for j in range(ny - 1):
            tris.append((nid(i, j), nid(i + 1, j), nid(i + 1, j + 1)))
            tris.append((nid(i, j), nid(i + 1, j + 1), nid(i, j + 1)))
    return np.asarray(tris, dtype=np.int64)


def make_cube_model(
    layout="coarse",
    edge=0.1,
    compression=0.2,
    young=3000.0,
    poisson=0.49,
    density=1000.0,
    radius_factor=2.8,
    rule_order=2,
    tau=None,
    **config_overrides,
):
    """Uniaxial cube compression: base held in z, top driven down in z.

    Lateral axes stay free everywhere so the homogeneous closed-form
    solution applies. Returns (Model, SolveConfig).

    The defaults put just under three grid spacings inside the support
    radius. That is the smooth regime for this layout: supports span
    several node shells, the shape-derivative field stays flat between
    nodes, and the 4-point cell rule keeps every lumped mass positive.
    Shrinking the radius toward one spacing makes the derivative field
    spike mid-cell (eight equidistant corners nearly degenerate for a
    quadratic basis) and adaptive refinement chases those spikes.
    """
    nx, ny, nz = CUBE_LAYOUTS[layout] if isinstance(layout, str) else layout
    xs = np.linspace(0.0, edge, nx)
    ys = np.linspace(0.0, edge, ny)
    zs = np.linspace(0.0, edge, nz)
    nodes = np.stack(
        np.meshgrid(xs, ys, zs, indexing="ij"), axis=-1
    ).reshape(-1, 3)
    cloud = build_cloud(nodes, _kuhn_cells(nx, ny, nz), density)

    base, top = _grid_layers(nx, ny, nz)
    driven = np.concatenate([base, top])
    targets = np.full((driven.size, 3), np.nan)
    targets[: base.size, 2] = 0.0
    targets[base.size:, 2] = -compression * edge
    boundary = BoundarySpec(
        fixed_nodes=np.array([], dtype=np.int64),
        driven_nodes=driven,
        driven_targets=targets,
    )
    material = NeoHookeanParams(young=young, poisson=poisson)
    surface = np.concatenate([
        _grid_face_triangles(nx, ny, nz, 0),
        _grid_face_triangles(nx, ny, nz, nz - 1),
    ])
    spacing = max(edge / (nx - 1), edge / (ny - 1), edge / (nz - 1))
    config = SolveConfig(
        radius=radius_factor * spacing,
        rule_order=rule_order,
        tau=tau,
        **config_overrides,
    )
    return Model(cloud=cloud, boundary=boundary, material=material,
                 surface=surface, name=f"cube_{layout}"), config


def cube_reference(model):
    """Closed-form displacement for a model built by make_cube_model."""
    targets = model.boundary.driven_targets[:, 2]
    uz = float(np.nanmin(targets))
    edge = float(model.cloud.nodes[:, 2].max() - model.cloud.nodes[:, 2].min())
    compression = -uz / edge
    return cube_uniaxial_solution(model.cloud.nodes, model.material, compression)


def _disk_grid(m, radius):
    """Square-to-disk map: grid lines stay smooth, rim lands on the circle."""
    u = np.linspace(-1.0, 1.0, m)
    uu, vv = np.meshgrid(u, u, indexing="ij")
    x = radius * uu * np.sqrt(1.0 - 0.5 * vv * vv)
    y = radius * vv * np.sqrt(1.0 - 0.5 * uu * uu)
    return x, y


def make_cylinder_model(
    m=11,
    layers=8,
    height=0.017,
    diameter=0.03,
    indenter_diameter=0.01,
    indentation=0.7,
    mu1=643.6,
    a1=-1.1,
    d1=1.2598e-4,
    density=1000.0,
    radius_factor=2.2,
    rule_order=2,
    **config_overrides,
):
    """Cylinder on a rigid platform indented from above.

    The base layer is fully fixed (no-slip platform); top-layer nodes under
    the indenter footprint move with the indenter — all three components
    prescribed, so the patch translates rigidly down to ``indentation`` x
    height. Gripping the patch laterally is what keeps the fold region at
    the indenter edge stable at extreme depths: with the lateral axes free
    the material extrudes sideways from under the rim, the cells there
    collapse toward zero volume, and the reaction force dips instead of
    rising. Returns (Model, SolveConfig).

    The default support radius sits a notch below the cube generator's:
    the disk grid is denser in-plane than in z, so 2.2 x the max spacing
    already spans multiple shells (positive lumped masses with the
    4-point rule) while relaxation converges in roughly a third of the
    steps the wider support needs.
    """
    x2d, y2d = _disk_grid(m, diameter / 2.0)
    zs = np.linspace(0.0, height, layers)
    nodes = np.empty((m * m * layers, 3))
    for i in range(m):
        for j in range(m):
            idx = (i * m + j) * layers
            nodes[idx:idx + layers, 0] = x2d[i, j]
            nodes[idx:idx + layers, 1] = y2d[i, j]
            nodes[idx:idx + layers, 2] = zs
    cloud = build_cloud(nodes, _kuhn_cells(m, m, layers), density)

    base, top = _grid_layers(m, m, layers)
    r2 = nodes[top, 0] ** 2 + nodes[top, 1] ** 2
    under = top[r2 <= (indenter_diameter / 2.0) ** 2 * (1.0 + 1e-9)]
    if under.size == 0:
        raise ValueError("no top-layer nodes under the indenter footprint")
    targets = np.zeros((under.size, 3))
    targets[:, 2] = -indentation * height
    boundary = BoundarySpec(
        fixed_nodes=base,
        driven_nodes=under,
        driven_targets=targets,
    )
    material = OgdenParams(mu1=mu1, a1=a1, d1=d1)
    spacing = max(diameter / (m - 1), height / (layers - 1))
    config = SolveConfig(
        radius=radius_factor * spacing,
        rule_order=rule_order,
        **config_overrides,
    )
    return Model(cloud=cloud, boundary=boundary, material=material,
                 name="cylinder"), config


def staged_indentation(model, config, n_stages=7, precomputed=None, progress=None):
    """Drive the boundary to full load through equilibrated stages.

    Each stage ramps the prescribed displacements from the previous stage's
    level to the next fraction of the full target and relaxes to steady
    state, so every recorded (depth, force) pair is an equilibrium point.
    Returns (precomputed, stages) with stages a list of (fraction, result).
    """
    pre = precomputed if precomputed is not None else precompute(model, config)
    full = pre.ebc.targets
    prev = tuple(None if t is None else np.zeros_like(t) for t in full)
    state = SimulationState.zeros(model.cloud.n_nodes)
    stages = []
    for stage in range(1, n_stages + 1):
        frac = stage / n_stages
        tgt = tuple(None if t is None else t * frac for t in full)
        ebc_k = replace(pre.ebc, targets=tgt, targets_base=prev)
        pre_k = replace(pre, ebc=ebc_k)
        res = solve(model, config, precomputed=pre_k, initial_state=state,
                    progress=progress)
        stages.append((frac, res))
        state = SimulationState(u_now=res.u.copy(), u_prev=res.u.copy())
        prev = tgt
    return pre, stages


def force_depth_curve(model, stages):
    """(n_stages, 2) array of indentation depth (m) vs |z reaction| (N)."""
    full_depth = float(np.nanmax(np.abs(model.boundary.driven_targets[:, 2])))
    rows = [
        (frac * full_depth, abs(float(res.reaction[2]))) for frac, res in stages
    ]
    return np.asarray(rows)
