"""Line-oriented model file parsing and serialization.

Format: blank lines and ``#`` comments are ignored; a line consisting of a
section keyword opens that section. Sections:

    NODES          index x y z            (0-based, consecutive)
    CELLS          index n1 n2 n3 n4      (0-based, consecutive)
    FIXED          node indices (any number per line), clamped on all axes
    DRIVEN         node ux uy uz          (final displacement, m; * = free axis)
    EBC_SURFACE    n1 n2 n3               (optional boundary triangles)
    MATERIAL name  key value lines        (neo_hookean: young/poisson/density;
                                           ogden: mu1/a1/d1/density)
    CONFIG         key value lines        (optional solve options)

CONFIG keys and defaults when omitted:

    radius       influence radius, m        default: 2.8 x max nearest-neighbor distance
    mu           quadratic-term penalty     default: 1e-7
    tau          adaptive tolerance         default: off (fixed rule per cell)
    scheme       subdivision branching      default: 8      (2, 4 or 8)
    max_depth    recursion cap              default: 6
    rule_order   base rule polynomial order default: 2
    mode         steady | dynamic           default: steady
    h            explicit step, s           default: critical step x safety
    safety       critical-step factor       default: 0.5
    duration     load ramp time, s          default: 400 h (steady) / 1000 h (dynamic)
    damping      relaxation damping c       default: adaptive
    conv_tol     steady increment cutoff, m default: 1e-7 x domain diameter
    conv_window  consecutive steps below    default: 10
    max_steps    iteration cap              default: 20000
    ebc_method   sebciem | ebciem           default: ebciem if EBC_SURFACE given
    mass_scale   stepping-mass multiplier   default: 1.0
"""

import math
from pathlib import Path

import numpy as np

from .cloud import BoundarySpec, build_cloud
from .errors import ModelFormatError, MtledError
from .materials import NeoHookeanParams, OgdenParams
from .solver import Model, SolveConfig

_SECTIONS = ("NODES", "CELLS", "FIXED", "DRIVEN", "EBC_SURFACE", "MATERIAL", "CONFIG")

_MATERIALS = {
    "neo_hookean": ("young", "poisson", "density"),
    "ogden": ("mu1", "a1", "d1", "density"),
}

_CONFIG_TYPES = {
    "radius": float,
    "mu": float,
    "tau": float,
    "scheme": int,
    "max_depth": int,
    "rule_order": int,
    "mode": str,
    "h": float,
    "safety": float,
    "duration": float,
    "damping": float,
    "conv_tol": float,
    "conv_window": int,
    "max_steps": int,
    "ebc_method": str,
    "mass_scale": float,
}


def _fail(msg, line=None, section=None):
    raise ModelFormatError(msg, line=line, section=section)


def _float(tok, lineno, section):
    try:
        v = float(tok)
    except ValueError:
        _fail(f"expected a number, got {tok!r}", lineno, section)
    if not math.isfinite(v):
        _fail(f"non-finite value {tok!r}", lineno, section)
    return v


def _int(tok, lineno, section):
    try:
        return int(tok)
    except ValueError:
        _fail(f"expected an integer, got {tok!r}", lineno, section)


def parse_model(text, name="model"):
    """Parse model text into (Model, SolveConfig)."""
    nodes, cells, fixed, driven, surface = [], [], [], [], []
    material_name = None
    material_kv = {}
    config_kv = {}
    config_lines = {}
    section = None

    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        toks = line.split()
        if toks[0] in _SECTIONS:
            section = toks[0]
            if section == "MATERIAL":
                if len(toks) != 2:
                    _fail("MATERIAL requires exactly one name", lineno, section)
                if material_name is not None:
                    _fail("duplicate MATERIAL section", lineno, section)
                material_name = toks[1]
                if material_name not in _MATERIALS:
                    _fail(
                        f"unknown material {material_name!r} "
                        f"(expected one of {sorted(_MATERIALS)})",
                        lineno,
                        section,
                    )
            elif len(toks) != 1:
                _fail(f"unexpected tokens after {section}", lineno, section)
            continue
        if section is None:
            _fail(f"data before any section keyword: {line!r}", lineno, None)

        if section == "NODES":
            if len(toks) != 4:
                _fail("node line needs: index x y z", lineno, section)
            idx = _int(toks[0], lineno, section)
            if idx != len(nodes):
                _fail(f"node index {idx} out of order (expected {len(nodes)})",
                      lineno, section)
            nodes.append([_float(t, lineno, section) for t in toks[1:]])
        elif section == "CELLS":
            if len(toks) != 5:
                _fail("cell line needs: index n1 n2 n3 n4", lineno, section)
            idx = _int(toks[0], lineno, section)
            if idx != len(cells):
                _fail(f"cell index {idx} out of order (expected {len(cells)})",
                      lineno, section)
            cells.append((toks[1:], lineno))
        elif section == "FIXED":
            for t in toks:
                fixed.append((_int(t, lineno, section), lineno))
        elif section == "DRIVEN":
            if len(toks) != 4:
                _fail("driven line needs: node ux uy uz (* = free)", lineno, section)
            target = [
                math.nan if t == "*" else _float(t, lineno, section)
                for t in toks[1:]
            ]
            if all(math.isnan(v) for v in target):
                _fail("driven node with no constrained component", lineno, section)
            driven.append((_int(toks[0], lineno, section), target, lineno))
        elif section == "EBC_SURFACE":
            if len(toks) != 3:
                _fail("surface line needs: n1 n2 n3", lineno, section)
            surface.append(([_int(t, lineno, section) for t in toks], lineno))
        elif section == "MATERIAL":
            if len(toks) != 2:
                _fail("material line needs: key value", lineno, section)
            key = toks[0]
            if key not in _MATERIALS[material_name]:
                _fail(f"unknown {material_name} constant {key!r}", lineno, section)
            if key in material_kv:
                _fail(f"duplicate constant {key!r}", lineno, section)
            material_kv[key] = _float(toks[1], lineno, section)
        elif section == "CONFIG":
            if len(toks) != 2:
                _fail("config line needs: key value", lineno, section)
            key = toks[0]
            if key not in _CONFIG_TYPES:
                _fail(f"unknown config key {key!r}", lineno, section)
            if key in config_kv:
                _fail(f"duplicate config key {key!r}", lineno, section)
            caster = _CONFIG_TYPES[key]
            config_kv[key] = (
                toks[1] if caster is str else
                _int(toks[1], lineno, section) if caster is int else
                _float(toks[1], lineno, section)
            )
            config_lines[key] = lineno

    if not nodes:
        _fail("model has no NODES section (or it is empty)")
    if not cells:
        _fail("model has no CELLS section (or it is empty)")
    if material_name is None:
        _fail("model has no MATERIAL section")
    missing = [k for k in _MATERIALS[material_name] if k not in material_kv]
    if missing:
        _fail(f"material {material_name!r} missing constants: {missing}",
              section="MATERIAL")

    n_nodes = len(nodes)

    def _node_ref(idx, lineno, section):
        if not 0 <= idx < n_nodes:
            _fail(f"node reference {idx} out of range [0, {n_nodes})",
                  lineno, section)
        return idx

    cell_array = np.array(
        [
            [_node_ref(_int(t, ln, "CELLS"), ln, "CELLS") for t in toks]
            for toks, ln in cells
        ],
        dtype=np.int64,
    )
    fixed_idx = np.array(
        [_node_ref(i, ln, "FIXED") for i, ln in fixed], dtype=np.int64
    )
    driven_idx = np.array(
        [_node_ref(i, ln, "DRIVEN") for i, _, ln in driven], dtype=np.int64
    )
    driven_targets = np.array([t for _, t, _ in driven], dtype=float).reshape(-1, 3)
    surf = (
        np.array(
            [[_node_ref(i, ln, "EBC_SURFACE") for i in tri] for tri, ln in surface],
            dtype=np.int64,
        )
        if surface
        else None
    )

    density = material_kv.pop("density")
    try:
        if material_name == "neo_hookean":
            material = NeoHookeanParams(**material_kv)
        else:
            material = OgdenParams(**material_kv)
    except ValueError as exc:
        _fail(str(exc), section="MATERIAL")

    try:
        cloud = build_cloud(np.asarray(nodes, dtype=float), cell_array, density)
    except (MtledError, ValueError) as exc:
        raise ModelFormatError(str(exc), section="CELLS") from exc
    try:
        boundary = BoundarySpec(
            fixed_nodes=fixed_idx,
            driven_nodes=driven_idx,
            driven_targets=driven_targets,
        )
    except ValueError as exc:
        raise ModelFormatError(str(exc), section="DRIVEN") from exc

    try:
        config = SolveConfig(**config_kv)
    except ValueError as exc:
        raise ModelFormatError(str(exc), section="CONFIG") from exc
    if config.scheme not in (2, 4, 8):
        _fail("scheme must be 2, 4 or 8",
              config_lines.get("scheme"), "CONFIG")
    if config.ebc_method not in (None, "sebciem", "ebciem"):
        _fail("ebc_method must be sebciem or ebciem",
              config_lines.get("ebc_method"), "CONFIG")

    model = Model(
        cloud=cloud, boundary=boundary, material=material, surface=surf, name=name
    )
    return model, config


def load_model(path):
    """Read a model file; returns (Model, SolveConfig)."""
    p = Path(path)
    return parse_model(p.read_text(encoding="utf-8"), name=p.stem)


def _fmt(v):
    return repr(float(v))


def serialize_model(model, config=None):
    """Render a model (and optional config) back to the file format.

    Produces text that parses back to an equal model: floats are written
    with shortest round-trip precision.
    """
    cloud, boundary = model.cloud, model.boundary
    out = []
    out.append("NODES")
    for i, p in enumerate(cloud.nodes):
        out.append(f"{i} {_fmt(p[0])} {_fmt(p[1])} {_fmt(p[2])}")
    out.append("CELLS")
    for i, c in enumerate(cloud.cells):
        out.append(f"{i} {c[0]} {c[1]} {c[2]} {c[3]}")
    if boundary.fixed_nodes.size:
        out.append("FIXED")
        for i in boundary.fixed_nodes:
            out.append(str(int(i)))
    if boundary.driven_nodes.size:
        out.append("DRIVEN")
        for i, t in zip(boundary.driven_nodes, boundary.driven_targets):
            comps = " ".join("*" if math.isnan(v) else _fmt(v) for v in t)
            out.append(f"{int(i)} {comps}")
    if model.surface is not None and len(model.surface):
        out.append("EBC_SURFACE")
        for tri in model.surface:
            out.append(f"{int(tri[0])} {int(tri[1])} {int(tri[2])}")

    m = model.material
    if isinstance(m, NeoHookeanParams):
        out.append("MATERIAL neo_hookean")
        out.append(f"young {_fmt(m.young)}")
        out.append(f"poisson {_fmt(m.poisson)}")
    elif isinstance(m, OgdenParams):
        out.append("MATERIAL ogden")
        out.append(f"mu1 {_fmt(m.mu1)}")
        out.append(f"a1 {_fmt(m.a1)}")
        out.append(f"d1 {_fmt(m.d1)}")
    else:
        raise ValueError(f"cannot serialize material {type(m).__name__}")
    out.append(f"density {_fmt(cloud.density)}")

    if config is not None:
        keys = [k for k in _CONFIG_TYPES if getattr(config, k) is not None]
        if keys:
            out.append("CONFIG")
            for k in keys:
                v = getattr(config, k)
                out.append(f"{k} {v if isinstance(v, (int, str)) else _fmt(v)}")
    return "\n".join(out) + "\n"


def save_model(path, model, config=None):
    Path(path).write_text(serialize_model(model, config), encoding="utf-8")


def models_equal(a, b):
    """Structural equality of two (Model, SolveConfig) pairs (test helper)."""
    (ma, ca), (mb, cb) = a, b
    if not (
        np.array_equal(ma.cloud.nodes, mb.cloud.nodes)
        and np.array_equal(ma.cloud.cells, mb.cloud.cells)
        and ma.cloud.density == mb.cloud.density
        and np.array_equal(ma.boundary.fixed_nodes, mb.boundary.fixed_nodes)
        and np.array_equal(ma.boundary.driven_nodes, mb.boundary.driven_nodes)
        and np.array_equal(
            ma.boundary.driven_targets, mb.boundary.driven_targets, equal_nan=True
        )
    ):
        return False
    if (ma.surface is None) != (mb.surface is None):
        return False
    if ma.surface is not None and not np.array_equal(ma.surface, mb.surface):
        return False
    if type(ma.material) is not type(mb.material) or ma.material != mb.material:
        return False
    return ca == cb
