"""Result export: VTK legacy ASCII, CSV step series, JSON run summary.

All writers are deterministic: identical inputs produce byte-identical
files (17-significant-digit floats, LF newlines, ASCII).
"""

import json
from pathlib import Path

import numpy as np


def _g(v):
    return f"{float(v):.17g}"


def write_vtk(path, nodes, cells, point_data=None, title="mtled output"):
    """Write an unstructured tetrahedral grid with optional nodal fields.

    ``point_data`` maps field name -> (N,) scalars or (N, 3) vectors;
    fields are emitted in dict order.
    """
    nodes = np.asarray(nodes, dtype=float)
    cells = np.asarray(cells, dtype=np.int64)
    n, m = nodes.shape[0], cells.shape[0]
    lines = [
        "# vtk DataFile Version 3.0",
        str(title).splitlines()[0] if str(title) else "mtled output",
        "ASCII",
        "DATASET UNSTRUCTURED_GRID",
        f"POINTS {n} double",
    ]
    for p in nodes:
        lines.append(f"{_g(p[0])} {_g(p[1])} {_g(p[2])}")
    lines.append(f"CELLS {m} {5 * m}")
    for c in cells:
        lines.append(f"4 {c[0]} {c[1]} {c[2]} {c[3]}")
    lines.append(f"CELL_TYPES {m}")
    lines.extend(["10"] * m)
    if point_data:
        lines.append(f"POINT_DATA {n}")
        for name, arr in point_data.items():
            arr = np.asarray(arr, dtype=float)
            if arr.shape == (n,):
                lines.append(f"SCALARS {name} double 1")
                lines.append("LOOKUP_TABLE default")
                lines.extend(_g(v) for v in arr)
            elif arr.shape == (n, 3):
                lines.append(f"VECTORS {name} double")
                lines.extend(f"{_g(v[0])} {_g(v[1])} {_g(v[2])}" for v in arr)
            else:
                raise ValueError(
                    f"field {name!r} must be ({n},) or ({n}, 3), got {arr.shape}"
                )
    Path(path).write_bytes(("\n".join(lines) + "\n").encode("ascii"))


def read_vtk(path):
    """Read back a file written by :func:`write_vtk`.

    Returns (points, cells, point_data). Not a general VTK reader — it
    understands exactly the subset this package emits.
    """
    tokens = []
    line_iter = Path(path).read_text(encoding="ascii").splitlines()
    it = iter(line_iter)
    header = [next(it), next(it), next(it), next(it)]
    if "vtk DataFile" not in header[0] or header[2] != "ASCII":
        raise ValueError("not an ASCII legacy VTK file")
    if header[3] != "DATASET UNSTRUCTURED_GRID":
        raise ValueError("not an unstructured grid")
    for line in it:
        tokens.extend(line.split())
    pos = 0

    def take(k):
        nonlocal pos
        out = tokens[pos:pos + k]
        pos += k
        return out

    if take(1)[0] != "POINTS":
        raise ValueError("POINTS section missing")
    n = int(take(1)[0])
    take(1)  # dtype
    points = np.array(take(3 * n), dtype=float).reshape(n, 3)
    if take(1)[0] != "CELLS":
        raise ValueError("CELLS section missing")
    m = int(take(1)[0])
    take(1)  # total ints
    cells = np.empty((m, 4), dtype=np.int64)
    for i in range(m):
        row = take(5)
        if row[0] != "4":
            raise ValueError("only tetrahedra are supported")
        cells[i] = [int(v) for v in row[1:]]
    if take(1)[0] != "CELL_TYPES":
        raise ValueError("CELL_TYPES section missing")
    take(1)
    take(m)
    data = {}
    if pos < len(tokens):
        if take(1)[0] != "POINT_DATA":
            raise ValueError("unexpected trailing section")
        take(1)
        while pos < len(tokens):
            kind = take(1)[0]
            if kind == "VECTORS":
                name = take(1)[0]
                take(1)
                data[name] = np.array(take(3 * n), dtype=float).reshape(n, 3)
            elif kind == "SCALARS":
                name = take(1)[0]
                take(2)  # dtype, component count
                take(2)  # LOOKUP_TABLE default
                data[name] = np.array(take(n), dtype=float)
            else:
                raise ValueError(f"unsupported attribute {kind!r}")
    return points, cells, data


CSV_HEADER = "step,time,load_factor,max_increment,reaction_x,reaction_y,reaction_z"


def write_csv_series(path, series):
    """Per-step diagnostics CSV from a solve's ``series`` dict."""
    steps = np.asarray(series["step"])
    time = np.asarray(series["time"], dtype=float)
    load = np.asarray(series["load_factor"], dtype=float)
    inc = np.asarray(series["max_increment"], dtype=float)
    reaction = np.asarray(series["reaction"], dtype=float).reshape(-1, 3)
    rows = [CSV_HEADER]
    for k in range(len(steps)):
        rows.append(
            f"{int(steps[k])},{_g(time[k])},{_g(load[k])},{_g(inc[k])},"
            f"{_g(reaction[k, 0])},{_g(reaction[k, 1])},{_g(reaction[k, 2])}"
        )
    Path(path).write_bytes(("\n".join(rows) + "\n").encode("ascii"))


def write_summary_json(path, summary):
    """Deterministic JSON summary (sorted keys, stable float repr)."""
    Path(path).write_bytes(
        (json.dumps(summary, sort_keys=True, indent=2) + "\n").encode("ascii")
    )


def load_displacement_csv(path):
    """Read an (N, 3) displacement table; a non-numeric first line is a header."""
    lines = [
        ln.strip() for ln in Path(path).read_text(encoding="utf-8").splitlines()
    ]
    lines = [ln for ln in lines if ln]
    if not lines:
        raise ValueError(f"{path}: empty displacement table")
    start = 0
    try:
        [float(v) for v in lines[0].replace(",", " ").split()]
    except ValueError:
        start = 1
    rows = []
    for ln in lines[start:]:
        vals = [float(v) for v in ln.replace(",", " ").split()]
        if len(vals) != 3:
            raise ValueError(f"{path}: expected 3 columns, got {len(vals)}")
        rows.append(vals)
    return np.asarray(rows, dtype=float)
