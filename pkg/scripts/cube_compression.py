#!/usr/bin/env python3
"""Cube compression study: solver accuracy against the closed-form solution.

Runs the built-in cube benchmark at one or more layouts, with the fixed
4-point cell rule and (optionally) adaptively refined integration, and
prints an error table. Writes VTK/CSV artifacts per run when --out is given.

Examples:
    python3 scripts/cube_compression.py
    python3 scripts/cube_compression.py --layouts coarse fine --tau 0.01
    python3 scripts/cube_compression.py --compression 0.3 --out results/
"""

import argparse
import sys
import time
from pathlib import Path

import numpy as np

from mtled.benchmarks import cube_reference, make_cube_model
from mtled.export import write_csv_series, write_summary_json, write_vtk
from mtled.metrics import error_report
from mtled.solver import precompute, solve


def run_one(layout, tau, compression, out):
    model, config = make_cube_model(layout, compression=compression, tau=tau)
    t0 = time.perf_counter()
    pre = precompute(model, config)
    res = solve(model, config, precomputed=pre)
    wall = time.perf_counter() - t0
    u_ref, lateral = cube_reference(model)
    rep = error_report(res.u, u_ref)
    label = f"{layout} {'fixed' if tau is None else f'tau={tau:g}'}"
    print(
        f"{label:>18} {model.cloud.n_nodes:>6} {pre.integration.npoints:>8} "
        f"{res.steps:>7} {rep.nrmse[2]:>10.3e} {res.ebc_error_max:>10.3e} "
        f"{res.residual_rel:>10.3e} {wall:>7.1f}s"
    )
    if out is not None:
        stem = f"cube_{layout}_{'fixed' if tau is None else f'tau{tau:g}'}"
        out.mkdir(parents=True, exist_ok=True)
        write_vtk(out / f"{stem}.vtk", model.cloud.nodes, model.cloud.cells,
                  {"displacement": res.u, "reference": u_ref, "nre": rep.nre})
        write_csv_series(out / f"{stem}_series.csv", res.series)
        write_summary_json(out / f"{stem}.json", {
            "layout": str(layout), "tau": tau, "compression": compression,
            "n_nodes": model.cloud.n_nodes,
            "n_points": pre.integration.npoints,
            "steps": res.steps, "wall_s": wall,
            "nrmse": [float(v) for v in rep.nrmse],
            "lateral_stretch": lateral,
            "ebc_error_max": res.ebc_error_max,
            "residual_rel": res.residual_rel,
        })
    return rep


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--layouts", nargs="+", default=["coarse"],
                    help="coarse, fine, or NX,NY,NZ triples")
    ap.add_argument("--tau", type=float, default=None,
                    help="also run each layout with adaptive integration")
    ap.add_argument("--compression", type=float, default=0.2)
    ap.add_argument("--out", type=Path, default=None,
                    help="directory for VTK/CSV/JSON artifacts")
    args = ap.parse_args(argv)

    layouts = []
    for item in args.layouts:
        if "," in item:
            layouts.append(tuple(int(v) for v in item.split(",")))
        else:
            layouts.append(item)

    print(f"{'run':>18} {'nodes':>6} {'points':>8} {'steps':>7} "
          f"{'nrmse_z':>10} {'ebc_max':>10} {'residual':>10} {'wall':>8}")
    for layout in layouts:
        run_one(layout, None, args.compression, args.out)
        if args.tau is not None:
            run_one(layout, args.tau, args.compression, args.out)
    return 0


if __name__ == "__main__":
    sys.exit(main())
