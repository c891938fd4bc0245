"""Command-line interface.

Subcommands: solve, verify cube, verify quadrature, check model.
Exit codes: 0 success, 1 validation failure, 2 solver failure.
"""

import argparse
import math
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from .benchmarks import (
    cube_reference,
    make_cube_model,
)
from .cloud import check_admissibility, nearest_neighbor_distances
from .errors import ModelFormatError, MtledError
from .export import (
    load_displacement_csv,
    write_csv_series,
    write_summary_json,
    write_vtk,
)
from .metrics import error_report
from .model_io import load_model
from .quadrature import (
    REF_VOLUME,
    AdaptiveConfig,
    adaptive_integrate,
    fixed_integration_set,
    less_smooth_integrand,
    make_rule,
)
from .solver import critical_timestep, lump_mass, precompute, solve
from .mmls import MmlsConfig, MmlsEvaluator
from . import solver as _solver


def _say(*parts):
    print(*parts, file=sys.stderr)


def _progress(step, inc):
    _say(f"  step {step}: max increment {inc:.3e} m")


def _snapshot_files(outdir, name, snapshots, cloud, count):
    if count <= 0:
        return []
    written = []
    last = len(snapshots) - 1
    for k in range(count):
        pick = snapshots[round(k * last / (count - 1))] if count > 1 else snapshots[last]
        step, t, u = pick
        path = outdir / f"{name}_snap_{k:04d}.vtk"
        write_vtk(
            path,
            cloud.nodes,
            cloud.cells,
            {"displacement": u},
            title=f"{name} step {step} t {t:.9e}",
        )
        written.append(path)
    return written


def cmd_solve(args):
    model, config = load_model(args.model)
    if args.mode:
        config = replace(config, mode=args.mode)
    if args.tau is not None:
        config = replace(config, tau=args.tau)
    outdir = Path(args.out)
    outdir.mkdir(parents=True, exist_ok=True)

    pre = precompute(model, config)
    _say(
        f"{model.name}: {model.cloud.n_nodes} nodes, {model.cloud.n_cells} cells, "
        f"{pre.integration.npoints} integration points"
    )
    _say(
        f"radius {pre.radius:.6g} m, step {pre.h:.6g} s, "
        f"load duration {pre.duration:.6g} s, mode {config.mode}"
    )
    res = solve(model, config, precomputed=pre, progress=_progress)

    fields = {"displacement": res.u}
    summary = {
        "name": model.name,
        "mode": res.mode,
        "n_nodes": model.cloud.n_nodes,
        "n_cells": model.cloud.n_cells,
        "n_integration_points": pre.integration.npoints,
        "integration_warnings": len(pre.integration.warnings),
        "radius": pre.radius,
        "h": pre.h,
        "duration": pre.duration,
        "steps": res.steps,
        "converged": res.converged,
        "reaction": [float(v) for v in res.reaction],
        "ebc_error_max": res.ebc_error_max,
        "residual_rel": res.residual_rel,
        "det_min": res.det_min,
        "det_max": res.det_max,
        "total_mass": float(np.sum(pre.mass)),
    }
    status = 0
    if args.reference:
        ref = load_displacement_csv(args.reference)
        if ref.shape != res.u.shape:
            _say(
                f"reference shape {ref.shape} does not match "
                f"{res.u.shape} nodal displacements"
            )
            return 1
        rep = error_report(res.u, ref)
        for line in rep.lines():
            print(line)
        summary["nrmse"] = [float(v) for v in rep.nrmse]
        fields["nre"] = rep.nre

    write_vtk(outdir / f"{model.name}_final.vtk", model.cloud.nodes,
              model.cloud.cells, fields, title=f"{model.name} final")
    _snapshot_files(outdir, model.name, res.snapshots, model.cloud, args.snapshots)
    write_csv_series(outdir / f"{model.name}_series.csv", res.series)
    write_summary_json(outdir / f"{model.name}_summary.json", summary)

    print(
        f"{model.name}: {'converged' if res.converged else 'finished'} in "
        f"{res.steps} steps; reaction "
        f"({res.reaction[0]:.6g}, {res.reaction[1]:.6g}, {res.reaction[2]:.6g}) N; "
        f"max boundary error {res.ebc_error_max:.3e} m; "
        f"equilibrium residual {res.residual_rel:.3e}"
    )
    print(f"outputs in {outdir}")
    return status


def _cube_run(layout, tau):
    model, config = make_cube_model(layout, tau=tau)
    pre = precompute(model, config)
    res = solve(model, config, precomputed=pre)
    u_ref, lateral = cube_reference(model)
    rep = error_report(res.u, u_ref)
    return model, pre, res, rep, lateral


def cmd_verify_cube(args):
    rows = [("fixed 4-pt", None)]
    if args.tau is not None:
        rows.append((f"adaptive tau={args.tau:g}", args.tau))
    failures = []
    header = (
        f"{'run':>22} {'points':>8} {'steps':>7} {'nrmse_x':>10} "
        f"{'nrmse_y':>10} {'nrmse_z':>10} {'ebc_max':>10} {'residual':>10}"
    )
    lines = []
    lateral = None
    for label, tau in rows:
        _say(f"running {args.nodes} cube, {label} ...")
        model, pre, res, rep, lateral = _cube_run(args.nodes, tau)
        lines.append(
            f"{label:>22} {pre.integration.npoints:>8} {res.steps:>7} "
            f"{rep.nrmse[0]:>10.3e} {rep.nrmse[1]:>10.3e} {rep.nrmse[2]:>10.3e} "
            f"{res.ebc_error_max:>10.3e} {res.residual_rel:>10.3e}"
        )
        bound = 5e-3 if tau is None or tau > 0.01 + 1e-12 else 5e-4
        if not rep.nrmse[2] <= bound:
            failures.append(
                f"{label}: nrmse_z {rep.nrmse[2]:.3e} exceeds {bound:g}"
            )
    print(f"cube {args.nodes}: {model.cloud.n_nodes} nodes, "
          f"{model.cloud.n_cells} cells")
    print(f"closed-form lateral stretch: {lateral:.6f}")
    print(header)
    for line in lines:
        print(line)
    for f in failures:
        print(f"FAIL {f}")
    return 1 if failures else 0


def _monomial_reference(a, b, c):
    # integral of x^a y^b z^c over the reference tetrahedron
    return (
        math.factorial(a) * math.factorial(b) * math.factorial(c)
        / math.factorial(a + b + c + 3)
    )


def cmd_verify_quadrature(args):
    failures = []
    print("base-rule degree exactness (reference tetrahedron):")
    for order in range(1, 7):
        rule = make_rule(order)
        worst = 0.0
        for total in range(rule.degree + 1):
            for a in range(total + 1):
                for b in range(total - a + 1):
                    c = total - a - b
                    x, y, z = rule.bary[:, 1], rule.bary[:, 2], rule.bary[:, 3]
                    approx = float(np.dot(rule.weights, x**a * y**b * z**c))
                    exact = _monomial_reference(a, b, c)
                    worst = max(worst, abs(approx - exact) / abs(exact))
        ok = worst <= 1e-12
        print(f"  order {order} ({rule.npoints:>3} pts, degree {rule.degree}): "
              f"max rel err {worst:.3e} {'ok' if ok else 'FAIL'}")
        if not ok:
            failures.append(f"order {order} exactness {worst:.3e}")

    model, config = make_cube_model("coarse")
    cloud = model.cloud
    center = cloud.nodes.mean(axis=0)
    width = cloud.diameter / 20.0

    def bump(pts):
        d2 = np.sum((np.asarray(pts) - center) ** 2, axis=-1)
        return np.exp(-d2 / (2.0 * width * width))[..., None]

    print("volume conservation under refinement (sharp bump integrand):")
    for scheme in (2, 4, 8):
        iset = adaptive_integrate(
            cloud, bump, AdaptiveConfig(tau=0.05, scheme=scheme, max_depth=4)
        )
        rel = abs(iset.total_weight - cloud.total_volume) / cloud.total_volume
        ok = rel <= 1e-10
        print(f"  scheme {scheme}: {iset.npoints:>6} pts, max depth "
              f"{int(iset.depths.max())}, volume error {rel:.3e} "
              f"{'ok' if ok else 'FAIL'}")
        if not ok:
            failures.append(f"scheme {scheme} volume error {rel:.3e}")

    print("adaptive point-count trend (shape-derivative integrand):")
    evaluator = MmlsEvaluator(cloud, MmlsConfig(radius=config.radius))
    integrand = lambda pts: less_smooth_integrand(evaluator, pts)
    counts = []
    for tau in (0.1, 0.05, 0.01):
        iset = adaptive_integrate(cloud, integrand, AdaptiveConfig(tau=tau))
        counts.append(iset.npoints)
        print(f"  tau {tau:g}: {iset.npoints} points")
    if not (counts[0] <= counts[1] <= counts[2]):
        failures.append(f"point counts {counts} not monotone as tau decreases")

    for f in failures:
        print(f"FAIL {f}")
    return 1 if failures else 0


def cmd_check(args):
    model, config = load_model(args.path)
    cloud = model.cloud
    radius = config.radius
    if radius is None:
        radius = 2.8 * float(nearest_neighbor_distances(cloud).max())
    rule = make_rule(config.rule_order)
    iset = fixed_integration_set(cloud, rule)
    mu = config.mu if np.isscalar(config.mu) else 1e-7
    report = check_admissibility(cloud, iset.points, radius, mu=mu)
    print(f"{model.name}: {cloud.n_nodes} nodes, {cloud.n_cells} cells, "
          f"{iset.npoints} integration points (order {config.rule_order})")
    print(f"influence radius: {radius:.6g} m")
    print(f"support count: min {int(report.support_counts.min())}, "
          f"max {int(report.support_counts.max())}")
    finite = report.condition[np.isfinite(report.condition)]
    if finite.size:
        print(f"moment condition: max {finite.max():.3e}")
    if report.flagged:
        print(f"{len(report.flagged)} inadmissible integration points:")
        for fp in report.flagged[:20]:
            print(f"  point {fp.index}: {fp.reason} "
                  f"({fp.support_count} support nodes)")
        if len(report.flagged) > 20:
            print(f"  ... and {len(report.flagged) - 20} more")
        return 1

    evaluator = MmlsEvaluator(cloud, MmlsConfig(radius=radius, mu=config.mu))
    phi_op, _ = _solver.build_operators(evaluator, iset.points)
    mass = lump_mass(cloud, iset, phi_op)
    dt = critical_timestep(cloud, model.material, radius=radius,
                           safety=config.safety)
    print(f"total mass: {np.sum(mass):.9g} kg "
          f"(density x volume = {cloud.density * cloud.total_volume:.9g})")
    print(f"nodal mass: min {mass.min():.6g}, max {mass.max():.6g} kg")
    print(f"critical step (safety {config.safety:g}): {dt:.6g} s")
    return 0


def build_parser():
    parser = argparse.ArgumentParser(
        prog="mtled",
        description="Meshless total-Lagrangian explicit solver for soft solids",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_solve = sub.add_parser("solve", help="run a model file")
    p_solve.add_argument("model", help="model file path")
    p_solve.add_argument("--out", default="out", help="output directory")
    p_solve.add_argument("--mode", choices=("steady", "dynamic"))
    p_solve.add_argument("--tau", type=float,
                         help="adaptive integration tolerance")
    p_solve.add_argument("--snapshots", type=int, default=5,
                         help="number of snapshot VTK files")
    p_solve.add_argument("--reference",
                         help="CSV of reference displacements for error metrics")
    p_solve.set_defaults(func=cmd_solve)

    p_verify = sub.add_parser("verify", help="built-in verification runs")
    vsub = p_verify.add_subparsers(dest="target", required=True)
    p_cube = vsub.add_parser("cube", help="cube compression vs closed form")
    p_cube.add_argument("--nodes", choices=sorted(("coarse", "fine")),
                        default="coarse")
    p_cube.add_argument("--tau", type=float,
                        help="also run adaptively integrated variant")
    p_cube.set_defaults(func=cmd_verify_cube)
    p_quad = vsub.add_parser("quadrature",
                             help="rule exactness and refinement trends")
    p_quad.set_defaults(func=cmd_verify_quadrature)

    p_check = sub.add_parser("check", help="static model diagnostics")
    csub = p_check.add_subparsers(dest="target", required=True)
    p_model = csub.add_parser("model", help="admissibility / mass / step report")
    p_model.add_argument("path", help="model file path")
    p_model.set_defaults(func=cmd_check)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ModelFormatError as exc:
        _say(f"model error: {exc}")
        return 1
    except FileNotFoundError as exc:
        _say(f"file error: {exc}")
        return 1
    except MtledError as exc:
        _say(f"solver error: {exc}")
        return 2
    except ValueError as exc:
        _say(f"invalid input: {exc}")
        return 1
