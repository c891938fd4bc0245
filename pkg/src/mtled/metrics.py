"""Error metrics and closed-form reference fields for verification runs."""

from dataclasses import dataclass

import numpy as np
from scipy.optimize import brentq

from .materials import spk_stress


def _check_fields(u, u_ref):
    u = np.asarray(u, dtype=float)
    u_ref = np.asarray(u_ref, dtype=float)
    if u.shape != u_ref.shape or u.ndim != 2 or u.shape[1] != 3:
        raise ValueError("expected matching (N, 3) arrays")
    rng = u_ref.max(axis=0) - u_ref.min(axis=0)
    if (rng <= 0.0).any():
        axis = int(np.argmax(rng <= 0.0))
        raise ValueError(f"reference axis {axis} has zero range")
    return u, u_ref, rng


def nrmse(u, u_ref):
    """Per-axis RMS error divided by the reference range of that axis, (3,)."""
    u, u_ref, rng = _check_fields(u, u_ref)
    return np.sqrt(np.mean((u - u_ref) ** 2, axis=0)) / rng


def nre_field(u, u_ref):
    """Per-node, per-axis |error| divided by the reference range, (N, 3)."""
    u, u_ref, rng = _check_fields(u, u_ref)
    return np.abs(u - u_ref) / rng


@dataclass(frozen=True)
class ErrorReport:
    """Summary of a nodal error field against a reference field."""

    nrmse: np.ndarray          # (3,) per axis
    nre: np.ndarray            # (N, 3) per node per axis
    nre_min: float
    nre_max: float
    histogram: np.ndarray      # counts of per-node worst-axis values; sums to N
    bin_edges: np.ndarray

    def lines(self):
        out = [
            "nrmse_x={:.6e} nrmse_y={:.6e} nrmse_z={:.6e}".format(*self.nrmse),
            f"nre min={self.nre_min:.6e} max={self.nre_max:.6e}",
        ]
        for k in range(len(self.histogram)):
            out.append(
                f"  [{self.bin_edges[k]:.4e}, {self.bin_edges[k + 1]:.4e}): "
                f"{self.histogram[k]}"
            )
        return out


def error_report(u, u_ref, bins=10):
    nre = nre_field(u, u_ref)
    worst = nre.max(axis=1)
    hist, edges = np.histogram(worst, bins=bins)
    return ErrorReport(
        nrmse=nrmse(u, u_ref),
        nre=nre,
        nre_min=float(nre.min()),
        nre_max=float(nre.max()),
        histogram=hist,
        bin_edges=edges,
    )


def lateral_stretch(material, axial_stretch):
    """Free lateral stretch of a homogeneous uniaxial state.

    Solves S_xx(diag(l, l, axial)) = 0 for l: the transverse stress must
    vanish when the lateral faces are traction-free.
    """

    def s_xx(l):
        f = np.diag([l, l, float(axial_stretch)])
        return float(spk_stress(material, f)[0, 0])

    lo, hi = 0.2, 5.0
    f_lo, f_hi = s_xx(lo), s_xx(hi)
    for _ in range(8):
        if f_lo * f_hi < 0.0:
            break
        lo, hi = lo * 0.5, hi * 2.0
        f_lo, f_hi = s_xx(lo), s_xx(hi)
    else:
        raise ValueError("could not bracket the lateral-stretch root")
    return brentq(s_xx, lo, hi, xtol=1e-14, rtol=1e-15)


def cube_uniaxial_solution(nodes, material, compression):
    """Homogeneous reference displacement for uniaxial compression.

    The axial stretch 1 - compression acts along z from the base plane;
    the lateral stretch follows from the zero-transverse-stress condition
    about the section centroid. Returns (u, lateral) with u of shape (N, 3).
    """
    nodes = np.asarray(nodes, dtype=float)
    lz = 1.0 - float(compression)
    lat = lateral_stretch(material, lz)
    lo = nodes.min(axis=0)
    hi = nodes.max(axis=0)
    cx, cy = 0.5 * (lo[0] + hi[0]), 0.5 * (lo[1] + hi[1])
    u = np.empty_like(nodes)
    u[:, 0] = (lat - 1.0) * (nodes[:, 0] - cx)
    u[:, 1] = (lat - 1.0) * (nodes[:, 1] - cy)
    u[:, 2] = (lz - 1.0) * (nodes[:, 2] - lo[2])
    return u, lat
