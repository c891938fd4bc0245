"""Hyperelastic constitutive models: compressible Neo-Hookean and Ogden.

Both models are stated as strain energy per reference volume, with the
second Piola-Kirchhoff stress S = 2 dW/dC evaluated analytically. The
volumetric term is (1/D1)(J - 1)^2 in both, which makes the initial bulk
modulus K0 = 2/D1 — the convention commercial FEM packages use, so material
constants calibrated there carry over unchanged.
"""

from dataclasses import dataclass

import numpy as np

from .errors import InvertedElementError


@dataclass(frozen=True)
class NeoHookeanParams:
    """W = C10 (Ibar1 - 3) + (1/D1)(J - 1)^2 with C10 = mu/2."""

    young: float
    poisson: float

    def __post_init__(self):
        if self.young <= 0:
            raise ValueError("Young's modulus must be positive")
        if not -1.0 < self.poisson < 0.5:
            raise ValueError("Poisson ratio must lie in (-1, 0.5)")

    @property
    def shear_modulus(self):
        return self.young / (2.0 * (1.0 + self.poisson))

    @property
    def c10(self):
        return 0.5 * self.shear_modulus

    @property
    def d1(self):
        return 6.0 * (1.0 - 2.0 * self.poisson) / self.young

    @property
    def bulk_modulus(self):
        return 2.0 / self.d1


@dataclass(frozen=True)
class OgdenParams:
    """One-term Ogden, W = (2 mu1/a1^2)(J^(-a1/3) sum(lam_i^a1) - 3) + (1/D1)(J-1)^2.

    The a1^-2 normalization makes mu1 the initial shear modulus for either
    sign of a1 (brain-tissue fits use a negative exponent), so the
    positivity requirement is on mu1 alone.
    """

    mu1: float
    a1: float
    d1: float

    def __post_init__(self):
        if self.mu1 <= 0:
            raise ValueError("mu1 must be positive")
        if self.a1 == 0.0:
            raise ValueError("a1 must be non-zero")
        if self.d1 <= 0:
            raise ValueError("D1 must be positive")

    @property
    def shear_modulus(self):
        return self.mu1

    @property
    def bulk_modulus(self):
        return 2.0 / self.d1


@dataclass(frozen=True)
class StressState:
    """Second Piola-Kirchhoff stress at one material point."""

    s: np.ndarray  # (3, 3) symmetric

    @property
    def voigt(self):
        """(S11, S22, S33, S12, S23, S13)."""
        s = self.s
        return np.array(
            [s[0, 0], s[1, 1], s[2, 2], s[0, 1], s[1, 2], s[0, 2]]
        )


def small_strain_moduli(material):
    """Linearized Lame parameters (lambda, mu) at the undeformed state."""
    mu = material.shear_modulus
    lam = material.bulk_modulus - 2.0 * mu / 3.0
    return lam, mu


def _check_dets(f_batch):
    det = np.linalg.det(f_batch)
    if (det <= 0.0).any():
        idx = int(np.argmax(det <= 0.0))
        raise InvertedElementError(idx, det[idx])
    return det


def _neo_hookean_energy(params, f_batch):
    det = _check_dets(f_batch)
    c = np.einsum("pki,pkj->pij", f_batch, f_batch)
    i1 = np.trace(c, axis1=1, axis2=2)
    return params.c10 * (det ** (-2.0 / 3.0) * i1 - 3.0) + (
        1.0 / params.d1
    ) * (det - 1.0) ** 2


def _neo_hookean_spk(params, f_batch):
    det = _check_dets(f_batch)
    c = np.einsum("pki,pkj->pij", f_batch, f_batch)
    i1 = np.trace(c, axis1=1, axis2=2)
    cinv = np.linalg.inv(c)
    eye = np.broadcast_to(np.eye(3), c.shape)
    jm23 = det ** (-2.0 / 3.0)
    dev = 2.0 * params.c10 * jm23[:, None, None] * (
        eye - (i1 / 3.0)[:, None, None] * cinv
    )
    vol = (2.0 / params.d1) * ((det - 1.0) * det)[:, None, None] * cinv
    return dev + vol


def _ogden_principal(params, f_batch):
    """Eigenvalues/vectors of C and principal stretches for a batch."""
    _check_dets(f_batch)
    c = np.einsum("pki,pkj->pij", f_batch, f_batch)
    evals, evecs = np.linalg.eigh(c)
    lam = np.sqrt(np.maximum(evals, 0.0))
    return lam, evecs


def _ogden_energy_stretches(params, lam):
    j = lam[..., 0] * lam[..., 1] * lam[..., 2]
    a1 = params.a1
    dev = (2.0 * params.mu1 / a1 ** 2) * (
        j ** (-a1 / 3.0) * np.sum(lam ** a1, axis=-1) - 3.0
    )
    return dev + (1.0 / params.d1) * (j - 1.0) ** 2


def _ogden_spk(params, f_batch):
    lam, n = _ogden_principal(params, f_batch)
    j = lam[:, 0] * lam[:, 1] * lam[:, 2]
    a1, mu1, d1 = params.a1, params.mu1, params.d1
    la = lam ** a1
    sa = np.sum(la, axis=1)
    # Principal second Piola-Kirchhoff values S_i = (1/lam_i) dW/dlam_i.
    pref = (2.0 * mu1 / a1) * (j ** (-a1 / 3.0))[:, None]
    s_dev = pref * (la - sa[:, None] / 3.0) / lam ** 2
    s_vol = (2.0 / d1) * ((j - 1.0) * j)[:, None] / lam ** 2
    s_princ = s_dev + s_vol
    # Isotropic recomposition: equal stretches give equal coefficients, so
    # the result is independent of the eigenbasis chosen in a repeated
    # eigenspace — no perturbation tricks needed.
    return np.einsum("pi,pki,pli->pkl", s_princ, n, n)


def _as_batch(f):
    f = np.asarray(f, dtype=float)
    if f.shape == (3, 3):
        return f[None], True
    if f.ndim == 3 and f.shape[1:] == (3, 3):
        return f, False
    raise ValueError(f"deformation gradient must be (3,3) or (N,3,3), got {f.shape}")


def strain_energy(material, f):
    """Strain energy density W(F) per unit reference volume."""
    fb, single = _as_batch(f)
    if isinstance(material, NeoHookeanParams):
        w = _neo_hookean_energy(material, fb)
    elif isinstance(material, OgdenParams):
        lam, _ = _ogden_principal(material, fb)
        w = _ogden_energy_stretches(material, lam)
    else:
        raise TypeError(f"unknown material {type(material).__name__}")
    return float(w[0]) if single else w


def spk_stress(material, f):
    """Second Piola-Kirchhoff stress tensors for (N, 3, 3) batches."""
    fb, single = _as_batch(f)
    if isinstance(material, NeoHookeanParams):
        s = _neo_hookean_spk(material, fb)
    elif isinstance(material, OgdenParams):
        s = _ogden_spk(material, fb)
    else:
        raise TypeError(f"unknown material {type(material).__name__}")
    return s[0] if single else s


def neo_hookean_spk(f, params):
    """Single-point Neo-Hookean stress as a :class:`StressState`."""
    return StressState(s=spk_stress(params, np.asarray(f, dtype=float)))


def ogden_spk(f, params):
    """Single-point Ogden stress as a :class:`StressState`."""
    return StressState(s=spk_stress(params, np.asarray(f, dtype=float)))
