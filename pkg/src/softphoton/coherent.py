"""First moments of the free quantized field in a coherent state.

The coherent state is labelled by ``w(k) = -e phi_hat(k) / (sqrt(2) |k|^{3/2}) * v / (1 - k_hat.v)``
and ``<a_lambda(k)> = eps_lambda(k) . w(k)``. Only expectation values are
computed; no operators are represented. ``|w|^2`` is not integrable at
``k = 0``, so the state lies outside Fock space, but its field expectations
are ordinary functions.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .extrapolation import extrapolate_to_zero
from .matter import ChargeModel
from .observables import transverse_formula_electric, transverse_formula_magnetic

_PATCH_COS = 1.0 / np.sqrt(2.0)


def polarization_basis(k_hat):
    """Two real unit vectors orthonormal to ``k_hat`` (and to each other).

    Two patches: the reference axis is ``z`` away from the poles and ``x``
    within 45 degrees of them, so the frame is smooth inside each patch.
    """
    kh = np.asarray(k_hat, dtype=float)
    kh = kh / np.linalg.norm(kh, axis=-1, keepdims=True)
    polar = np.abs(kh[..., 2:3]) > _PATCH_COS
    ref = np.where(polar, np.array([1.0, 0.0, 0.0]), np.array([0.0, 0.0, 1.0]))
    e1 = ref - kh * np.sum(ref * kh, axis=-1, keepdims=True)
    e1 = e1 / np.linalg.norm(e1, axis=-1, keepdims=True)
    e2 = np.cross(kh, e1)
    return e1, e2


@dataclass(frozen=True, eq=False)
class CoherentProfile:
    v_inf: np.ndarray
    model: ChargeModel
    basis_angle: float = 0.0  # extra rotation of the frame about k_hat

    def __post_init__(self):
        v = np.asarray(self.v_inf, dtype=float)
        if v.shape != (3,) or not v @ v < 1.0:
            raise ValueError(f"v_inf must be a 3-vector with |v| < 1, got {self.v_inf}")
        object.__setattr__(self, "v_inf", v)

    def basis(self, k_hat):
        e1, e2 = polarization_basis(k_hat)
        c, s = np.cos(self.basis_angle), np.sin(self.basis_angle)
        return c * e1 + s * e2, -s * e1 + c * e2


def _kdata(k):
    k = np.asarray(k, dtype=float)
    kmag = np.linalg.norm(k, axis=-1)
    if np.any(kmag == 0.0):
        raise ValueError("coherent amplitudes are singular at k = 0")
    return k, kmag, k / kmag[..., None]


def w_amplitude(profile: CoherentProfile, k):
    """``w(k)`` as a complex 3-vector; broadcasts over leading axes of ``k``."""
    k, kmag, kh = _kdata(k)
    v = profile.v_inf
    m = profile.model
    coef = -m.e * m.phi_hat(kmag) / (np.sqrt(2.0) * kmag**1.5)
    return (coef / (1.0 - kh @ v))[..., None] * v + 0j


def _mode_expectation(profile: CoherentProfile, k):
    """``sum_lambda eps_lambda <a_lambda(k)>``: the frame-projected amplitude."""
    _, _, kh = _kdata(k)
    w = w_amplitude(profile, k)
    e1, e2 = profile.basis(kh)
    return (e1 * np.sum(e1 * w, axis=-1, keepdims=True)
            + e2 * np.sum(e2 * w, axis=-1, keepdims=True))


def expected_fields(profile: CoherentProfile, k, t: float):
    """``(<E_hat(k, t)>, <B_hat(k, t)>)`` in the coherent state."""
    k, kmag, _ = _kdata(k)
    a_k = _mode_expectation(profile, k)
    a_mk = np.conj(_mode_expectation(profile, -k))
    om = kmag[..., None]
    fwd = np.exp(-1j * om * t)
    bwd = np.exp(1j * om * t)
    e = np.sqrt(om / 2.0) * (1j * fwd * a_k - 1j * bwd * a_mk)
    b = np.cross(1j * k, fwd * a_k + bwd * a_mk) / np.sqrt(2.0 * om)
    return e, b


@dataclass(frozen=True)
class MatchReport:
    t: float
    directions: np.ndarray
    residual_e: np.ndarray  # per direction
    residual_b: np.ndarray
    extrapolation_error: np.ndarray

    @property
    def max_residual(self) -> float:
        return float(max(np.max(self.residual_e), np.max(self.residual_b)))

    def to_json(self) -> dict:
        return {"t": self.t, "directions": self.directions.tolist(),
                "residual_e": self.residual_e.tolist(),
                "residual_b": self.residual_b.tolist(),
                "extrapolation_error": self.extrapolation_error.tolist(),
                "max_residual": self.max_residual}


def ir_limit_expected(profile: CoherentProfile, directions, t: float,
                      k_nodes=(1e-4, 2e-4, 3e-4, 4e-4, 5e-4)):
    """Extrapolate ``|k| (<E_hat>, <B_hat>)`` to ``|k| = 0`` along each direction."""
    d = np.asarray(directions, float)
    d = d / np.linalg.norm(d, axis=-1, keepdims=True)
    h = np.asarray(k_nodes, float)
    vals = []
    for kk in h:
        e, b = expected_fields(profile, kk * d, t)
        vals.append(np.concatenate([kk * e, kk * b], axis=-1))
    ex = extrapolate_to_zero(h, np.array(vals))
    return ex.value[..., :3], ex.value[..., 3:], np.linalg.norm(ex.error, axis=-1)


def ir_match_check(profile: CoherentProfile, directions, t: float = 0.0,
                   k_nodes=(1e-4, 2e-4, 3e-4, 4e-4, 5e-4)) -> MatchReport:
    """Compare the infrared limits of the expectations with the classical tails."""
    d = np.asarray(directions, float)
    d = d / np.linalg.norm(d, axis=-1, keepdims=True)
    e, b, err = ir_limit_expected(profile, d, t, k_nodes)
    ce = transverse_formula_electric(profile.v_inf, profile.model, d)
    cb = transverse_formula_magnetic(profile.v_inf, profile.model, d)
    return MatchReport(float(t), d, np.linalg.norm(e - ce, axis=-1),
                       np.linalg.norm(b - cb, axis=-1), err)


def fibonacci_directions(n: int) -> np.ndarray:
    """``n`` roughly uniform unit vectors (golden-angle spiral)."""
    i = np.arange(n) + 0.5
    z = 1.0 - 2.0 * i / n
    phi = np.pi * (1.0 + np.sqrt(5.0)) * i
    r = np.sqrt(1.0 - z * z)
    return np.column_stack([r * np.cos(phi), r * np.sin(phi), z])


def shell_norm_squared(profile: CoherentProfile, k_lo: float, k_hi: float,
                       n_radial: int = 32, n_polar: int = 32, n_azimuth: int = 32) -> float:
    """``int_{k_lo < |k| < k_hi} |w(k)|^2 d^3k`` by tensor Gauss quadrature."""
    xr, wr = np.polynomial.legendre.leggauss(n_radial)
    kr = 0.5 * (k_hi - k_lo) * xr + 0.5 * (k_hi + k_lo)
    wr = 0.5 * (k_hi - k_lo) * wr * kr**2
    ct, wt = np.polynomial.legendre.leggauss(n_polar)
    st = np.sqrt(1.0 - ct**2)
    ph = 2.0 * np.pi * (np.arange(n_azimuth) + 0.5) / n_azimuth
    dirs = np.stack([np.outer(st, np.cos(ph)), np.outer(st, np.sin(ph)),
                     np.outer(ct, np.ones_like(ph))], axis=-1).reshape(-1, 3)
    wa = np.repeat(wt, n_azimuth) * (2.0 * np.pi / n_azimuth)
    k = kr[:, None, None] * dirs[None]
    w2 = np.sum(np.abs(w_amplitude(profile, k)) ** 2, axis=-1)
    return float(np.sum(wr[:, None] * wa[None] * w2))
