"""Charge distribution and the soliton (uniformly moving dressed charge) fields."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

FT_NORM = (2.0 * np.pi) ** -1.5

_N_RADIAL_QUAD = 160


def bump_profile(s):
    """Unnormalized ``exp(-1/(1-s^2))`` for ``s < 1``, zero outside."""
    s = np.asarray(s, dtype=float)
    out = np.zeros_like(s)
    inside = np.abs(s) < 1.0
    out[inside] = np.exp(-1.0 / (1.0 - s[inside] ** 2))
    return out


@dataclass(frozen=True, eq=False)
class ChargeModel:
    """Extended charge: coupling ``e``, mass ``m``, support radius ``r_phi``.

    ``phi(r) = C exp(-1/(1-(r/r_phi)^2))`` with ``C`` fixed so that
    ``int phi d^3x = 1``. Radial integrals use a fixed Gauss-Legendre rule on
    ``[0, r_phi]``, which is converged to rounding for this profile.
    """

    e: float
    m: float = 1.0
    r_phi: float = 1.0
    _r: np.ndarray = field(init=False, repr=False)
    _w: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        if not self.m > 0:
            raise ValueError(f"mass must be positive, got {self.m}")
        if not self.r_phi > 0:
            raise ValueError(f"r_phi must be positive, got {self.r_phi}")
        x, wx = np.polynomial.legendre.leggauss(_N_RADIAL_QUAD)
        r = 0.5 * self.r_phi * (x + 1.0)
        w = 0.5 * self.r_phi * wx
        raw = bump_profile(r / self.r_phi)
        norm = 4.0 * np.pi * np.sum(w * r**2 * raw)
        # fold the measure 4 pi r^2 phi(r) into the weights
        w_eff = 4.0 * np.pi * w * r**2 * raw / norm
        r.setflags(write=False)
        w_eff.setflags(write=False)
        object.__setattr__(self, "_r", r)
        object.__setattr__(self, "_w", w_eff)
        object.__setattr__(self, "_norm_const", 1.0 / norm)

    def phi(self, r):
        """Position-space charge profile (normalized to unit integral)."""
        return self._norm_const * bump_profile(np.asarray(r, float) / self.r_phi)

    def phi_hat(self, k_mag):
        """Fourier transform of ``phi`` at ``|k|`` (real, radial, even in ``|k|``).

        ``(2 pi)^(-3/2) (4 pi / |k|) int_0^R r sin(|k| r) phi(r) dr``, with the
        ``|k| -> 0`` branch handled by ``sinc``.
        """
        k = np.asarray(k_mag, dtype=float)
        if np.any(k < 0):
            raise ValueError("phi_hat needs |k| >= 0")
        kr = k[..., None] * self._r
        return FT_NORM * np.sum(self._w * np.sinc(kr / np.pi), axis=-1)


def _as_velocity(v):
    v = np.asarray(v, dtype=float)
    if v.shape != (3,):
        raise ValueError(f"velocity must be a 3-vector, got shape {v.shape}")
    if not np.dot(v, v) < 1.0:
        raise ValueError(f"|v| must be < 1, got {np.linalg.norm(v)}")
    return v


@dataclass(frozen=True, eq=False)
class SolitonField:
    v: np.ndarray
    model: ChargeModel

    def __post_init__(self):
        object.__setattr__(self, "v", _as_velocity(self.v))


def _kdata(k):
    k = np.asarray(k, dtype=float)
    if k.shape[-1] != 3:
        raise ValueError(f"k must have a trailing axis of length 3, got {k.shape}")
    kk = np.sum(k * k, axis=-1)
    if np.any(kk == 0.0):
        raise ValueError("soliton fields are singular at k = 0; "
                         "use ir_limit_soliton for the infrared content")
    return k, kk


def soliton_momentum(s: SolitonField, k):
    """Soliton fields ``(E_v(k), B_v(k))`` in momentum space.

    ``E_v = -i e phi_hat (k - v (v.k)) / (k^2 - (k.v)^2)`` and
    ``B_v = -i e phi_hat (v x k) / (k^2 - (k.v)^2)``; broadcast over leading
    axes of ``k``.
    """
    k, kk = _kdata(k)
    v = s.v
    kv = k @ v
    coef = np.asarray(-1j * s.model.e * s.model.phi_hat(np.sqrt(kk)) / (kk - kv**2))
    e = coef[..., None] * (k - v * kv[..., None])
    b = coef[..., None] * np.cross(v, k)
    return e, b


def soliton_vgrad(s: SolitonField, k, dv):
    """Directional velocity derivative ``(dv . grad_v)`` of the soliton fields.

    With ``N = k - v (v.k)``, ``M = v x k`` and ``D = k^2 - (k.v)^2``::

        (dv.grad) N = -dv (v.k) - v (k.dv)
        (dv.grad) M = dv x k
        (dv.grad) D = -2 (k.v)(k.dv)
    """
    k, kk = _kdata(k)
    v = s.v
    dv = np.asarray(dv, dtype=float)
    kv = (k @ v)[..., None]
    kdv = (k @ dv)[..., None]
    d = kk[..., None] - kv**2
    d_d = -2.0 * kv * kdv
    n = k - v * kv
    dn = -dv * kv - v * kdv
    m = np.cross(v, k)
    dm = np.cross(dv, k)
    coef = np.asarray(-1j * s.model.e * s.model.phi_hat(np.sqrt(kk)))[..., None]
    e = coef * (dn / d - n * d_d / d**2)
    b = coef * (dm / d - m * d_d / d**2)
    return e, b


def soliton_on_grid(grid, model: ChargeModel, v, q=(0.0, 0.0, 0.0)):
    """Soliton centred at ``q`` sampled on the grid, including ``exp(-i k.q)``."""
    from .spectral import SpectralFieldPair

    e, b = soliton_momentum(SolitonField(v, model), grid.kvec)
    phase = np.exp(-1j * (grid.kvec @ np.asarray(q, float)))[..., None]
    return SpectralFieldPair(e * phase, b * phase)


def soliton_position_tail(s: SolitonField, x_hat):
    """``lim |x|^2 E_v(x)`` along ``x_hat``: the boosted Coulomb coefficient.

    ``(e / 4 pi) (1 - v^2) x_hat / (1 - v^2 sin^2 theta)^{3/2}`` with theta the
    angle between ``x_hat`` and ``v``.
    """
    x = np.asarray(x_hat, dtype=float)
    x = x / np.linalg.norm(x, axis=-1, keepdims=True)
    v = s.v
    v2 = float(v @ v)
    xv = x @ v
    sin2 = 1.0 - (xv**2 / v2 if v2 > 0 else 0.0)
    scale = s.model.e / (4.0 * np.pi) * (1.0 - v2) / (1.0 - v2 * sin2) ** 1.5
    return np.asarray(scale)[..., None] * x


def soliton_position_tail_b(s: SolitonField, x_hat):
    """Magnetic tail ``v x (lim |x|^2 E_v)``; ``B_v = v x E_v`` pointwise."""
    return np.cross(s.v, soliton_position_tail(s, x_hat))


def ir_limit_soliton(s: SolitonField, k_hat):
    """``lim_{|k|->0} |k| (E_v, B_v)(|k| k_hat)`` in closed form."""
    kh = np.asarray(k_hat, dtype=float)
    kh = kh / np.linalg.norm(kh, axis=-1, keepdims=True)
    v = s.v
    kv = (kh @ v)[..., None]
    coef = -1j * s.model.e * FT_NORM / (1.0 - kv**2)
    return coef * (kh - kv * v), coef * np.cross(v, kh)
