"""Scattered (asymptotically free) radiation reconstructed from a trajectory.

The deviation of the field from the instantaneous soliton,
``Z(t) = F(t) - S_{v(t)} exp(-i k.q(t))``, obeys the mild equation

    Z(t) = U(t) Z(0) - int_0^t U(t - s) g(s) ds,
    g(s) = (v_dot(s) . grad_v) S_v |_{v(s)} exp(-i k.q(s)),

so ``U(-t) Z(t)`` converges to the scattered data
``z_sc = Z(0) - int_0^{+-inf} U(-s) g(s) ds`` once the acceleration decays.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import simpson

from .dynamics import Trajectory, fit_power_law_tail, PowerLawFit
from .matter import ChargeModel, SolitonField, ir_limit_soliton, soliton_on_grid, soliton_vgrad
from .spectral import KGrid, SpectralFieldPair, field_norm, free_propagate, rotate_fields

log = logging.getLogger(__name__)

_CHUNK = 64


@dataclass(frozen=True, eq=False)
class ScatterResult:
    """Scattered data at ``t = 0`` for one time direction (``+1`` or ``-1``).

    ``tail_bound`` bounds the field norm of the truncated ``int_T^inf``
    contribution and ``ir_tail_bound`` the same contribution to the infrared
    coefficient (per direction, sup norm). ``quadrature_error`` compares the
    Simpson sum against the same rule on every other sample.
    """

    z_sc: SpectralFieldPair
    direction: int
    t_horizon: float
    tail_bound: float
    ir_tail_bound: float
    quadrature_error: float
    fit: PowerLawFit
    convergence_series: list = field(default_factory=list)

    def to_json(self) -> dict:
        return {
            "direction": "+" if self.direction > 0 else "-",
            "t_horizon": self.t_horizon,
            "tail_bound": self.tail_bound,
            "ir_tail_bound": self.ir_tail_bound,
            "quadrature_error": self.quadrature_error,
            "fit": {"c": self.fit.c, "exponent": self.fit.exponent,
                    "t_window": [float(x) for x in self.fit.t_window]},
            "convergence_series": [[float(t), float(d)] for t, d in self.convergence_series],
        }


def source_term(traj_sample, model: ChargeModel, grid: KGrid) -> SpectralFieldPair:
    """``g`` at one trajectory sample ``(t, q, v, v_dot)``."""
    _, q, v, v_dot = traj_sample
    return SpectralFieldPair(*_source(grid, model, q, v, v_dot))


def _source(grid, model, q, v, v_dot):
    v_dot = np.asarray(v_dot, dtype=float)
    if not np.any(v_dot):
        z = np.zeros(grid.shape, dtype=complex)
        return z, z.copy()
    ge, gb = soliton_vgrad(SolitonField(v, model), grid.kvec, v_dot)
    phase = np.exp(-1j * (grid.kvec @ np.asarray(q, float)))[..., None]
    return ge * phase, gb * phase


def deviation(state, grid: KGrid, model: ChargeModel) -> SpectralFieldPair:
    """``Z = F - S_v(. - q)`` for a system state."""
    p = state.particle
    return state.fields - soliton_on_grid(grid, model, p.v, p.q)


def _time_weights(s: np.ndarray) -> np.ndarray:
    """Composite Simpson weights on (possibly uneven) nodes ``s``."""
    return simpson(np.eye(len(s)), x=s, axis=-1)


class _SourceBatch:
    """Vectorized ``U(-s) g(s)`` over chunks of trajectory samples."""

    def __init__(self, grid: KGrid, model: ChargeModel):
        self.k = grid.kvec
        self.kk = np.sum(self.k * self.k, axis=-1)
        self.khat = np.broadcast_to(grid.khat, grid.shape)
        self.kmag = grid.kmag
        self.coef = -1j * model.e * model.phi_hat(grid.radial_nodes)[:, None]

    def pulled_back(self, t, q, v, v_dot, w):
        """``sum_j w_j U(-t_j) g_j`` for sample arrays of leading length S."""
        k = self.k
        kv = np.einsum("rdi,si->srd", k, v)[..., None]
        kdv = np.einsum("rdi,si->srd", k, v_dot)[..., None]
        vb = v[:, None, None, :]
        ab = v_dot[:, None, None, :]
        d = self.kk[None, ..., None] - kv**2
        dd = -2.0 * kv * kdv
        n = k - vb * kv
        dn = -ab * kv - vb * kdv
        m = _cross(vb, k)
        dm = _cross(ab, k)
        phase = np.exp(-1j * np.einsum("rdi,si->srd", k, q))[..., None] * self.coef[..., None]
        ge = phase * (dn / d - n * dd / d**2)
        gb = phase * (dm / d - m * dd / d**2)
        ph = -self.kmag[None] * t[:, None, None]
        c, s = np.cos(ph)[..., None], np.sin(ph)[..., None]
        re, rb = rotate_fields(ge, gb, self.khat, c, s)
        return np.einsum("s,srdi->rdi", w, re), np.einsum("s,srdi->rdi", w, rb)


def _cross(a, b):
    return np.stack([
        a[..., 1] * b[..., 2] - a[..., 2] * b[..., 1],
        a[..., 2] * b[..., 0] - a[..., 0] * b[..., 2],
        a[..., 0] * b[..., 1] - a[..., 1] * b[..., 0],
    ], axis=-1)


def _pulled_back_integral(traj: Trajectory, idx, weights, grid, model):
    """``sum_j w_j U(-s_j) g(s_j)`` over the trajectory samples ``idx``.

    Chunks are summed in time order, so the result is reproducible bit for bit.
    """
    batch = _SourceBatch(grid, model)
    acc_e = np.zeros(grid.shape, dtype=complex)
    acc_b = np.zeros(grid.shape, dtype=complex)
    idx = np.asarray(idx)
    idx = idx[(weights[idx] != 0.0) & np.any(traj.v_dot[idx] != 0.0, axis=-1)]
    for start in range(0, len(idx), _CHUNK):
        j = idx[start:start + _CHUNK]
        de, db = batch.pulled_back(traj.t[j], traj.q[j], traj.v[j], traj.v_dot[j], weights[j])
        acc_e += de
        acc_b += db
    return acc_e, acc_b


def _ir_gradient_bound(model: ChargeModel, v, grid: KGrid) -> float:
    """``sup_{k_hat, |u|=1} |(u.grad_v) lim |k| S_v(k_hat)|`` by central differences."""
    h = 1e-6
    kh = grid.directions
    best = 0.0
    for axis in range(3):
        du = np.zeros(3)
        du[axis] = h
        ep, bp = ir_limit_soliton(SolitonField(v + du, model), kh)
        em, bm = ir_limit_soliton(SolitonField(v - du, model), kh)
        g = np.concatenate([(ep - em), (bp - bm)], axis=-1) / (2 * h)
        best = max(best, float(np.max(np.linalg.norm(g, axis=-1))))
    return np.sqrt(3.0) * best


def _field_gradient_bound(model: ChargeModel, v, grid: KGrid) -> float:
    best = 0.0
    for axis in range(3):
        du = np.zeros(3)
        du[axis] = 1.0
        ge, gb = soliton_vgrad(SolitonField(v, model), grid.kvec, du)
        best = max(best, field_norm(SpectralFieldPair(ge, gb), grid))
    return np.sqrt(3.0) * best


def scattered_field(traj: Trajectory, initial_deviation: SpectralFieldPair,
                    model: ChargeModel, grid: KGrid, direction: int,
                    fit_window=None, tail_warn_fraction: float = 0.1) -> ScatterResult:
    """Scattered data ``z_sc`` for the future (``+1``) or past (``-1``).

    ``traj`` must be the chronological trajectory of a run that starts at
    ``t = 0``: ``[0, T]`` for the future, ``[-T, 0]`` for the past.
    """
    if direction not in (1, -1):
        raise ValueError(f"direction must be +1 or -1, got {direction}")
    t = traj.t
    if len(t) < 3:
        raise ValueError("need at least three trajectory samples")
    anchor = t[0] if direction > 0 else t[-1]
    if abs(anchor) > 1e-12 * max(1.0, np.max(np.abs(t))):
        raise ValueError(f"trajectory for direction {direction:+d} must start at t=0, "
                         f"its anchor sample is at t={anchor}")

    n = len(t)
    w = _time_weights(t)
    # int_0^{-T} = -int_{-T}^0
    sign = 1.0 if direction > 0 else -1.0
    idx = np.arange(n)
    ie, ib = _pulled_back_integral(traj, idx, w, grid, model)

    coarse = np.unique(np.r_[np.arange(0, n, 2), n - 1])
    wc = np.zeros(n)
    wc[coarse] = _time_weights(t[coarse])
    ce, cb = _pulled_back_integral(traj, coarse, wc, grid, model)
    # one Romberg level on top of Simpson; the size of the correction is
    # reported as the quadrature error
    corr_e, corr_b = (ie - ce) / 15.0, (ib - cb) / 15.0
    quad_err = field_norm(SpectralFieldPair(corr_e, corr_b), grid)
    ie, ib = ie + corr_e, ib + corr_b

    z = SpectralFieldPair(initial_deviation.e_hat - sign * ie,
                          initial_deviation.b_hat - sign * ib)

    horizon = float(t[-1] - t[0])
    fit = fit_power_law_tail(t - anchor, np.linalg.norm(traj.v_dot, axis=-1), fit_window)
    tail_int = fit.tail_integral(horizon)
    v_end = traj.v[-1] if direction > 0 else traj.v[0]
    tail = _field_gradient_bound(model, v_end, grid) * tail_int
    ir_tail = _ir_gradient_bound(model, v_end, grid) * tail_int
    znorm = field_norm(z, grid)
    if not tail <= tail_warn_fraction * znorm:
        warnings.warn(f"truncated s-integral bound {tail:.3e} exceeds "
                      f"{tail_warn_fraction:.0%} of |z_sc| = {znorm:.3e}; "
                      "the run is too short for a trustworthy infrared claim",
                      RuntimeWarning, stacklevel=2)
    log.info("z_sc(%+d): |z|=%.4g quad_err=%.3g tail=%.3g", direction, znorm, quad_err, tail)
    return ScatterResult(z, direction, horizon, float(tail), float(ir_tail),
                         float(quad_err), fit)


def wave_operator_diagnostic(snapshots: list, traj: Trajectory, model: ChargeModel,
                             grid: KGrid, z_sc: SpectralFieldPair) -> list:
    """``[(T, |U(-T) Z(T) - z_sc|), ...]`` for each snapshot state.

    Snapshots are ``SystemState`` values; their particle data supplies
    ``(q(T), v(T))`` for the soliton subtraction.
    """
    del traj  # particle data is carried by the snapshots themselves
    out = []
    for st in snapshots:
        z_t = free_propagate(deviation(st, grid, model), grid, -st.t)
        out.append((float(st.t), field_norm(z_t - z_sc, grid)))
    out.sort(key=lambda r: abs(r[0]))
    devs = [d for _, d in out]
    tail = devs[len(devs) // 2:]
    if any(b > a * (1 + 1e-9) for a, b in zip(tail, tail[1:])):
        log.info("wave-operator deviation is not monotone past mid-run: %s", tail)
    return out


def with_convergence(result: ScatterResult, series: list) -> ScatterResult:
    """Copy of ``result`` carrying a wave-operator convergence series."""
    return ScatterResult(result.z_sc, result.direction, result.t_horizon, result.tail_bound,
                         result.ir_tail_bound, result.quadrature_error, result.fit,
                         list(series))
