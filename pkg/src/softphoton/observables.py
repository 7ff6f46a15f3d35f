"""Infrared and spatial tails, their conservation checks and the soft-photon residual.

The infrared tail of a field is ``lim_{|k|->0} |k| F_hat(|k| k_hat)`` per
direction; it is estimated by polynomial extrapolation in ``|k|`` from the
smallest radial shells. Tails of full fields are always split into the
closed-form soliton part plus the extrapolated deviation.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.interpolate import CubicSpline
from scipy.special import spherical_jn, sph_harm_y

from .extrapolation import extrapolate_to_zero
from .matter import (ChargeModel, SolitonField, ir_limit_soliton, soliton_position_tail,
                     soliton_position_tail_b)
from .spectral import KGrid, SpectralFieldPair

log = logging.getLogger(__name__)


def _project_tr(vec, khat):
    return vec - khat * np.sum(khat * vec, axis=-1, keepdims=True)


def _angular_norm(vals, grid: KGrid) -> float:
    """``sqrt(int |f(k_hat)|^2 dOmega)`` for per-direction vectors ``(Nd, 3)``."""
    dens = np.sum(np.abs(vals) ** 2, axis=-1)
    return float(np.sqrt(np.sum(grid.angular_weights * dens)))


@dataclass(frozen=True, eq=False)
class IRTail:
    """Per-direction infrared coefficients ``(E, B)`` with error estimates."""

    directions: np.ndarray  # (Nd, 3)
    e: np.ndarray  # (Nd, 3) complex
    b: np.ndarray
    error: np.ndarray  # (Nd,)
    label: str = ""
    nonconverging: np.ndarray = None

    def __post_init__(self):
        if self.nonconverging is None:
            object.__setattr__(self, "nonconverging", np.zeros(len(self.error), dtype=bool))

    def __sub__(self, other: IRTail) -> IRTail:
        return IRTail(self.directions, self.e - other.e, self.b - other.b,
                      self.error + other.error, f"{self.label}-{other.label}",
                      self.nonconverging | other.nonconverging)

    def __add__(self, other: IRTail) -> IRTail:
        return IRTail(self.directions, self.e + other.e, self.b + other.b,
                      self.error + other.error, f"{self.label}+{other.label}",
                      self.nonconverging | other.nonconverging)

    def scale(self, c) -> IRTail:
        return IRTail(self.directions, c * self.e, c * self.b, abs(c) * self.error,
                      self.label, self.nonconverging)

    def to_json(self) -> dict:
        return {
            "label": self.label,
            "directions": self.directions.tolist(),
            "e_re": self.e.real.tolist(), "e_im": self.e.imag.tolist(),
            "b_re": self.b.real.tolist(), "b_im": self.b.imag.tolist(),
            "error": self.error.tolist(),
            "nonconverging": self.nonconverging.tolist(),
        }


def ir_extract(fields: SpectralFieldPair, grid: KGrid, n_nodes: int = 4,
               k_ir: float | None = None, label: str = "") -> IRTail:
    """Extrapolate ``|k| (E_hat, B_hat)`` to ``|k| = 0`` along every grid direction.

    Uses the ``n_nodes`` smallest radial shells (polynomial of degree
    ``n_nodes - 1`` in ``|k|``). The error is the change between the last two
    extrapolation orders, summed over both sectors. A direction is flagged as
    non-converging when its error exceeds the extrapolated value or when the
    order-to-order changes stop contracting (a genuine ``|k|^-p`` blow-up
    shrinks them only slowly on geometric nodes).
    """
    if n_nodes < 3:
        raise ValueError("infrared extrapolation needs at least 3 radial nodes")
    kr = grid.radial_nodes[:n_nodes]
    if k_ir is not None and np.count_nonzero(grid.radial_nodes < k_ir) < n_nodes:
        raise ValueError(f"grid has fewer than {n_nodes} radial nodes below k_ir={k_ir}")
    vals = np.concatenate([fields.e_hat[:n_nodes], fields.b_hat[:n_nodes]], axis=-1)
    vals = kr[:, None, None] * vals
    ex = extrapolate_to_zero(kr, vals)
    e, b = ex.value[..., :3], ex.value[..., 3:]
    err = np.linalg.norm(ex.error, axis=-1)
    mag = np.linalg.norm(np.abs(ex.value), axis=-1)
    # ignore directions where both are negligible against the field's own scale
    kf = grid.radial_nodes[:, None] * np.sqrt(
        np.sum(np.abs(fields.e_hat) ** 2 + np.abs(fields.b_hat) ** 2, axis=-1))
    floor = 1e-12 * float(np.max(kf, initial=0.0))
    prev = np.linalg.norm(np.abs(ex.orders[-2] - ex.orders[-3]), axis=-1)
    stalled = err > 0.5 * prev
    bad = ((err > mag) | stalled) & (err > floor)
    if np.any(bad):
        log.warning("infrared extrapolation does not converge in %d of %d directions",
                    int(bad.sum()), len(bad))
    return IRTail(grid.directions.copy(), e, b, err, label, bad)


def soliton_ir_tail(v, model: ChargeModel, grid: KGrid, label: str = "") -> IRTail:
    """Closed-form infrared tail of the soliton at velocity ``v`` (exact, zero error)."""
    e, b = ir_limit_soliton(SolitonField(v, model), grid.directions)
    return IRTail(grid.directions.copy(), e, b, np.zeros(grid.n_directions),
                  label or f"soliton({np.asarray(v).tolist()})")


def transverse_project(tail: IRTail) -> IRTail:
    """Apply ``P_tr(k_hat) = 1 - k_hat k_hat`` to both sectors."""
    kh = tail.directions
    return IRTail(kh, _project_tr(tail.e, kh), _project_tr(tail.b, kh), tail.error.copy(),
                  tail.label, tail.nonconverging.copy())


def ir_tail_of_state(state, model: ChargeModel, grid: KGrid, n_nodes: int = 4) -> IRTail:
    """Infrared tail of a full state: soliton closed form plus extracted deviation."""
    from .scattering import deviation

    p = state.particle
    dev = ir_extract(deviation(state, grid, model), grid, n_nodes)
    # the phase exp(-i k.q) tends to 1 as |k| -> 0, so q does not enter
    return soliton_ir_tail(p.v, model, grid, f"t={state.t:g}") + dev


@dataclass(frozen=True)
class ConservationReport:
    times: list
    transverse_drift: list  # per time, max over directions, relative
    longitudinal_drift: list  # per time, max over directions, absolute
    max_transverse_drift: float
    max_longitudinal_drift: float

    def to_json(self) -> dict:
        return {
            "times": [float(t) for t in self.times],
            "transverse_drift": [float(x) for x in self.transverse_drift],
            "longitudinal_drift": [float(x) for x in self.longitudinal_drift],
            "max_transverse_drift": self.max_transverse_drift,
            "max_longitudinal_drift": self.max_longitudinal_drift,
        }


def check_ir_conservation(snapshots: list, model: ChargeModel, grid: KGrid,
                          n_nodes: int = 4) -> ConservationReport:
    """Drift of the electric infrared tail across snapshots.

    Transverse drift is ``|P_tr (E(t) - E(t0))| / |E(t0)|`` per direction;
    longitudinal drift is ``|k_hat . (E(t) - E(t0))|`` in absolute units.
    """
    if len(snapshots) < 2:
        raise ValueError("need at least two snapshots")
    snaps = sorted(snapshots, key=lambda s: abs(s.t))
    ref = ir_tail_of_state(snaps[0], model, grid, n_nodes)
    kh = ref.directions
    scale = np.linalg.norm(ref.e, axis=-1)
    times, tr, lo = [], [], []
    for st in snaps:
        cur = ir_tail_of_state(st, model, grid, n_nodes)
        de = cur.e - ref.e
        times.append(st.t)
        tr.append(float(np.max(np.linalg.norm(_project_tr(de, kh), axis=-1) / scale)))
        lo.append(float(np.max(np.abs(np.sum(kh * de, axis=-1)))))
    return ConservationReport(times, tr, lo, max(tr), max(lo))


# --- soft-photon identity ----------------------------------------------------------

@dataclass(frozen=True, eq=False)
class SectorResidual:
    lhs: np.ndarray  # (Nd, 3)
    rhs: np.ndarray
    per_direction: np.ndarray  # |lhs - rhs|
    residual_norm: float  # angular L2 of lhs - rhs
    reference_norm: float  # angular L2 of rhs
    relative: float


@dataclass(frozen=True, eq=False)
class SoftPhotonReport:
    """Both sectors of ``F_sc,+ - F_sc,- = -(F_{v+} - F_{v-})`` with an error budget.

    The budget is an angular-L2 bound from the extrapolation errors of both
    scattered tails plus the truncated-time contributions (the ``z_sc`` tails
    and the uncertainty of the asymptotic velocities).
    """

    electric: SectorResidual
    magnetic: SectorResidual
    budget_extrapolation: float
    budget_tail: float
    v_plus: np.ndarray
    v_minus: np.ndarray

    @property
    def budget(self) -> float:
        return self.budget_extrapolation + self.budget_tail

    @property
    def residual_norm(self) -> float:
        return max(self.electric.residual_norm, self.magnetic.residual_norm)

    def to_json(self) -> dict:
        def sector(s: SectorResidual):
            return {"residual_norm": s.residual_norm, "reference_norm": s.reference_norm,
                    "relative": s.relative,
                    "per_direction": [float(x) for x in s.per_direction]}
        return {
            "electric": sector(self.electric),
            "magnetic": sector(self.magnetic),
            "budget": {"extrapolation": self.budget_extrapolation,
                       "tail": self.budget_tail, "total": self.budget},
            "v_plus": self.v_plus.tolist(),
            "v_minus": self.v_minus.tolist(),
        }


def _sector(lhs, rhs, grid) -> SectorResidual:
    res = lhs - rhs
    rn = _angular_norm(res, grid)
    ref = _angular_norm(rhs, grid)
    rel = rn / ref if ref > 0 else (0.0 if rn == 0 else float("inf"))
    return SectorResidual(lhs, rhs, np.linalg.norm(res, axis=-1), rn, ref, rel)


def soft_photon_residual(sc_plus, sc_minus, v_plus, v_minus, model: ChargeModel,
                         grid: KGrid, n_nodes: int = 4,
                         v_error: float = 0.0) -> SoftPhotonReport:
    """Residual of the soft-photon identity from two scattering results.

    ``v_error`` bounds ``|v(+-T) - v_{+-inf}|``; it enters the budget through
    the velocity gradient of the soliton tail.
    """
    plus = ir_extract(sc_plus.z_sc, grid, n_nodes, label="sc,+")
    minus = ir_extract(sc_minus.z_sc, grid, n_nodes, label="sc,-")
    lhs = plus - minus
    rhs = (soliton_ir_tail(v_plus, model, grid) - soliton_ir_tail(v_minus, model, grid)).scale(-1.0)
    four_pi_sqrt = np.sqrt(4.0 * np.pi)
    extrap = float(np.sqrt(np.sum(grid.angular_weights * lhs.error**2)))
    tail = four_pi_sqrt * (sc_plus.ir_tail_bound + sc_minus.ir_tail_bound)
    if v_error > 0:
        from .scattering import _ir_gradient_bound

        tail += four_pi_sqrt * v_error * (_ir_gradient_bound(model, np.asarray(v_plus), grid)
                                          + _ir_gradient_bound(model, np.asarray(v_minus), grid))
    return SoftPhotonReport(_sector(lhs.e, rhs.e, grid), _sector(lhs.b, rhs.b, grid),
                            extrap, float(tail), np.asarray(v_plus, float),
                            np.asarray(v_minus, float))


def transverse_formula_electric(v, model: ChargeModel, k_hat):
    """``-i e (2 pi)^{-3/2} (P_tr v)(k_hat.v) / (1 - (k_hat.v)^2)``.

    Infrared tail of the future scattered field for a charge that starts at
    rest and ends at velocity ``v`` with infrared-regular incoming radiation.
    """
    from .matter import FT_NORM

    kh = np.asarray(k_hat, float)
    kh = kh / np.linalg.norm(kh, axis=-1, keepdims=True)
    v = np.asarray(v, float)
    kv = (kh @ v)[..., None]
    ptr_v = v - kh * kv
    return -1j * model.e * FT_NORM * ptr_v * kv / (1.0 - kv**2)


def transverse_formula_magnetic(v, model: ChargeModel, k_hat):
    """``e (2 pi)^{-3/2} (v x i k_hat) / (1 - (k_hat.v)^2)``, the magnetic counterpart."""
    from .matter import FT_NORM

    kh = np.asarray(k_hat, float)
    kh = kh / np.linalg.norm(kh, axis=-1, keepdims=True)
    v = np.asarray(v, float)
    kv = (kh @ v)[..., None]
    return model.e * FT_NORM * np.cross(v, 1j * kh) / (1.0 - kv**2)


# --- spatial tails -----------------------------------------------------------------

AXIS_DIRECTIONS = np.array([[1, 0, 0], [-1, 0, 0], [0, 1, 0],
                            [0, -1, 0], [0, 0, 1], [0, 0, -1]], dtype=float)


@dataclass(frozen=True, eq=False)
class SpatialTail:
    """``lim |x|^2 (E, B)(|x| x_hat)`` per direction with error estimates."""

    directions: np.ndarray
    e: np.ndarray  # (Nx, 3) real
    b: np.ndarray
    error: np.ndarray
    label: str = ""
    under_resolved: list = field(default_factory=list)

    def flux(self) -> np.ndarray:
        """Radial electric coefficient ``x_hat . E`` per direction."""
        return np.sum(self.directions * self.e, axis=-1)

    def to_json(self) -> dict:
        return {"label": self.label, "directions": self.directions.tolist(),
                "e": self.e.tolist(), "b": self.b.tolist(), "error": self.error.tolist(),
                "under_resolved": [float(r) for r in self.under_resolved]}


def _band_limit(grid: KGrid) -> int:
    n_pol = grid.params["n_polar"]
    n_az = grid.params["n_azimuth"]
    return max(0, min(n_pol - 1, n_az // 2 - 1))


def _harmonic_coefficients(values, grid: KGrid, lmax: int):
    """Project per-direction values ``(Nr, Nd, 3)`` onto ``Y_lm``, ``l <= lmax``."""
    d = grid.directions
    theta = np.arccos(np.clip(d[:, 2], -1.0, 1.0))
    phi = np.arctan2(d[:, 1], d[:, 0])
    out = {}
    for l in range(lmax + 1):
        for m in range(-l, l + 1):
            y = sph_harm_y(l, m, theta, phi)
            out[(l, m)] = (np.einsum("d,rdi->ri", grid.angular_weights * np.conj(y), values), y)
    return out


def _smooth_taper(u):
    """C-infinity step from 1 (``u <= 0``) to 0 (``u >= 1``)."""
    u = np.clip(np.asarray(u, float), 0.0, 1.0)
    with np.errstate(divide="ignore", over="ignore"):
        a = np.where(u > 0, np.exp(-1.0 / np.where(u > 0, u, 1.0)), 0.0)
        b = np.where(u < 1, np.exp(-1.0 / np.where(u < 1, 1.0 - u, 1.0)), 0.0)
    return b / (a + b)


def _position_value(field_k, grid: KGrid, x_hat, radii, lmax: int, n_quad: int):
    """``(2 pi)^{-3/2} int d^3k exp(i k.x) f(k)`` at ``x = r x_hat`` for each radius.

    Each shell is expanded in spherical harmonics up to the grid's band limit and
    the plane wave by the Rayleigh formula; the radial integral of
    ``k^2 j_l(k r) f_lm(k)`` uses a cubic spline of ``k f_lm`` (continued to
    ``k = 0`` by extrapolation) on a dense Gauss-Legendre rule, with a smooth
    taper near ``k_max``.
    """
    kr = grid.radial_nodes
    coeffs = _harmonic_coefficients(field_k * kr[:, None, None], grid, lmax)
    th = np.arccos(np.clip(x_hat[2], -1.0, 1.0))
    ph = np.arctan2(x_hat[1], x_hat[0])
    k_max = kr[-1]
    taper_start = 0.75 * k_max
    knots = np.union1d(np.r_[0.0, kr], [taper_start])
    xg, wg = np.polynomial.legendre.leggauss(n_quad)
    out = []
    for r in radii:
        # panels never straddle a spline knot, so each integrand piece is smooth
        kq, wq = [], []
        for a, b in zip(knots[:-1], knots[1:]):
            n_sub = max(1, int(np.ceil((b - a) * r / np.pi)))
            edges = np.linspace(a, b, n_sub + 1)
            lo, hi = edges[:-1, None], edges[1:, None]
            kq.append((0.5 * (hi - lo) * xg + 0.5 * (hi + lo)).ravel())
            wq.append(np.broadcast_to(0.5 * (hi - lo) * wg, (n_sub, n_quad)).ravel())
        kq, wq = np.concatenate(kq), np.concatenate(wq)
        taper = _smooth_taper((kq - taper_start) / (k_max - taper_start))
        total = np.zeros(3, dtype=complex)
        for (l, m), (c_lm, _) in coeffs.items():
            kc = np.r_[0.0, kr]
            c0 = extrapolate_to_zero(kr[:4], c_lm[:4]).value
            spl = CubicSpline(kc, np.vstack([c0, c_lm]), axis=0)
            # k^2 j_l(kr) f(k) = k j_l(kr) (k f(k))
            radial = np.einsum("q,qi->i", wq * kq * spherical_jn(l, kq * r) * taper, spl(kq))
            y_x = sph_harm_y(l, m, th, ph)
            total += 4.0 * np.pi * (1j ** l) * y_x * radial
        out.append((2.0 * np.pi) ** -1.5 * total)
    return np.array(out)


def spatial_tail(fields: SpectralFieldPair, particle, model: ChargeModel, grid: KGrid,
                 directions=AXIS_DIRECTIONS, radii=(20.0, 25.0, 30.0),
                 n_quad: int = 8, label: str = "") -> SpatialTail:
    """``lim |x|^2 (E, B)`` along each direction.

    The soliton part is taken in closed form; the deviation is transformed to
    position space at each radius and ``|x|^2 Z`` is extrapolated in ``1/|x|``.
    Radii whose ``r * (largest radial gap)`` exceeds ``pi`` are flagged as
    under-resolved: past that radius the interpolation error of the radial
    profile, which repeats with the node spacing, lands on the evaluation
    shell. Radii should also lie outside the light cone of any radiation
    present at the evaluation time.
    """
    from .scattering import deviation
    from .dynamics import SystemState

    radii = np.asarray(sorted(radii), dtype=float)
    if radii[0] <= 4.0 * model.r_phi:
        raise ValueError("spatial-tail radii must be well outside the charge support")
    dirs = np.asarray(directions, float)
    dirs = dirs / np.linalg.norm(dirs, axis=-1, keepdims=True)
    state = SystemState(fields, particle)
    dev = deviation(state, grid, model)
    lmax = _band_limit(grid)
    gap = np.max(np.diff(grid.radial_nodes))
    under = [float(r) for r in radii if r * gap > np.pi]
    if under:
        log.warning("spatial tail radii %s exceed the radial resolution bound", under)
    sol = SolitonField(particle.v, model)
    e_out, b_out, err = [], [], []
    h = 1.0 / radii[::-1]  # closest to zero first
    for xh in dirs:
        ze = _position_value(dev.e_hat, grid, xh, radii[::-1], lmax, n_quad)
        zb = _position_value(dev.b_hat, grid, xh, radii[::-1], lmax, n_quad)
        vals = np.concatenate([ze.real, zb.real], axis=-1) * (radii[::-1] ** 2)[:, None]
        ex = extrapolate_to_zero(h, vals)
        e_out.append(soliton_position_tail(sol, xh) + ex.value[:3])
        b_out.append(soliton_position_tail_b(sol, xh) + ex.value[3:])
        err.append(float(np.linalg.norm(ex.error)))
    return SpatialTail(dirs, np.array(e_out), np.array(b_out), np.array(err), label, under)


def flux_average(tail: SpatialTail) -> float:
    """``4 pi`` times the average radial coefficient (the enclosed charge for a design)."""
    return float(4.0 * np.pi * np.mean(tail.flux()))
