"""Coupled field/particle evolution on the spectral grid.

Only the transverse electric field and the magnetic field are dynamical. The
longitudinal electric field is slaved to the charge density,
``E_par(k) = -i k_hat e phi_hat(k) exp(-i k.q) / |k|``, so Gauss's law holds
exactly at every stored state.

Time stepping is the fourth-order Runge-Kutta scheme in the interaction
picture (RK4IP): the free Maxwell rotation is applied exactly between stages
and Runge-Kutta only sees the current source and the Lorentz force.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .matter import ChargeModel, SolitonField, soliton_on_grid
from .spectral import KGrid, SpectralFieldPair, transverse

log = logging.getLogger(__name__)


class VelocityBoundError(RuntimeError):
    """A step produced ``|v| >= 1``; dt or the coupling is too large."""


class SymmetryError(RuntimeError):
    """Smeared fields picked up an imaginary part: Hermitian symmetry is broken."""


class EnergyDriftError(RuntimeError):
    pass


@dataclass(frozen=True, eq=False)
class ParticleState:
    q: np.ndarray
    v: np.ndarray

    def __post_init__(self):
        q = np.array(self.q, dtype=float)
        v = np.array(self.v, dtype=float)
        if q.shape != (3,) or v.shape != (3,):
            raise ValueError("q and v must be 3-vectors")
        if not v @ v < 1.0:
            raise VelocityBoundError(f"|v| = {np.linalg.norm(v)} is not < 1")
        q.setflags(write=False)
        v.setflags(write=False)
        object.__setattr__(self, "q", q)
        object.__setattr__(self, "v", v)

    @property
    def gamma(self) -> float:
        return 1.0 / np.sqrt(1.0 - self.v @ self.v)

    def momentum(self, m: float) -> np.ndarray:
        return m * self.gamma * self.v

    @classmethod
    def from_momentum(cls, q, p, m: float) -> ParticleState:
        p = np.asarray(p, dtype=float)
        v = p / np.sqrt(m * m + p @ p)
        return cls(q, v)


@dataclass(frozen=True, eq=False)
class SystemState:
    fields: SpectralFieldPair
    particle: ParticleState
    t: float = 0.0


@dataclass(frozen=True, eq=False)
class Trajectory:
    """Chronologically ordered samples of ``(t, q, v, v_dot)``."""

    t: np.ndarray
    q: np.ndarray
    v: np.ndarray
    v_dot: np.ndarray
    dt: float = 0.0

    def __post_init__(self):
        if len(self.t) > 1 and not np.all(np.diff(self.t) > 0):
            raise ValueError("trajectory times must be strictly increasing")

    def __len__(self):
        return len(self.t)

    def sample(self, i: int):
        return self.t[i], self.q[i], self.v[i], self.v_dot[i]

    def to_rows(self):
        return np.column_stack([self.t, self.q, self.v, self.v_dot])


def _cross(a, b):
    return np.stack([
        a[..., 1] * b[..., 2] - a[..., 2] * b[..., 1],
        a[..., 2] * b[..., 0] - a[..., 0] * b[..., 2],
        a[..., 0] * b[..., 1] - a[..., 1] * b[..., 0],
    ], axis=-1)


class _Kernel:
    """Grid- and model-derived constants shared by the force and the stepper."""

    def __init__(self, grid: KGrid, model: ChargeModel):
        self.grid = grid
        self.model = model
        self.kvec = grid.kvec
        self.khat = np.broadcast_to(grid.khat, grid.shape)
        self.kmag = grid.kmag
        self.phi = model.phi_hat(grid.radial_nodes)[:, None]
        self.wphi = grid.weights * self.phi
        # longitudinal field of the charge at the origin
        self.e_par0 = (-1j * model.e * self.phi / self.kmag)[..., None] * self.khat
        self._rot = {}

    def phase(self, q):
        return np.exp(-1j * (self.kvec @ q))

    def e_par(self, q):
        return self.e_par0 * self.phase(q)[..., None]

    def rotation(self, t):
        if t not in self._rot:
            ph = self.kmag[..., None] * t
            self._rot[t] = (np.cos(ph), np.sin(ph))
        return self._rot[t]

    def rotate(self, et, b, t):
        c, s = self.rotation(t)
        return (c * et + 1j * s * _cross(self.khat, b),
                c * b - 1j * s * _cross(self.khat, et))

    def smeared(self, e_full, b, q):
        """``(E * phi)(q)`` and ``(B * phi)(q)`` by grid quadrature."""
        w = self.wphi * np.conj(self.phase(q))
        out = []
        for f in (e_full, b):
            s = np.einsum("rd,rdi->i", w, f)
            scale = np.einsum("rd,rd->", np.abs(w), np.linalg.norm(f, axis=-1))
            if np.max(np.abs(s.imag)) > 1e-9 * scale and scale > 0:
                raise SymmetryError(
                    f"imaginary part {np.max(np.abs(s.imag)):.3e} of smeared field "
                    f"exceeds 1e-9 of its magnitude {scale:.3e}")
            out.append(s.real)
        return out[0], out[1]

    def force(self, et, b, q, v):
        e_phi, b_phi = self.smeared(et + self.e_par(q), b, q)
        return self.model.e * (e_phi + np.cross(v, b_phi))

    def velocity(self, p):
        m = self.model.m
        return p / np.sqrt(m * m + p @ p)

    def acceleration(self, force, v):
        m = self.model.m
        gamma = 1.0 / np.sqrt(1.0 - v @ v)
        return (force - v * (v @ force)) / (m * gamma)

    def rhs(self, et, b, q, p):
        """Interaction-picture right-hand side: current source and Lorentz force."""
        v = self.velocity(p)
        ptr_v = v - self.khat * (self.khat @ v)[..., None]
        de = (-self.model.e * self.phi * self.phase(q))[..., None] * ptr_v
        f = self.force(et, b, q, v)
        return de, v, f

    def step(self, et, b, q, p, dt):
        """One RK4IP step. Returns the new state and the force at the old one."""
        h2 = 0.5 * dt
        de1, dq1, dp1 = self.rhs(et, b, q, p)
        ei, bi = self.rotate(et, b, h2)
        # the source has no magnetic part, but rotation mixes one in
        k1e, k1b = self.rotate(de1, np.zeros_like(de1), h2)

        de2, dq2, dp2 = self.rhs(ei + h2 * k1e, bi + h2 * k1b, q + h2 * dq1, p + h2 * dp1)
        de3, dq3, dp3 = self.rhs(ei + h2 * de2, bi, q + h2 * dq2, p + h2 * dp2)
        e4, b4 = self.rotate(ei + dt * de3, bi, h2)
        de4, dq4, dp4 = self.rhs(e4, b4, q + dt * dq3, p + dt * dp3)

        acc_e = ei + dt / 6.0 * (k1e + 2.0 * de2 + 2.0 * de3)
        acc_b = bi + dt / 6.0 * k1b
        e_new, b_new = self.rotate(acc_e, acc_b, h2)
        e_new = e_new + dt / 6.0 * de4
        q_new = q + dt / 6.0 * (dq1 + 2.0 * dq2 + 2.0 * dq3 + dq4)
        p_new = p + dt / 6.0 * (dp1 + 2.0 * dp2 + 2.0 * dp3 + dp4)
        return e_new, b_new, q_new, p_new, dp1


_KERNELS: dict = {}


def _kernel(grid: KGrid, model: ChargeModel) -> _Kernel:
    key = (id(grid), id(model))
    kern = _KERNELS.get(key)
    if kern is None or kern.grid is not grid or kern.model is not model:
        kern = _Kernel(grid, model)
        _KERNELS.clear()
        _KERNELS[key] = kern
    return kern


def smeared_fields_at_particle(state: SystemState, grid: KGrid, model: ChargeModel):
    """Return ``(E_phi(q), B_phi(q))``: the fields smeared by the charge profile.

    ``E_phi(q) = Re int d^3k exp(i k.q) E_hat(k) phi_hat(|k|)``. Raises
    ``SymmetryError`` if the discarded imaginary part is not negligible.
    """
    kern = _kernel(grid, model)
    f = state.fields
    return kern.smeared(f.e_hat, f.b_hat, state.particle.q)


def slave_longitudinal(fields: SpectralFieldPair, q, grid: KGrid,
                       model: ChargeModel) -> SpectralFieldPair:
    """Replace the longitudinal electric field by the Gauss-law value at ``q``."""
    kern = _kernel(grid, model)
    et = transverse(fields.e_hat, kern.khat)
    bt = transverse(fields.b_hat, kern.khat)
    return SpectralFieldPair(et + kern.e_par(np.asarray(q, float)), bt)


def soliton_state(grid: KGrid, model: ChargeModel, v, q=(0.0, 0.0, 0.0),
                  t: float = 0.0) -> SystemState:
    return SystemState(soliton_on_grid(grid, model, v, q), ParticleState(q, v), t)


def total_energy(state: SystemState, grid: KGrid, model: ChargeModel) -> float:
    f = state.fields
    dens = np.sum(np.abs(f.e_hat) ** 2 + np.abs(f.b_hat) ** 2, axis=-1)
    return float(model.m * state.particle.gamma + 0.5 * np.sum(grid.weights * dens))


def total_momentum(state: SystemState, grid: KGrid, model: ChargeModel) -> np.ndarray:
    f = state.fields
    pf = np.einsum("rd,rdi->i", grid.weights, _cross(np.conj(f.e_hat), f.b_hat)).real
    return state.particle.momentum(model.m) + pf


def step(state: SystemState, grid: KGrid, model: ChargeModel, dt: float) -> SystemState:
    """Advance by ``dt`` (negative ``dt`` integrates backwards in time)."""
    if dt == 0:
        raise ValueError("dt must be nonzero")
    kern = _kernel(grid, model)
    f = state.fields
    et = transverse(f.e_hat, kern.khat)
    b = transverse(f.b_hat, kern.khat)
    p = state.particle.momentum(model.m)
    e_new, b_new, q_new, p_new, _ = kern.step(et, b, state.particle.q, p, dt)
    return _assemble(kern, e_new, b_new, q_new, p_new, state.t + dt)


def _assemble(kern, et, b, q, p, t) -> SystemState:
    v = kern.velocity(p)
    if not np.all(np.isfinite(v)) or not v @ v < 1.0:
        raise VelocityBoundError(f"step produced |v| = {np.linalg.norm(v)} at t = {t}")
    fields = SpectralFieldPair(et + kern.e_par(q), b)
    return SystemState(fields, ParticleState(q, v), t)


# --- acceleration tail fits ----------------------------------------------------

@dataclass(frozen=True)
class PowerLawFit:
    """``|v_dot(t)| <= C (1 + |t|)^exponent`` fitted to the envelope of a tail."""

    c: float
    exponent: float
    t_window: tuple

    @property
    def sigma(self) -> float:
        return -1.0 - self.exponent

    def tail_integral(self, t_end: float) -> float:
        """``int_T^inf C (1+s)^exponent ds``; infinite if the fit does not decay."""
        if self.c == 0.0:
            return 0.0
        if not self.sigma > 0 or not np.isfinite(self.c):
            return float("inf")
        return float(self.c * (1.0 + abs(t_end)) ** (-self.sigma) / self.sigma)


def fit_power_law_tail(t, vdot_mag, t_window=None, n_bins: int = 12) -> PowerLawFit:
    """Fit a power law to the running maximum of ``|v_dot|`` over log-spaced bins.

    The envelope (bin maxima) is used instead of raw samples because the
    acceleration oscillates through zero while it decays.
    """
    t = np.abs(np.asarray(t, dtype=float))
    a = np.asarray(vdot_mag, dtype=float)
    if t_window is None:
        t_window = (0.25 * t.max(), t.max())
    lo, hi = t_window
    if not hi > lo > 0:
        raise ValueError(f"invalid fit window {t_window}")
    edges = np.geomspace(1.0 + lo, 1.0 + hi, n_bins + 1) - 1.0
    xs, ys = [], []
    for a_lo, a_hi in zip(edges[:-1], edges[1:]):
        sel = (t >= a_lo) & (t <= a_hi)
        if not np.any(sel):
            continue
        i = np.argmax(np.where(sel, a, -np.inf))
        if a[i] > 0:
            xs.append(np.log1p(t[i]))
            ys.append(np.log(a[i]))
    if not np.any(a[(t >= lo) & (t <= hi)]):
        # identically zero tail (e.g. a soliton): nothing to bound
        return PowerLawFit(0.0, float("nan"), (lo, hi))
    if len(xs) < 3:
        return PowerLawFit(float("nan"), float("nan"), (lo, hi))
    slope, intercept = np.polyfit(xs, ys, 1)
    # shift the line up so it bounds every envelope point
    intercept += max(0.0, float(np.max(np.array(ys) - (slope * np.array(xs) + intercept))))
    return PowerLawFit(float(np.exp(intercept)), float(slope), (lo, hi))


# --- simulation driver -----------------------------------------------------------

@dataclass(frozen=True, eq=False)
class SimulationResult:
    final: SystemState
    trajectory: Trajectory
    snapshots: list
    v_asymptotic: np.ndarray
    v_error_bound: float
    fit: PowerLawFit
    energy: np.ndarray = field(repr=False)  # rows (t, total energy)
    momentum: np.ndarray = field(repr=False)  # rows (t, px, py, pz)


def simulate(initial: SystemState, grid: KGrid, model: ChargeModel, t_final: float,
             dt: float, sample_every: int = 1, max_energy_drift: float = 1e-2,
             fit_window=None) -> SimulationResult:
    """Integrate from ``initial.t`` to ``initial.t + t_final``.

    The trajectory is recorded at every step with ``v_dot`` taken from the
    Lorentz force; field snapshots are kept every ``sample_every`` steps
    (always including both endpoints). Backward runs use ``t_final < 0`` and
    ``dt < 0`` and return their trajectory in chronological order.
    """
    if dt == 0 or abs(t_final) < abs(dt) or np.sign(t_final) != np.sign(dt):
        raise ValueError(f"need |t_final| >= |dt| > 0 with equal signs, "
                         f"got t_final={t_final}, dt={dt}")
    n_steps = int(round(t_final / dt))
    if not np.isclose(n_steps * dt, t_final, rtol=1e-9, atol=1e-12):
        raise ValueError(f"t_final={t_final} is not a multiple of dt={dt}")
    if sample_every < 1:
        raise ValueError("sample_every must be >= 1")

    kern = _kernel(grid, model)
    khat = kern.khat
    et = transverse(initial.fields.e_hat, khat)
    b = transverse(initial.fields.b_hat, khat)
    q = initial.particle.q.copy()
    p = initial.particle.momentum(model.m)
    t0 = initial.t

    state0 = _assemble(kern, et, b, q, p, t0)
    e0 = total_energy(state0, grid, model)
    ts = np.empty(n_steps + 1)
    qs = np.empty((n_steps + 1, 3))
    vs = np.empty((n_steps + 1, 3))
    acc = np.empty((n_steps + 1, 3))
    snapshots = [state0]
    energy = [(t0, e0)]
    momentum = [(t0, *total_momentum(state0, grid, model))]

    for n in range(n_steps):
        v = kern.velocity(p)
        ts[n], qs[n], vs[n] = t0 + n * dt, q, v
        et, b, q, p, force = kern.step(et, b, q, p, dt)
        acc[n] = kern.acceleration(force, v)
        t = t0 + (n + 1) * dt
        vn = kern.velocity(p)
        if not np.all(np.isfinite(vn)) or not vn @ vn < 1.0:
            raise VelocityBoundError(f"|v| reached {np.linalg.norm(vn)} at t = {t}")
        if (n + 1) % sample_every == 0 or n + 1 == n_steps:
            st = _assemble(kern, et, b, q, p, t)
            en = total_energy(st, grid, model)
            drift = abs(en - e0) / abs(e0)
            if drift > max_energy_drift:
                raise EnergyDriftError(f"relative energy drift {drift:.3e} at t = {t} "
                                       f"exceeds {max_energy_drift:.1e}")
            snapshots.append(st)
            energy.append((t, en))
            momentum.append((t, *total_momentum(st, grid, model)))

    final = snapshots[-1]
    v = final.particle.v
    ts[-1], qs[-1], vs[-1] = final.t, final.particle.q, v
    acc[-1] = kern.acceleration(kern.force(transverse(final.fields.e_hat, khat),
                                           final.fields.b_hat, final.particle.q, v), v)

    order = slice(None) if dt > 0 else slice(None, None, -1)
    traj = Trajectory(ts[order].copy(), qs[order].copy(), vs[order].copy(),
                      acc[order].copy(), dt=abs(dt))
    fit = fit_power_law_tail(ts - t0, np.linalg.norm(acc, axis=-1), fit_window)
    bound = fit.tail_integral(t_final)
    log.info("simulated %d steps to t=%g; v=%s (bound %.3g)", n_steps, final.t, v, bound)
    return SimulationResult(final, traj, snapshots, v.copy(), bound, fit,
                            np.array(energy), np.array(momentum))


# --- initial data -------------------------------------------------------------------

def make_pulse(grid: KGrid, k0: float, width: float, amplitude: float,
               polarization, direction, center=(0.0, 0.0, 0.0)) -> SpectralFieldPair:
    """Divergence-free, Hermitian, infrared-regular free wave packet.

    The positive-frequency part travelling along ``direction`` is::

        f(k) = A (|k|/k0)^2 exp(-(|k|-k0)^2 / (2 width^2))
                 * ((1 + k_hat.d)/2)^2 * P_tr(k_hat) eps * exp(-i k.center)

    with ``B = k_hat x f``; adding the conjugate at ``-k`` makes the field
    real. The ``|k|^2`` factor makes ``|k| E_hat -> 0`` as ``|k| -> 0``.
    """
    if not width > 0:
        raise ValueError("pulse width must be positive")
    if not k0 > 3.0 * width:
        raise ValueError(f"k0={k0} must exceed 3*width={3 * width}")
    d = np.asarray(direction, dtype=float)
    d = d / np.linalg.norm(d)
    eps = np.asarray(polarization, dtype=float)
    eps = eps - d * (eps @ d)
    if np.linalg.norm(eps) < 1e-8:
        raise ValueError("pulse polarization must not be parallel to its direction")
    eps = eps / np.linalg.norm(eps)

    kmag = grid.kmag
    khat = np.broadcast_to(grid.khat, grid.shape)
    radial = amplitude * (kmag / k0) ** 2 * np.exp(-((kmag - k0) ** 2) / (2 * width**2))
    pol = eps - khat * (khat @ eps)[..., None]
    kxe = _cross(khat, pol)
    phase = np.exp(-1j * (grid.kvec @ np.asarray(center, float)))[..., None]
    cd = khat @ d
    th_plus = (0.5 * (1.0 + cd)) ** 2
    th_minus = (0.5 * (1.0 - cd)) ** 2
    env = radial[..., None] * phase
    e = env * (th_plus + th_minus)[..., None] * pol
    b = env * (th_plus - th_minus)[..., None] * kxe
    return SpectralFieldPair(e, b)
