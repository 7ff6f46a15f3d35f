"""Fourier-space grid, field containers and exact free Maxwell evolution.

Fourier convention used throughout the package::

    f_hat(k) = (2 pi)^(-3/2) * integral exp(-i k.x) f(x) d^3x

so that Plancherel holds without extra factors and a real field satisfies
``f_hat(-k) = conj(f_hat(k))``.

Field arrays have shape ``(n_radial, n_directions, 3)``.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.special import lambertw

CONVENTION_VERSION = "ft-unitary-minus-i/1"


@dataclass(frozen=True, eq=False)
class KGrid:
    """Spherical quadrature grid: log-spaced shells times a product sphere rule."""

    radial_nodes: np.ndarray
    radial_weights: np.ndarray
    directions: np.ndarray
    angular_weights: np.ndarray
    antipode_index: np.ndarray
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        for name in ("radial_nodes", "radial_weights", "directions",
                     "angular_weights", "antipode_index"):
            getattr(self, name).setflags(write=False)
        k = self.radial_nodes[:, None, None] * self.directions[None, :, :]
        k.setflags(write=False)
        w = self.radial_weights[:, None] * self.angular_weights[None, :]
        w.setflags(write=False)
        object.__setattr__(self, "_kvec", k)
        object.__setattr__(self, "_weights", w)

    @property
    def n_radial(self) -> int:
        return len(self.radial_nodes)

    @property
    def n_directions(self) -> int:
        return len(self.directions)

    @property
    def shape(self) -> tuple[int, int, int]:
        return (self.n_radial, self.n_directions, 3)

    @property
    def kvec(self) -> np.ndarray:
        """Node wave vectors, shape ``(n_radial, n_directions, 3)``."""
        return self._kvec

    @property
    def kmag(self) -> np.ndarray:
        """``|k|`` broadcastable against ``(n_radial, n_directions)``."""
        return self.radial_nodes[:, None]

    @property
    def khat(self) -> np.ndarray:
        """Unit directions broadcastable against node arrays."""
        return self.directions[None, :, :]

    @property
    def weights(self) -> np.ndarray:
        """Volume weights for integral d^3k, shape ``(n_radial, n_directions)``."""
        return self._weights


def _log_axis_weights(n: int, h: float) -> np.ndarray:
    # extended closed rule with O(h^4) end corrections (trapezoid for tiny n)
    w = np.ones(n)
    if n >= 6:
        w[[0, -1]] = 3.0 / 8.0
        w[[1, -2]] = 7.0 / 6.0
        w[[2, -3]] = 23.0 / 24.0
    else:
        w[[0, -1]] = 0.5
    return w * h


def _radial_map(k_min: float, k_max: float, k_knee: float | None, n: int):
    """Nodes uniform in ``s = ln(k/k_min) + (k - k_min)/k_knee`` and ``dk/ds``."""
    if k_knee is None:
        u = np.linspace(np.log(k_min), np.log(k_max), n)
        k = np.exp(u)
        k[0], k[-1] = k_min, k_max
        return k, k.copy(), u[1] - u[0]
    s_max = np.log(k_max / k_min) + (k_max - k_min) / k_knee
    s = np.linspace(0.0, s_max, n)
    arg = (k_min / k_knee) * np.exp(s + k_min / k_knee)
    k = k_knee * lambertw(arg).real
    k[0], k[-1] = k_min, k_max
    return k, k * k_knee / (k + k_knee), s[1] - s[0]


def build_kgrid(n_radial: int, k_min: float, k_max: float,
                n_polar: int, n_azimuth: int, k_knee: float | None = None) -> KGrid:
    """Build the spherical k-space grid.

    Radial nodes are log-spaced on ``[k_min, k_max]`` with weights for
    ``integral dk k^2`` from a composite rule on the ``ln k`` axis. Polar
    nodes are Gauss-Legendre in ``cos(theta)``, azimuths uniform and offset
    by half a cell. Both node sets are symmetric under ``k_hat -> -k_hat``
    for even counts, so every direction has an antipode on the grid.

    With ``k_knee`` set, nodes are uniform in ``ln k + k/k_knee`` instead:
    logarithmic well below the knee, uniformly spaced well above it. That
    caps the absolute spacing at large ``|k|``, which sets how long outgoing
    radiation stays away from the particle before the discrete shells
    rephase (roughly ``2 pi / spacing``).
    """
    if n_radial < 4:
        raise ValueError(f"n_radial must be >= 4, got {n_radial}")
    if not k_min > 0:
        raise ValueError(f"k_min must be positive, got {k_min}")
    if not k_max > k_min:
        raise ValueError(f"k_max ({k_max}) must exceed k_min ({k_min})")
    for name, n in (("n_polar", n_polar), ("n_azimuth", n_azimuth)):
        if n < 2 or n % 2:
            raise ValueError(f"{name} must be even and >= 2 for antipodal "
                             f"pairing, got {n}")

    if k_knee is not None and not k_knee > 0:
        raise ValueError(f"k_knee must be positive, got {k_knee}")
    k, jac, h = _radial_map(k_min, k_max, k_knee, n_radial)
    wr = _log_axis_weights(n_radial, h) * jac * k**2

    x, wx = np.polynomial.legendre.leggauss(n_polar)
    phi = 2.0 * np.pi * (np.arange(n_azimuth) + 0.5) / n_azimuth
    sin_t = np.sqrt(1.0 - x**2)
    # direction index d = i_polar * n_azimuth + i_azimuth
    dirs = np.stack([
        np.outer(sin_t, np.cos(phi)).ravel(),
        np.outer(sin_t, np.sin(phi)).ravel(),
        np.repeat(x, n_azimuth),
    ], axis=-1)
    dirs /= np.linalg.norm(dirs, axis=-1, keepdims=True)
    wang = np.outer(wx, np.full(n_azimuth, 2.0 * np.pi / n_azimuth)).ravel()

    ip, ia = np.divmod(np.arange(n_polar * n_azimuth), n_azimuth)
    antipode = (n_polar - 1 - ip) * n_azimuth + (ia + n_azimuth // 2) % n_azimuth

    params = dict(n_radial=n_radial, k_min=float(k_min), k_max=float(k_max),
                  n_polar=n_polar, n_azimuth=n_azimuth)
    if k_knee is not None:
        params["k_knee"] = float(k_knee)
    return KGrid(k, wr, dirs, wang, antipode, params)


@dataclass(frozen=True, eq=False)
class SpectralFieldPair:
    """Complex amplitudes ``(E_hat, B_hat)`` at every grid node."""

    e_hat: np.ndarray
    b_hat: np.ndarray

    def __post_init__(self):
        e = np.array(self.e_hat, dtype=complex)
        b = np.array(self.b_hat, dtype=complex)
        if e.shape != b.shape or e.ndim < 1 or e.shape[-1] != 3:
            raise ValueError(f"field shapes {e.shape} and {b.shape} do not "
                             "describe 3-vectors per node")
        e.setflags(write=False)
        b.setflags(write=False)
        object.__setattr__(self, "e_hat", e)
        object.__setattr__(self, "b_hat", b)

    @classmethod
    def zeros(cls, grid: KGrid) -> SpectralFieldPair:
        z = np.zeros(grid.shape, dtype=complex)
        return cls(z, z)

    def __add__(self, other: SpectralFieldPair) -> SpectralFieldPair:
        return SpectralFieldPair(self.e_hat + other.e_hat, self.b_hat + other.b_hat)

    def __sub__(self, other: SpectralFieldPair) -> SpectralFieldPair:
        return SpectralFieldPair(self.e_hat - other.e_hat, self.b_hat - other.b_hat)

    def scale(self, c) -> SpectralFieldPair:
        return SpectralFieldPair(c * self.e_hat, c * self.b_hat)


@dataclass(frozen=True)
class FieldFunctionals:
    energy: float
    momentum: np.ndarray
    l2_norm: float


def _check_shape(state: SpectralFieldPair, grid: KGrid):
    if state.e_hat.shape != grid.shape:
        raise ValueError(f"field shape {state.e_hat.shape} does not match "
                         f"grid shape {grid.shape}")


def longitudinal(v: np.ndarray, khat: np.ndarray) -> np.ndarray:
    return khat * np.sum(khat * v, axis=-1, keepdims=True)


def transverse(v: np.ndarray, khat: np.ndarray) -> np.ndarray:
    return v - longitudinal(v, khat)


def rotation_coefficients(grid: KGrid, t: float):
    """``cos(|k| t)`` and ``sin(|k| t)`` shaped for node arrays."""
    ph = grid.kmag[..., None] * t
    return np.cos(ph), np.sin(ph)


def rotate_fields(e, b, khat, c, s):
    """Apply the free Maxwell flow given precomputed ``cos``/``sin`` factors.

    Transverse parts rotate into each other; longitudinal parts are left
    unchanged (the exact flow of the source-free equations).
    """
    el = longitudinal(e, khat)
    bl = longitudinal(b, khat)
    et = e - el
    bt = b - bl
    e_new = el + c * et + 1j * s * np.cross(khat, bt)
    b_new = bl + c * bt - 1j * s * np.cross(khat, et)
    return e_new, b_new


def free_propagate(state: SpectralFieldPair, grid: KGrid, t: float) -> SpectralFieldPair:
    """Evolve by the source-free Maxwell equations for time ``t`` (any sign).

    Per node::

        E(t) = E_par + cos(|k|t) E_tr + i sin(|k|t) k_hat x B
        B(t) = B_par + cos(|k|t) B_tr - i sin(|k|t) k_hat x E

    Exact in ``t``; a group in ``t`` and unitary per node.
    """
    _check_shape(state, grid)
    c, s = rotation_coefficients(grid, t)
    e, b = rotate_fields(state.e_hat, state.b_hat, grid.khat, c, s)
    return SpectralFieldPair(e, b)


def field_norm(state: SpectralFieldPair, grid: KGrid) -> float:
    dens = np.sum(np.abs(state.e_hat) ** 2 + np.abs(state.b_hat) ** 2, axis=-1)
    return float(np.sqrt(np.sum(grid.weights * dens)))


def functionals(state: SpectralFieldPair, grid: KGrid) -> FieldFunctionals:
    """Field energy ``1/2 int(|E|^2+|B|^2)``, momentum ``int E x B`` and L2 norm.

    Momentum is evaluated as ``int d^3k Re(conj(E_hat) x B_hat)``, which equals
    the position-space ``int E x B d^3x`` for real fields.
    """
    _check_shape(state, grid)
    w = grid.weights
    dens = np.sum(np.abs(state.e_hat) ** 2 + np.abs(state.b_hat) ** 2, axis=-1)
    total = float(np.sum(w * dens))
    pden = np.cross(np.conj(state.e_hat), state.b_hat)
    p = np.einsum("rd,rdi->i", w, pden)
    scale = float(np.sum(w * np.linalg.norm(pden, axis=-1)))
    if scale > 0 and np.max(np.abs(p.imag)) > 1e-10 * max(scale, 1e-300):
        warnings.warn("momentum accumulator has a significant imaginary part; "
                      "field is not Hermitian-symmetric", RuntimeWarning, stacklevel=2)
    return FieldFunctionals(energy=0.5 * total, momentum=p.real.copy(),
                            l2_norm=float(np.sqrt(total)))


def enforce_hermitian(state: SpectralFieldPair, grid: KGrid) -> SpectralFieldPair:
    """Average each node with the conjugate of its antipodal node."""
    _check_shape(state, grid)
    a = grid.antipode_index
    e = 0.5 * (state.e_hat + np.conj(state.e_hat[:, a]))
    b = 0.5 * (state.b_hat + np.conj(state.b_hat[:, a]))
    return SpectralFieldPair(e, b)


def hermitian_defect(state: SpectralFieldPair, grid: KGrid) -> float:
    a = grid.antipode_index
    de = np.max(np.abs(state.e_hat - np.conj(state.e_hat[:, a])), initial=0.0)
    db = np.max(np.abs(state.b_hat - np.conj(state.b_hat[:, a])), initial=0.0)
    return float(max(de, db))


# --- columnar snapshot format -------------------------------------------------

_COLUMNS = ["k", "khat_x", "khat_y", "khat_z",
            "re_ex", "im_ex", "re_ey", "im_ey", "re_ez", "im_ez",
            "re_bx", "im_bx", "re_by", "im_by", "re_bz", "im_bz"]


def write_field(path, state: SpectralFieldPair, grid: KGrid, meta: dict | None = None):
    """Write one row per node: ``|k|``, ``k_hat``, then Re/Im of E and B."""
    _check_shape(state, grid)
    header = {"convention": CONVENTION_VERSION, "grid": grid.params,
              "meta": meta or {}}
    kk = np.broadcast_to(grid.kmag, (grid.n_radial, grid.n_directions))
    dd = np.broadcast_to(grid.khat, grid.shape)
    cols = [kk.ravel()] + [dd[..., i].ravel() for i in range(3)]
    for arr in (state.e_hat, state.b_hat):
        for i in range(3):
            cols += [arr[..., i].real.ravel(), arr[..., i].imag.ravel()]
    table = np.column_stack(cols)
    with open(path, "w") as fh:
        fh.write("# " + json.dumps(header, sort_keys=True) + "\n")
        fh.write(",".join(_COLUMNS) + "\n")
        for row in table:
            fh.write(",".join(repr(float(x)) for x in row) + "\n")


def read_field(path) -> tuple[SpectralFieldPair, KGrid, dict]:
    path = Path(path)
    with open(path) as fh:
        first = fh.readline()
        if not first.startswith("# "):
            raise ValueError(f"{path}: missing header line")
        header = json.loads(first[2:])
        columns = fh.readline().strip().split(",")
        if columns != _COLUMNS:
            raise ValueError(f"{path}: unexpected columns {columns}")
        table = np.loadtxt(fh, delimiter=",", ndmin=2)
    if header.get("convention") != CONVENTION_VERSION:
        raise ValueError(f"{path}: convention {header.get('convention')!r} "
                         f"is not {CONVENTION_VERSION!r}")
    grid = build_kgrid(**header["grid"])
    if table.shape[0] != grid.n_radial * grid.n_directions:
        raise ValueError(f"{path}: {table.shape[0]} rows for a grid of "
                         f"{grid.n_radial * grid.n_directions} nodes")
    vals = table[:, 4:].reshape(grid.n_radial, grid.n_directions, 6, 2)
    cplx = vals[..., 0] + 1j * vals[..., 1]
    return SpectralFieldPair(cplx[..., :3], cplx[..., 3:]), grid, header["meta"]
