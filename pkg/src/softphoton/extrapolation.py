"""Polynomial (Richardson/Neville) extrapolation to a vanishing parameter."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class Extrapolated:
    """Limit estimate with the order-difference error estimate."""

    value: np.ndarray
    error: np.ndarray
    orders: np.ndarray  # estimates using 1, 2, ... points; orders[-1] is value


def extrapolate_to_zero(h, values) -> Extrapolated:
    """Extrapolate ``values(h)`` to ``h = 0`` by Neville's algorithm.

    ``h`` has shape ``(n,)`` and ``values`` shape ``(n, ...)``; the trailing
    axes are treated independently. Successive estimates use the interpolating
    polynomial through the first 2, 3, ..., n samples, so samples should be
    ordered from closest to zero outwards. The error is the magnitude of the
    difference between the two highest-order estimates.
    """
    h = np.asarray(h, dtype=float)
    y = np.asarray(values)
    n = h.shape[0]
    if n < 2:
        raise ValueError("need at least two samples to extrapolate")
    if y.shape[0] != n:
        raise ValueError(f"values has {y.shape[0]} samples, h has {n}")
    if len(np.unique(h)) != n:
        raise ValueError("extrapolation abscissae must be distinct")

    hb = h.reshape((n,) + (1,) * (y.ndim - 1))
    # p[i] holds P_{i..i+m}(0) after m sweeps
    p = y.astype(np.result_type(y.dtype, float)).copy()
    estimates = [p[0].copy()]
    for m in range(1, n):
        lo = hb[: n - m]
        hi = hb[m:]
        p = (hi * p[: n - m] - lo * p[1 : n - m + 1]) / (hi - lo)
        estimates.append(p[0].copy())
    orders = np.stack(estimates)
    err = np.abs(orders[-1] - orders[-2])
    return Extrapolated(value=orders[-1], error=err, orders=orders)
