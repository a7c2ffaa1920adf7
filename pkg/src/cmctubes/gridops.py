"""Periodic-grid spectral calculus, Chebyshev interpolation, and order fits."""

from __future__ import annotations

import numpy as np

__all__ = [
    "fourier_diff_matrix",
    "fourier_derivative",
    "cheb_nodes",
    "cheb_vals_to_coeffs",
    "cheb_basis",
    "cheb_diff_coeffs",
    "loglog_slope",
]


def fourier_wavenumbers(n, length):
    k = np.fft.fftfreq(n, d=1.0 / n)
    if n % 2 == 0:
        k = k.copy()
    return 2.0 * np.pi * k / length


def fourier_derivative(field, length, axis=-1, order=1):
    """Spectral derivative of a periodic real field along ``axis``."""
    field = np.asarray(field, dtype=float)
    n = field.shape[axis]
    k = fourier_wavenumbers(n, length)
    fh = np.fft.fft(field, axis=axis)
    mult = (1j * k) ** order
    if order % 2 == 1 and n % 2 == 0:
        mult = mult.copy()
        mult[n // 2] = 0.0  # Nyquist mode has no well-defined odd derivative
    shape = [1] * field.ndim
    shape[axis] = n
    out = np.fft.ifft(fh * mult.reshape(shape), axis=axis)
    return np.real(out)


def fourier_diff_matrix(n, length, order=1):
    """Dense spectral differentiation matrix on a uniform periodic grid.

    Columns are the derivatives of the cardinal (delta) interpolants, so
    ``D @ f`` is the spectral derivative of the samples ``f``.
    """
    return fourier_derivative(np.eye(n), length, axis=0, order=order)


# ----------------------------------------------------------------------
# Chebyshev (first kind, Chebyshev–Gauss points) tensor interpolation


def cheb_nodes(n, lo=-1.0, hi=1.0):
    """Chebyshev–Gauss nodes mapped to [lo, hi], ascending."""
    t = np.cos(np.pi * (2 * np.arange(n) + 1) / (2 * n))[::-1]
    return 0.5 * (lo + hi) + 0.5 * (hi - lo) * t


def cheb_vals_to_coeffs(vals, axis=0):
    """Chebyshev coefficients from values at Chebyshev–Gauss nodes (ascending order).

    Uses the discrete cosine transform relation for the Gauss points.
    """
    vals = np.moveaxis(np.asarray(vals, dtype=float), axis, 0)
    n = vals.shape[0]
    j = np.arange(n)
    # nodes ascending correspond to theta descending; re-index to theta ascending
    v = vals[::-1]
    theta = np.pi * (2 * j + 1) / (2 * n)
    # coeff_k = (2 - delta_{k0}) / n * sum_j v_j cos(k theta_j)
    C = np.cos(np.outer(j, theta))
    coeffs = 2.0 / n * np.tensordot(C, v, axes=([1], [0]))
    coeffs[0] *= 0.5
    return np.moveaxis(coeffs, 0, axis)


def cheb_basis(x, n, lo=-1.0, hi=1.0, deriv=0):
    """Values (or derivative values) of T_0..T_{n-1} at points x; shape (..., n)."""
    x = np.asarray(x, dtype=float)
    t = (2.0 * x - (lo + hi)) / (hi - lo)
    t = np.clip(t, -1.0, 1.0)
    T = np.empty(x.shape + (n,))
    T[..., 0] = 1.0
    if n > 1:
        T[..., 1] = t
    for k in range(2, n):
        T[..., k] = 2 * t * T[..., k - 1] - T[..., k - 2]
    if deriv == 0:
        return T
    # dT_k/dx = k U_{k-1} * dt/dx
    U = np.empty(x.shape + (n,))
    U[..., 0] = 1.0
    if n > 1:
        U[..., 1] = 2 * t
    for k in range(2, n):
        U[..., k] = 2 * t * U[..., k - 1] - U[..., k - 2]
    dT = np.zeros_like(T)
    scale = 2.0 / (hi - lo)
    for k in range(1, n):
        dT[..., k] = k * U[..., k - 1] * scale
    if deriv == 1:
        return dT
    raise ValueError("deriv must be 0 or 1")


def cheb_diff_coeffs(coeffs, axis, lo=-1.0, hi=1.0):
    """Chebyshev coefficients of the derivative along one tensor axis."""
    coeffs = np.moveaxis(np.asarray(coeffs, dtype=float), axis, 0)
    n = coeffs.shape[0]
    out = np.zeros_like(coeffs)
    # recurrence: c'_{k-1} = c'_{k+1} + 2k c_k, with c'_{n-1} = c'_n = 0
    for k in range(n - 1, 0, -1):
        out[k - 1] = (out[k + 1] if k + 1 < n else 0.0) + 2.0 * k * coeffs[k]
    out[0] *= 0.5
    out *= 2.0 / (hi - lo)
    return np.moveaxis(out, 0, axis)


# ----------------------------------------------------------------------
# order fits


def loglog_slope(x, y):
    """Least-squares slope of log|y| against log x, ignoring exact zeros."""
    x = np.asarray(x, dtype=float)
    y = np.abs(np.asarray(y, dtype=float))
    mask = (y > 0) & (x > 0)
    if mask.sum() < 2:
        return np.nan
    return float(np.polyfit(np.log(x[mask]), np.log(y[mask]), 1)[0])
