"""Discrete N-periodic functions, their Bloch transform, and norms.

Functions live on a uniform grid of P = m_x * N points covering [0, N), with
m_x samples per unit cell, stored as arrays of shape (P, n_components).

The Bloch transform of an N-periodic grid function is exact on this grid: the
global DFT index m splits as m = j + l*N, giving for each admissible frequency
xi_j = 2*pi*j/N a 1-periodic amplitude with m_x Fourier coefficients.  The
inverse recombines them,

    g(x) = (1/N) * sum_j e^{i xi_j x} (B g)(xi_j, x),

and Parseval holds in the form
``integral_0^N |g|^2 = (1/N) * sum_j ||(B g)(xi_j, .)||^2_{L2(0,1)}``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

TWO_PI = 2.0 * np.pi


@dataclass
class GridFunction:
    """Samples of an N-periodic vector-valued function on a uniform grid."""

    n_period: int
    values: np.ndarray      # (P, n), P = m_x * n_period

    def __post_init__(self):
        vals = np.asarray(self.values)
        if vals.ndim == 1:
            vals = vals[:, None]
        if vals.ndim != 2:
            raise ValueError(f"values must be 1- or 2-dimensional, got shape {vals.shape}")
        if vals.shape[0] % self.n_period != 0:
            raise ValueError(
                f"{vals.shape[0]} samples do not divide into {self.n_period} cells")
        self.values = vals

    @property
    def n_points(self):
        return self.values.shape[0]

    @property
    def n_components(self):
        return self.values.shape[1]

    @property
    def m_x(self):
        return self.values.shape[0] // self.n_period

    @property
    def spacing(self):
        return 1.0 / self.m_x

    @property
    def x(self):
        return np.arange(self.n_points) / self.m_x

    def interp(self, points, deriv=0):
        """Trigonometric interpolation (and differentiation) at arbitrary points."""
        coeffs = np.fft.fft(self.values, axis=0) / self.n_points
        omega = TWO_PI * np.fft.fftfreq(self.n_points, d=1.0 / self.n_points) / self.n_period
        pts = np.atleast_1d(np.asarray(points, dtype=float))
        phases = np.exp(1j * np.outer(pts, omega))
        if deriv:
            coeffs = coeffs * (1j * omega[:, None]) ** deriv
        out = phases @ coeffs
        if np.isrealobj(self.values):
            out = out.real
        return out

    def copy(self):
        return GridFunction(self.n_period, self.values.copy())


def grid_points(n_period, m_x):
    """The P = m_x * N sample locations in [0, N)."""
    return np.arange(m_x * n_period) / m_x


def from_callable(fn, n_period, m_x):
    """Sample a callable of x into a GridFunction."""
    vals = np.asarray(fn(grid_points(n_period, m_x)))
    return GridFunction(n_period, vals)


def from_profile(profile, n_period, m_x):
    """Sample a wave profile exactly by synthesizing one cell and tiling it."""
    if m_x < 2 * profile.m_f + 1:
        raise ValueError(
            f"m_x = {m_x} cannot represent modes up to {profile.m_f}; "
            f"need at least {2 * profile.m_f + 1} samples per cell")
    cell = profile.on_grid(m_x)
    return GridFunction(n_period, np.tile(cell, (n_period, 1)))


# ---------------------------------------------------------------------------
# Bloch transform

@dataclass
class BlochCoefficients:
    """Per-frequency 1-periodic Fourier coefficients of an N-periodic function.

    ``coeffs[j, l, :]`` multiplies e^{i xi_j x} * e^{2 pi i l x} with both the
    frequency index j and the cell mode l signed in FFT wrap order, so slot
    (j, l) carries the global mode of frequency xi_j + 2*pi*l exactly.
    """

    n_period: int
    coeffs: np.ndarray          # (N, m_x, n) complex
    was_real: bool = True

    @property
    def m_x(self):
        return self.coeffs.shape[1]

    @property
    def n_components(self):
        return self.coeffs.shape[2]

    @property
    def frequencies(self):
        """Signed Bloch frequencies 2*pi*j/N in FFT wrap order."""
        j = np.fft.fftfreq(self.n_period, d=1.0 / self.n_period)
        return TWO_PI * j / self.n_period

    @property
    def zero_index(self):
        return 0

    def copy(self):
        return BlochCoefficients(self.n_period, self.coeffs.copy(), self.was_real)


def cell_modes(m_x):
    """Signed 1-periodic mode numbers in FFT wrap order (m_x odd recommended)."""
    return np.fft.fftfreq(m_x, d=1.0 / m_x).astype(int)


def _mode_slots(n_period, m_x):
    """FFT slot of global mode j + l*N for signed j (rows) and signed l (cols).

    The signed decompositions j + l*N cover P consecutive integers, so the map
    to slots mod P is a bijection and the transform below is exact.
    """
    P = n_period * m_x
    jj = np.fft.fftfreq(n_period, d=1.0 / n_period).astype(int)
    ll = np.fft.fftfreq(m_x, d=1.0 / m_x).astype(int)
    return np.mod(jj[:, None] + ll[None, :] * n_period, P)


def bloch_transform(gf):
    """Exact discrete Bloch transform of a grid function."""
    N = gf.n_period
    c = np.fft.fft(gf.values, axis=0) / gf.n_points
    beta = N * c[_mode_slots(N, gf.m_x)]
    return BlochCoefficients(N, beta, was_real=np.isrealobj(gf.values))


def bloch_inverse(bc):
    """Invert the Bloch transform back to grid samples."""
    N = bc.n_period
    P = N * bc.m_x
    c = np.empty((P, bc.n_components), dtype=complex)
    c[_mode_slots(N, bc.m_x).reshape(-1)] = bc.coeffs.reshape(P, bc.n_components) / N
    vals = np.fft.ifft(c * P, axis=0)
    if bc.was_real:
        vals = vals.real
    return GridFunction(N, vals)


def cell_norms_sq(bc):
    """||(B g)(xi_j, .)||^2_{L2(0,1)} for each frequency j."""
    return np.sum(np.abs(bc.coeffs) ** 2, axis=(1, 2))


# ---------------------------------------------------------------------------
# norms and inner products on [0, N)

def inner_l2(f, g):
    """<f, g> = integral over [0, N) of conj(f) . g (exact for band-limited data)."""
    return complex(np.vdot(f.values, g.values)) * f.spacing


def norm_l2(gf):
    return float(np.sqrt(np.sum(np.abs(gf.values) ** 2) * gf.spacing))


def norm_l1(gf):
    """integral of the pointwise Euclidean magnitude (trapezoid = plain sum)."""
    return float(np.sum(np.linalg.norm(gf.values, axis=1)) * gf.spacing)


def norm_linf(gf):
    return float(np.max(np.linalg.norm(gf.values, axis=1)))


def norm_h(gf, s):
    """Sobolev norm via global multipliers (1 + omega^2)^{s/2}."""
    P = gf.n_points
    c = np.fft.fft(gf.values, axis=0) / P
    omega = TWO_PI * np.fft.fftfreq(P, d=1.0 / P) / gf.n_period
    weights = (1.0 + omega ** 2) ** s
    total = np.sum(weights[:, None] * np.abs(c) ** 2) * gf.n_period
    return float(np.sqrt(total))


def derivative(gf, order=1):
    """Spectral derivative on the grid."""
    P = gf.n_points
    c = np.fft.fft(gf.values, axis=0)
    omega = TWO_PI * np.fft.fftfreq(P, d=1.0 / P) / gf.n_period
    c = c * (1j * omega[:, None]) ** order
    vals = np.fft.ifft(c, axis=0)
    if np.isrealobj(gf.values):
        vals = vals.real
    return GridFunction(gf.n_period, vals)
