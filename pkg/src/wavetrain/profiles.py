"""Periodic wave profiles: Newton solver, continuation, serialization.

A profile is a 1-periodic solution phi of

    k^2 phi'' + k c phi' + f(phi) = 0,

found as Fourier coefficients on modes -M..M together with one free scalar
(the wave speed c, or the spatial scale k), pinned by the phase condition
<guess', phi>_{L2(0,1)} = 0.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla

from . import fourier
from .errors import (
    ContinuationError,
    DegenerateProfileError,
    ModelParameterError,
    ProfileConvergenceError,
)
from .models import make_model

TWO_PI = 2.0 * np.pi

_SCHEMA_VERSION = 1


@dataclass
class WaveProfile:
    """A solved wave train: model, truncation, scales, coefficients."""

    model: object
    m_f: int
    k: float
    c: float
    coeffs: np.ndarray            # (2*m_f+1, n) complex, Hermitian
    residual_norm: float
    info: dict = field(default_factory=dict)

    @property
    def n(self):
        return self.coeffs.shape[1]

    def __call__(self, x, deriv=0):
        return fourier.synth(self.coeffs, x, deriv=deriv)

    def on_grid(self, grid_size, deriv=0):
        return fourier.synth_grid(self.coeffs, grid_size, deriv=deriv)

    def derivative_l2(self):
        """L2(0,1) norm of phi'."""
        return float(np.linalg.norm(fourier.deriv_coeffs(self.coeffs)))

    def amplitude(self, samples=512):
        """Max of |phi(x)| (Euclidean across components) on a fine grid."""
        vals = self.on_grid(max(samples, 4 * self.m_f + 4))
        return float(np.sqrt((vals * vals).sum(axis=1)).max())


def rgl_analytic(q, m_f=32):
    """Exact wave-train coefficients for the real Ginzburg-Landau model.

    phi(y) = sqrt(1-q^2) (cos 2 pi y, sin 2 pi y) with k = q/(2 pi), c = 0.
    """
    if not 0.0 < q * q < 1.0:
        raise ModelParameterError(
            f"rgl wave train needs 0 < q^2 < 1 (amplitude sqrt(1-q^2)); got q={q}")
    amp = np.sqrt(1.0 - q * q)
    coeffs = np.zeros((2 * m_f + 1, 2), dtype=complex)
    coeffs[m_f + 1] = amp * np.array([0.5, -0.5j])
    coeffs[m_f - 1] = np.conj(coeffs[m_f + 1])
    return coeffs, q / TWO_PI, 0.0


def nagumo_guess(alpha, amplitude=0.1, m_f=32, detune=0.95):
    """Small-oscillation guess around the middle rest state of the nagumo model.

    Returns (coeffs, k, c) with k detuned below the linearization value
    sqrt(alpha(1-alpha))/(2 pi); nonconstant period-1 orbits exist for k
    slightly below it (the period grows with amplitude). Solve with the wave
    speed free and k fixed: the scalar problem at c = 0 is variational, which
    makes <phi', residual> vanish identically; freeing c absorbs that
    redundancy, while freeing k instead yields a singular bordered system.
    """
    coeffs = np.zeros((2 * m_f + 1, 1), dtype=complex)
    coeffs[m_f, 0] = alpha
    coeffs[m_f + 1, 0] = amplitude / 2.0
    coeffs[m_f - 1, 0] = amplitude / 2.0
    k_guess = detune * np.sqrt(alpha * (1.0 - alpha)) / TWO_PI
    return coeffs, k_guess, 0.0


def _packed_residual(model, coeffs, k, c, grid_size):
    m = fourier.trunc_order(coeffs)
    phi = fourier.synth_grid(coeffs, grid_size)
    fhat = fourier.grid_coeffs(model.f(phi), m)
    ell = fourier.modes(m)
    sym = k * k * (TWO_PI * 1j * ell) ** 2 + k * c * (TWO_PI * 1j * ell)
    res = sym[:, None] * coeffs + fhat
    return res, phi


def _res_norm(res):
    # L2(0,1) norm of the mode-projected residual function
    return float(np.linalg.norm(res))


def _real_rows(full_rows, m, n):
    """Map complex rows on modes -m..m to the packed real row layout."""
    rows = np.empty(((2 * m + 1) * n,) + full_rows.shape[1:])
    rows[:n] = full_rows[m * n:(m + 1) * n].real
    for l in range(1, m + 1):
        base = n + (l - 1) * 2 * n
        blk = full_rows[(m + l) * n:(m + l + 1) * n]
        rows[base:base + n] = blk.real
        rows[base + n:base + 2 * n] = blk.imag
    return rows


def _packing_matrix(m, n):
    """Complex matrix taking packed real unknowns to the full coefficient vector."""
    dim = (2 * m + 1) * n
    b = np.zeros((dim, dim), dtype=complex)
    for j in range(n):
        b[m * n + j, j] = 1.0
    for l in range(1, m + 1):
        base = n + (l - 1) * 2 * n
        for j in range(n):
            b[(m + l) * n + j, base + j] = 1.0
            b[(m - l) * n + j, base + j] = 1.0
            b[(m + l) * n + j, base + n + j] = 1.0j
            b[(m - l) * n + j, base + n + j] = -1.0j
    return b


def solve_profile(model, guess, k, c, solve_for="c", tol=1e-10, max_iter=25,
                  grid_size=None):
    """Newton-solve the profile equation from coefficient guess ``guess``.

    ``solve_for`` selects the free scalar ("c" or "k"); the other of k, c stays
    fixed at the passed value. Raises ProfileConvergenceError on failure and
    DegenerateProfileError if the guess or the solution is constant.
    """
    if solve_for not in ("c", "k"):
        raise ValueError(f"solve_for must be 'c' or 'k', got {solve_for!r}")
    coeffs = np.array(guess, dtype=complex)
    m = fourier.trunc_order(coeffs)
    n = coeffs.shape[1]
    # project the guess onto real-valued functions (Hermitian symmetry)
    coeffs = 0.5 * (coeffs + np.conj(coeffs[::-1]))
    if grid_size is None:
        grid_size = 4 * (m + 1)
    gderiv = fourier.deriv_coeffs(coeffs)
    if np.linalg.norm(gderiv) < 1e-8:
        raise DegenerateProfileError("guess is a constant state; phase condition is singular")
    gflat = gderiv.reshape(-1)

    ell = fourier.modes(m)
    kk, cc = float(k), float(c)
    pack = _packing_matrix(m, n)
    history = []
    dim = (2 * m + 1) * n
    for it in range(max_iter):
        res, phi = _packed_residual(model, coeffs, kk, cc, grid_size)
        rnorm = _res_norm(res)
        history.append(rnorm)
        if not np.isfinite(rnorm):
            raise ProfileConvergenceError(
                f"residual became non-finite at iteration {it}", rnorm, history)
        if rnorm < tol:
            break

        that = fourier.matrix_field_coeffs(model.df(phi), 2 * m)
        afull = fourier.operator_matrix(ell, 0.0, kk * kk, kk * cc, that)
        jac = np.empty((dim + 1, dim + 1))
        jac[:dim, :dim] = _real_rows(afull @ pack, m, n)
        if solve_for == "c":
            dscalar = (kk * (TWO_PI * 1j * ell))[:, None] * coeffs
        else:
            dscalar = ((2.0 * kk * (TWO_PI * 1j * ell) ** 2
                        + cc * (TWO_PI * 1j * ell)))[:, None] * coeffs
        jac[:dim, dim] = _real_rows(dscalar.reshape(-1), m, n)
        jac[dim, :dim] = np.real(np.conj(gflat) @ pack)
        jac[dim, dim] = 0.0

        phase = float(np.real(np.vdot(gflat, coeffs.reshape(-1))))
        rhs = np.empty(dim + 1)
        rhs[:dim] = _real_rows(res.reshape(-1), m, n)
        rhs[dim] = phase
        try:
            with warnings.catch_warnings():
                warnings.simplefilter("error", sla.LinAlgWarning)
                delta = sla.solve(jac, -rhs)
        except (sla.LinAlgError, sla.LinAlgWarning) as exc:
            raise ProfileConvergenceError(
                "singular Newton system (a continuous symmetry may make the chosen "
                f"free scalar redundant): {exc}", rnorm, history)
        coeffs = coeffs + fourier.hermitian_unpack(delta[:dim], m, n)
        if solve_for == "c":
            cc += delta[dim]
        else:
            kk += delta[dim]
    else:
        raise ProfileConvergenceError(
            f"no convergence after {max_iter} iterations (residual {history[-1]:.3e})",
            history[-1], history)

    prof = WaveProfile(model, m, kk, cc, coeffs, rnorm,
                       info={"newton_residuals": history, "solve_for": solve_for,
                             "grid_size": grid_size})
    if prof.derivative_l2() < 1e-6:
        raise DegenerateProfileError("converged to a constant state")
    if prof.k <= 0.0:
        raise ProfileConvergenceError(f"converged to nonpositive k = {prof.k:.3e}",
                                      rnorm, history)
    return prof


def profile_residual(profile, grid_size=None):
    """Recompute the mode-projected residual norm of a profile."""
    if grid_size is None:
        grid_size = 4 * (profile.m_f + 1)
    res, _ = _packed_residual(profile.model, profile.coeffs, profile.k, profile.c,
                              grid_size)
    return _res_norm(res)


def continue_profile(profile, param, target, steps, tol=1e-10, max_iter=25):
    """Walk ``param`` from its current value to ``target`` in ``steps`` Newton solves.

    ``param`` is one of "k", "c", "q" (rgl shorthand for k = q/(2 pi)) or a model
    parameter name. Returns the list of profiles along the way (excluding the
    start). Raises ContinuationError carrying the last good parameter value.
    """
    if steps == 0:
        return [profile]
    model = profile.model
    if param == "k":
        current = profile.k
    elif param == "q":
        if model.id != "rgl":
            raise ValueError("continuation parameter 'q' only applies to the rgl model")
        current = TWO_PI * profile.k
    elif param == "c":
        current = profile.c
    elif param in model.params:
        current = model.params[param]
    else:
        raise ValueError(f"unknown continuation parameter {param!r}")

    values = np.linspace(current, target, steps + 1)[1:]
    out = []
    last_good = current
    prev = profile
    for val in values:
        try:
            if param in ("k", "q"):
                kk = val / TWO_PI if param == "q" else val
                nxt = solve_profile(model, prev.coeffs, kk, prev.c, solve_for="c",
                                    tol=tol, max_iter=max_iter)
            elif param == "c":
                nxt = solve_profile(model, prev.coeffs, prev.k, val, solve_for="k",
                                    tol=tol, max_iter=max_iter)
            else:
                stepped = make_model(model.id, {**model.params, param: val})
                nxt = solve_profile(stepped, prev.coeffs, prev.k, prev.c,
                                    solve_for=profile.info.get("solve_for", "c"),
                                    tol=tol, max_iter=max_iter)
                model = stepped
        except (ProfileConvergenceError, DegenerateProfileError) as exc:
            raise ContinuationError(
                f"continuation in {param!r} failed at {val:.6g}: {exc}",
                param_name=param, last_good_value=last_good, profiles=out) from exc
        out.append(nxt)
        prev = nxt
        last_good = val
    return out


def save_profile(profile, path):
    """Serialize a profile to JSON (doubles round-trip bit-faithfully)."""
    m = profile.m_f
    payload = {
        "schema_version": _SCHEMA_VERSION,
        "model_id": profile.model.id,
        "params": {key: float(val) for key, val in sorted(profile.model.params.items())},
        "n": profile.n,
        "m_f": m,
        "k": float(profile.k),
        "c": float(profile.c),
        "coeffs": [
            [[float(z.real), float(z.imag)] for z in profile.coeffs[:, comp]]
            for comp in range(profile.n)
        ],
        "residual_norm": float(profile.residual_norm),
    }
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_profile(path):
    with open(path) as fh:
        payload = json.load(fh)
    if payload.get("schema_version") != _SCHEMA_VERSION:
        raise ValueError(f"unsupported profile schema {payload.get('schema_version')!r}")
    model = make_model(payload["model_id"], payload["params"])
    m = payload["m_f"]
    n = payload["n"]
    coeffs = np.empty((2 * m + 1, n), dtype=complex)
    for comp in range(n):
        pairs = payload["coeffs"][comp]
        if len(pairs) != 2 * m + 1:
            raise ValueError("coefficient list length does not match m_f")
        coeffs[:, comp] = [re + 1j * im for re, im in pairs]
    return WaveProfile(model, m, payload["k"], payload["c"], coeffs,
                       payload["residual_norm"], info={"loaded_from": str(path)})
