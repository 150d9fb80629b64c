"""Bloch operators of the linearization about a wave profile.

The co-moving linearization about phi is the generator

    L w = k w'' + c w' + Df(phi(x)) w / k,

acting on N-periodic functions. On each Bloch frequency xi the conjugated
operator L_xi = e^{-i xi x} L e^{i xi x} acts on 1-periodic functions and is
discretized here as a dense matrix on Fourier modes (Hill's method): diagonal
symbol blocks k (i(xi+2*pi*l))^2 + c i(xi+2*pi*l) plus the block-Toeplitz
convolution with the coefficients of Df(phi(.))/k.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla

from . import fourier
from .errors import BranchTrackingError

TWO_PI = 2.0 * np.pi


# ---------------------------------------------------------------------------
# frequency lattice

@dataclass(frozen=True)
class SubharmonicFrequencyGrid:
    """The N admissible Bloch frequencies of N-periodic perturbations."""

    n_period: int
    frequencies: np.ndarray     # sorted ascending, contains 0

    def __post_init__(self):
        if self.n_period < 1:
            raise ValueError(f"period multiple must be >= 1, got {self.n_period}")


def omega_grid(n_period):
    """Frequencies 2*pi*j/N with j centered (even N keeps -pi, drops +pi)."""
    if n_period < 1:
        raise ValueError(f"period multiple must be >= 1, got {n_period}")
    half = n_period // 2
    if n_period % 2 == 0:
        j = np.arange(-half, half)
    else:
        j = np.arange(-half, half + 1)
    return SubharmonicFrequencyGrid(n_period, TWO_PI * j / n_period)


# ---------------------------------------------------------------------------
# operator assembly

@dataclass
class BlochMatrix:
    """Dense Bloch-operator block at one frequency."""

    xi: float
    ells: np.ndarray
    entries: np.ndarray

    @property
    def dim(self):
        return self.entries.shape[0]


def reaction_coeffs(profile, span):
    """Fourier coefficients -span..span of Df(phi(.)), sampled alias-safely."""
    m = profile.m_f
    grid = 2 * (m + span + 1)
    phi = profile.on_grid(grid)
    return fourier.matrix_field_coeffs(profile.model.df(phi), span)


def assemble_bloch(profile, xi, m_f=None, ells=None, that=None):
    """Build the dense matrix of L_xi on modes ``ells`` (default -m_f..m_f)."""
    if ells is None:
        m = profile.m_f if m_f is None else m_f
        ells = fourier.modes(m)
    ells = np.asarray(ells)
    if that is None:
        span = int(np.abs(ells[:, None] - ells[None, :]).max())
        that = reaction_coeffs(profile, span)
    k, c = profile.k, profile.c
    mat = fourier.operator_matrix(ells, xi, k, c, that, react_scale=1.0 / k)
    return BlochMatrix(float(xi), ells, mat)


def bloch_spectrum(bm, count=None, vectors=False):
    """Eigenvalues sorted by descending real part; optional unit eigenvectors."""
    if vectors:
        lam, vecs = sla.eig(bm.entries)
        order = np.argsort(-lam.real)
        lam = lam[order]
        vecs = vecs[:, order]
        vecs = vecs / np.linalg.norm(vecs, axis=0, keepdims=True)
        if count is not None:
            lam, vecs = lam[:count], vecs[:, :count]
        return lam, vecs
    lam = sla.eigvals(bm.entries)
    lam = lam[np.argsort(-lam.real)]
    return lam if count is None else lam[:count]


def phi_prime_vector(profile, ells):
    """Coefficient vector of phi' on the mode set ``ells`` (mode-major layout)."""
    dc = fourier.deriv_coeffs(profile.coeffs)
    m = profile.m_f
    ells = np.asarray(ells)
    out = np.zeros((ells.size, profile.n), dtype=complex)
    inside = np.abs(ells) <= m
    out[inside] = dc[ells[inside] + m]
    return out.reshape(-1)


# ---------------------------------------------------------------------------
# critical branch

@dataclass
class CriticalModeData:
    """One point of the critical branch, in the phi'-anchored gauge.

    ``phi_vec`` is scaled so that <phi', phi_vec>_{L2(0,1)} = ||phi'||^2
    (hence phi_vec -> phi' as xi -> 0) and ``adjoint_vec`` satisfies
    <adjoint_vec, phi_vec> = 1.
    """

    xi: float
    lam: complex
    phi_vec: np.ndarray
    adjoint_vec: np.ndarray
    ells: np.ndarray


def _tracked_eig(entries, ref, overlap_floor=0.5):
    """Eigen-decomposition picking the branch member closest to ``ref``."""
    lam, vl, vr = sla.eig(entries, left=True, right=True)
    vr_n = vr / np.linalg.norm(vr, axis=0, keepdims=True)
    overlaps = np.abs(ref.conj() @ vr_n) / np.linalg.norm(ref)
    order = np.argsort(-overlaps)
    best = order[0]
    if overlaps.size > 1 and overlaps[order[1]] >= overlap_floor:
        raise BranchTrackingError(
            f"ambiguous branch continuation: overlaps {overlaps[order[0]]:.3f} and "
            f"{overlaps[order[1]]:.3f} both exceed {overlap_floor}")
    return lam, vl, vr, best, overlaps[best]


class _BranchWalker:
    """Continues the phi'-rooted eigenbranch in xi by eigenvector overlap."""

    def __init__(self, profile, ells, that, max_step=0.15):
        self.profile = profile
        self.ells = np.asarray(ells)
        self.that = that
        self.max_step = max_step
        self.phi_vec = phi_prime_vector(profile, self.ells)
        self._cache = {}

    def _matrix(self, xi):
        return assemble_bloch(self.profile, xi, ells=self.ells, that=self.that).entries

    def mode_at(self, xi, keep_vectors=True):
        """Mode data at xi, walking from 0 in steps of at most ``max_step``."""
        key = round(float(xi), 14)
        if key in self._cache:
            return self._cache[key]
        if xi < 0:
            pos = self.mode_at(-xi)
            flip = np.conj(pos.phi_vec.reshape(self.ells.size, -1)[::-1]).reshape(-1)
            flip_adj = np.conj(pos.adjoint_vec.reshape(self.ells.size, -1)[::-1]).reshape(-1)
            data = CriticalModeData(float(xi), np.conj(pos.lam), flip, flip_adj,
                                    self.ells)
            self._cache[key] = data
            return data

        nsteps = max(1, int(np.ceil(xi / self.max_step)))
        path = np.linspace(0.0, xi, nsteps + 1)
        ref = self.phi_vec / np.linalg.norm(self.phi_vec)
        data = None
        for x in path:
            xkey = round(float(x), 14)
            if xkey in self._cache:
                data = self._cache[xkey]
                ref = data.phi_vec / np.linalg.norm(data.phi_vec)
                continue
            lam, vl, vr, idx, _ = _tracked_eig(self._matrix(x), ref)
            v = vr[:, idx]
            s = np.vdot(self.phi_vec, v)
            vnorm = np.linalg.norm(v) * np.linalg.norm(self.phi_vec)
            if abs(s) < 1e-8 * vnorm:
                raise BranchTrackingError(
                    f"critical eigenvector at xi={x:.4f} is orthogonal to phi'; "
                    "gauge undefined")
            phi_vec = v * (np.vdot(self.phi_vec, self.phi_vec) / s)
            w = vl[:, idx]
            z = np.vdot(w, phi_vec)
            if abs(z) < 1e-12 * np.linalg.norm(w) * np.linalg.norm(phi_vec):
                raise BranchTrackingError(
                    f"left/right eigenvector pairing degenerate at xi={x:.4f}")
            adjoint = w / np.conj(z)
            data = CriticalModeData(float(x), lam[idx], phi_vec, adjoint, self.ells)
            self._cache[xkey] = data
            ref = phi_vec / np.linalg.norm(phi_vec)
        return data


def critical_mode_data(profile, xi, m_f=None):
    """Track the critical branch from 0 to xi and return its gauge-fixed data."""
    m = profile.m_f if m_f is None else m_f
    ells = fourier.modes(m)
    span = 2 * m
    walker = _BranchWalker(profile, ells, reaction_coeffs(profile, span))
    return walker.mode_at(float(xi))


@dataclass
class CriticalCurve:
    """Sampled critical dispersion branch with its small-xi fit."""

    xis: np.ndarray
    lambdas: np.ndarray
    a: float                  # drift:   lambda_c(xi) ~ i a xi ...
    d: float                  # curvature: ... - d xi^2
    d_second_diff: float      # centered second difference at 0, for cross-checks
    fit_residual: float


def critical_curve(profile, xi_max=0.25, samples=17, m_f=None):
    """Track lambda_c on |xi| <= xi_max and fit i*a*xi - d*xi^2."""
    if samples < 3 or samples % 2 == 0:
        raise ValueError("samples must be an odd number >= 3 so the grid contains 0")
    if not 0.0 < xi_max <= np.pi:
        raise ValueError(f"xi_max must lie in (0, pi], got {xi_max}")
    m = profile.m_f if m_f is None else m_f
    ells = fourier.modes(m)
    walker = _BranchWalker(profile, ells, reaction_coeffs(profile, 2 * m))
    xis = np.linspace(-xi_max, xi_max, samples)
    lams = np.array([walker.mode_at(x).lam for x in xis])

    xs = xis
    d = -float(np.sum(lams.real * xs ** 2) / np.sum(xs ** 4))
    a = float(np.sum(lams.imag * xs) / np.sum(xs ** 2))
    model_vals = 1j * a * xs - d * xs ** 2
    fit_residual = float(np.linalg.norm(lams - model_vals) / max(np.linalg.norm(lams), 1e-300))
    h = xs[1] - xs[0]
    mid = samples // 2
    d2 = -(lams[mid + 1].real - 2.0 * lams[mid].real + lams[mid - 1].real) / (h * h) / 2.0
    return CriticalCurve(xis, lams, a, d, float(d2), fit_residual)


# ---------------------------------------------------------------------------
# stability verification

@dataclass
class StabilityReport:
    """Outcome of the three-part diffusive spectral stability check."""

    verdict: bool
    condition_negative_spectrum: bool
    condition_quadratic_bound: bool
    condition_simple_zero: bool
    theta: float
    curve: CriticalCurve
    xi_1: float
    delta_1: float
    delta_0: dict
    zero_simplicity: float
    max_nonzero_real: float
    failures: list = field(default_factory=list)
    scan: int = 0
    m_f: int = 0
    tol_zero: float = 0.0


def verify_diffusive_stability(profile, scan=256, m_f=None, tol_zero=1e-8,
                               angle_tol=1e-6, xi_fit=0.25):
    """Check the three spectral stability conditions over a Bloch-frequency scan.

    (a) spectrum of every L_xi in {Re < 0} apart from the translation zero,
    (b) Re sigma(L_xi) <= -theta xi^2 for some theta > 0,
    (c) 0 a simple eigenvalue of L_0 with eigenfunction phi'.
    """
    if scan < 8:
        raise ValueError(f"scan must be >= 8, got {scan}")
    m = profile.m_f if m_f is None else m_f
    ells = fourier.modes(m)
    that = reaction_coeffs(profile, 2 * m)
    xis = np.unique(np.concatenate([
        np.linspace(-np.pi, np.pi, scan, endpoint=False), [0.0]]))

    failures = []

    # condition (c): simplicity of the zero of L_0 with eigenfunction phi'
    zero_matrix = assemble_bloch(profile, 0.0, ells=ells, that=that)
    lam0, vec0 = bloch_spectrum(zero_matrix, vectors=True)
    absorder = np.argsort(np.abs(lam0))
    zero_count = int(np.sum(np.abs(lam0) <= tol_zero))
    zero_simplicity = float(np.abs(lam0[absorder[1]]))
    pvec = phi_prime_vector(profile, ells)
    pvec = pvec / np.linalg.norm(pvec)
    align = float(np.abs(np.vdot(pvec, vec0[:, absorder[0]])))
    cond_simple = (zero_count == 1) and (align >= 1.0 - angle_tol)
    if zero_count != 1:
        failures.append(
            f"L_0 has {zero_count} eigenvalues within {tol_zero:g} of 0 (need exactly 1)")
    if align < 1.0 - angle_tol:
        failures.append(f"zero eigenfunction misaligned with phi' (|cos| = {align:.2e})")

    # scan: pooled eigenvalues, tracked critical branch on the positive side
    max_nonzero_real = -np.inf
    theta = np.inf
    sep_records = []        # (|xi|, Re lambda_c, max Re of the rest)
    pooled = {}
    prev_ref = pvec
    for x in xis[xis >= 0.0]:
        if x == 0.0:
            lam, vr = lam0, vec0
            rest = lam[absorder[1:]]
            crit_re = 0.0
            pooled[x] = lam
            max_nonzero_real = max(max_nonzero_real, float(rest.real.max()))
            sep_records.append((0.0, 0.0, float(rest.real.max())))
            continue
        try:
            lam, _vl, vr, idx, _ov = _tracked_eig(
                assemble_bloch(profile, x, ells=ells, that=that).entries, prev_ref)
            prev_ref = vr[:, idx]
            crit_re = float(lam[idx].real)
            rest_re = np.delete(lam.real, idx)
            sep_records.append((x, crit_re, float(rest_re.max())))
        except BranchTrackingError:
            lam = bloch_spectrum(assemble_bloch(profile, x, ells=ells, that=that))
            sep_records.append((x, np.nan, float(lam.real.max())))
        pooled[x] = lam
        top = float(lam.real.max())
        max_nonzero_real = max(max_nonzero_real, top)
        theta = min(theta, -top / (x * x))

    # negative side by conjugation symmetry of the real operator
    cond_negative = bool(max_nonzero_real < 0.0)
    if max_nonzero_real >= 0.0:
        failures.append(f"spectrum reaches Re = {max_nonzero_real:.3e} >= 0 away from the origin")
    cond_quadratic = bool(theta > 0.0)
    if not cond_quadratic:
        failures.append(f"no parabolic bound: theta = {theta:.3e} <= 0")

    # separation radius xi_1 and gap delta_1 for the critical branch
    xi_1 = 0.0
    delta_1 = 0.0
    worst_rest = -np.inf
    worst_crit = 0.0
    for absxi, crit_re, rest_max in sep_records:
        if not np.isfinite(crit_re):
            break
        worst_rest = max(worst_rest, rest_max)
        worst_crit = min(worst_crit, crit_re)
        if worst_rest >= worst_crit:
            break
        xi_1 = absxi
        delta_1 = -(worst_rest + worst_crit) / 2.0
    xi_cap = np.pi * (1.0 - 2.0 / scan)
    xi_1 = min(xi_1, xi_cap)

    # exponential rates outside cutoff radii
    scan_abs = np.array([r[0] for r in sep_records])
    scan_top = np.array([r[2] if not np.isfinite(r[1]) else max(r[1], r[2])
                         for r in sep_records])
    delta_0 = {}
    for xi0 in (xi_1 / 2.0, xi_1):
        if xi0 <= 0:
            continue
        mask = scan_abs >= xi0 - 1e-12
        if mask.any():
            delta_0[float(xi0)] = float(-scan_top[mask].max())

    curve = critical_curve(profile, xi_max=xi_fit, m_f=m)

    verdict = cond_negative and cond_quadratic and cond_simple
    return StabilityReport(
        verdict=verdict,
        condition_negative_spectrum=cond_negative,
        condition_quadratic_bound=cond_quadratic,
        condition_simple_zero=cond_simple,
        theta=float(theta),
        curve=curve,
        xi_1=float(xi_1),
        delta_1=float(delta_1),
        delta_0=delta_0,
        zero_simplicity=zero_simplicity,
        max_nonzero_real=float(max_nonzero_real),
        failures=failures,
        scan=scan,
        m_f=m,
        tol_zero=tol_zero,
    )


# ---------------------------------------------------------------------------
# subharmonic (N-periodic) spectra

@dataclass
class SubharmonicSpectrum:
    """Pooled spectrum over the N admissible Bloch frequencies."""

    n_period: int
    frequencies: np.ndarray
    eigenvalues: list               # per-frequency arrays, Re-descending
    critical: np.ndarray            # tracked branch value per frequency (nan if lost)
    delta: float                    # spectral gap: -max Re over nonzero modes
    attaining_xi: float
    zero_defect: float              # |lambda| of the translation mode at xi = 0


def subharmonic_spectrum(profile, n_period, m_f=None):
    """Eigenvalues of L_xi for all xi in the N-periodic Bloch lattice."""
    m = profile.m_f if m_f is None else m_f
    ells = fourier.modes(m)
    that = reaction_coeffs(profile, 2 * m)
    grid = omega_grid(n_period)
    walker = _BranchWalker(profile, ells, that)

    eigs = []
    crit = []
    delta = -np.inf
    attaining = 0.0
    zero_defect = np.nan
    for x in grid.frequencies:
        lam = bloch_spectrum(assemble_bloch(profile, x, ells=ells, that=that))
        eigs.append(lam)
        try:
            crit.append(complex(walker.mode_at(x).lam))
        except BranchTrackingError:
            crit.append(complex(np.nan, np.nan))
        if abs(x) < 1e-14:
            idx = np.argmin(np.abs(lam))
            zero_defect = float(np.abs(lam[idx]))
            rest = np.delete(lam, idx)
            top = float(rest.real.max())
        else:
            top = float(lam.real.max())
        if top > delta:
            delta = top
            attaining = float(x)
    return SubharmonicSpectrum(
        n_period=n_period,
        frequencies=grid.frequencies,
        eigenvalues=eigs,
        critical=np.array(crit),
        delta=float(-delta),
        attaining_xi=attaining,
        zero_defect=zero_defect,
    )


def gap_sequence(profile, n_values, m_f=None):
    """delta_N for each N in ``n_values`` (shared assembly across calls)."""
    return {int(n): subharmonic_spectrum(profile, int(n), m_f=m_f).delta
            for n in n_values}
