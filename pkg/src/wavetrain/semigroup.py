"""Linear semigroup on N-periodic perturbations, split into decay classes.

The semigroup e^{Lt} of the linearization about a diffusively stable wave
train is diagonalized fiber-by-fiber over the N admissible Bloch frequencies.
With a smooth even cutoff rho supported near the critical dispersion branch
it splits as

    e^{Lt} v = phi' <adj_0, v> / N  +  phi' . s_p(t) v  +  S~(t) v,

where s_p carries the slowly decaying phase-like content

    (s_p(t) v)(x) = (1/N) sum_{xi != 0} rho(xi) e^{i xi x} e^{lambda_c(xi) t}
                    <adj_xi, (B v)(xi, .)>,

and S~ collects the high-frequency part, the low-frequency complement of the
critical mode, and the difference between the critical eigenfunction and its
phi' approximation.  The three pieces sum to the full semigroup exactly,
fiber by fiber.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla

from . import bloch, grids
from .errors import AdmissibilityError, BranchTrackingError

TWO_PI = 2.0 * np.pi


# ---------------------------------------------------------------------------
# frequency cutoff

@dataclass(frozen=True)
class CutoffSpec:
    """Even raised-cosine cutoff: 1 on |xi| <= xi_1/2, supported in |xi| < xi_1."""

    xi_1: float

    def __post_init__(self):
        if not 0.0 < self.xi_1 < np.pi:
            raise AdmissibilityError(
                f"cutoff radius must lie in (0, pi), got {self.xi_1}")

    def weight(self, xi):
        axi = np.abs(np.asarray(xi, dtype=float))
        half = self.xi_1 / 2.0
        w = np.where(axi <= half, 1.0,
                     np.where(axi >= self.xi_1, 0.0,
                              np.cos(np.pi * (axi - half) / self.xi_1) ** 2))
        return w if w.shape else float(w)


def default_cutoff(profile, stability=None, scan=128):
    """Cutoff radius from the separation of the critical branch."""
    if stability is None:
        stability = bloch.verify_diffusive_stability(profile, scan=scan)
    xi_1 = stability.xi_1
    if xi_1 <= 0.0:
        raise AdmissibilityError(
            "critical branch is not separated from the rest of the spectrum; "
            "no cutoff radius exists")
    return CutoffSpec(min(xi_1, np.pi * (1.0 - 1e-9)))


def _slot_reverse(arr):
    """The l -> -l permutation on FFT-ordered slots (first axis)."""
    return np.roll(arr[::-1], 1, axis=0)


# ---------------------------------------------------------------------------
# engine

@dataclass
class SemigroupParts:
    """One decomposition snapshot: the three pieces and their sum."""

    t: float
    total: grids.GridFunction
    mean_phase: grids.GridFunction
    sp_field: grids.GridFunction        # phi' times the scalar s_p
    stilde: grids.GridFunction
    mean_coefficient: float


class SemigroupEngine:
    """Fiberwise-diagonalized semigroup for one profile and period multiple N.

    The engine fixes an odd per-cell mode count m_x, assembles the dense Bloch
    block at every lattice frequency, eigendecomposes each once, and tracks the
    critical branch (with left eigenvectors, in the phi'-anchored gauge) at the
    lattice frequencies inside the cutoff support.
    """

    def __init__(self, profile, n_period, m_x=None, cutoff=None, stability=None,
                 cond_limit=1e10):
        if m_x is None:
            m_x = 2 * profile.m_f + 1
        if m_x % 2 == 0:
            raise ValueError(f"m_x must be odd, got {m_x}")
        if m_x < 2 * profile.m_f + 1:
            raise ValueError(
                f"m_x = {m_x} cannot hold the profile band (need >= {2 * profile.m_f + 1})")
        self.profile = profile
        self.n_period = int(n_period)
        self.m_x = int(m_x)
        self.n = profile.n
        self.dim = self.m_x * self.n
        self.ells = grids.cell_modes(self.m_x)
        self.that = bloch.reaction_coeffs(profile, self.m_x - 1)
        jj = np.fft.fftfreq(self.n_period, d=1.0 / self.n_period)
        self.frequencies = TWO_PI * jj / self.n_period

        if cutoff is None:
            cutoff = default_cutoff(profile, stability=stability)
        self.cutoff = cutoff
        self.rho = np.asarray(cutoff.weight(self.frequencies), dtype=float).reshape(-1)

        # per-fiber matrices and eigendecompositions
        mats = np.empty((self.n_period, self.dim, self.dim), dtype=complex)
        for j, xi in enumerate(self.frequencies):
            mats[j] = bloch.assemble_bloch(profile, xi, ells=self.ells,
                                           that=self.that).entries
        self.matrices = mats
        self.eigvals = np.empty((self.n_period, self.dim), dtype=complex)
        self.right = np.empty_like(mats)
        self.right_inv = np.empty_like(mats)
        self.diagonalizable = np.ones(self.n_period, dtype=bool)
        for j in range(self.n_period):
            lam, V = sla.eig(mats[j])
            cond = np.linalg.cond(V)
            self.eigvals[j] = lam
            self.right[j] = V
            if cond > cond_limit:
                self.diagonalizable[j] = False
                self.right_inv[j] = np.nan
            else:
                self.right_inv[j] = np.linalg.inv(V)

        # phi' in slot layout (flattened mode-major)
        self.phi_slots = bloch.phi_prime_vector(profile, self.ells)

        # critical branch data at lattice frequencies inside supp rho
        self.crit_lam = np.full(self.n_period, np.nan + 0j)
        self.crit_phi = np.zeros((self.n_period, self.dim), dtype=complex)
        self.crit_adj = np.zeros((self.n_period, self.dim), dtype=complex)
        self._track_critical()

    # -- critical branch ----------------------------------------------------

    def _track_critical(self):
        inside = np.nonzero(self.rho > 0.0)[0]
        pos = sorted([j for j in inside if self.frequencies[j] >= 0.0],
                     key=lambda j: self.frequencies[j])
        walker = bloch._BranchWalker(self.profile, self.ells, self.that)
        prev_xi = 0.0
        prev_ref = self.phi_slots / np.linalg.norm(self.phi_slots)
        for j in pos:
            xi = self.frequencies[j]
            gap = xi - prev_xi
            nsub = max(1, int(np.ceil(gap / walker.max_step)))
            for step in range(1, nsub + 1):
                x = prev_xi + gap * step / nsub
                if step < nsub:
                    entries = bloch.assemble_bloch(self.profile, x, ells=self.ells,
                                                   that=self.that).entries
                    _lam, _vl, vr, idx, _ov = bloch._tracked_eig(entries, prev_ref)
                    prev_ref = vr[:, idx]
                    continue
                lam, vl, vr, idx, _ov = bloch._tracked_eig(self.matrices[j], prev_ref)
                v = vr[:, idx]
                s = np.vdot(self.phi_slots, v)
                if abs(s) < 1e-10 * np.linalg.norm(v) * np.linalg.norm(self.phi_slots):
                    raise BranchTrackingError(
                        f"critical eigenvector at xi={x:.4f} lost its phi' component")
                phi_vec = v * (np.vdot(self.phi_slots, self.phi_slots) / s)
                w = vl[:, idx]
                adj = w / np.conj(np.vdot(w, phi_vec))
                self.crit_lam[j] = lam[idx]
                self.crit_phi[j] = phi_vec
                self.crit_adj[j] = adj
                prev_ref = vr[:, idx]
            prev_xi = xi
        # negative frequencies by conjugation symmetry (slot flip l -> -l)
        for j in inside:
            if self.frequencies[j] < 0.0:
                src = np.argmin(np.abs(self.frequencies + self.frequencies[j]))
                shape = (self.m_x, self.n)
                self.crit_lam[j] = np.conj(self.crit_lam[src])
                self.crit_phi[j] = _slot_reverse(
                    np.conj(self.crit_phi[src]).reshape(shape)).reshape(-1)
                self.crit_adj[j] = _slot_reverse(
                    np.conj(self.crit_adj[src]).reshape(shape)).reshape(-1)

    # -- basic plumbing ------------------------------------------------------

    def _check(self, v):
        if v.n_period != self.n_period or v.m_x != self.m_x:
            raise ValueError(
                f"grid mismatch: engine is (N={self.n_period}, m_x={self.m_x}), "
                f"function is (N={v.n_period}, m_x={v.m_x})")

    def _fibers(self, v):
        self._check(v)
        return grids.bloch_transform(v).coeffs.reshape(self.n_period, self.dim)

    def _assemble(self, fibers, was_real=True):
        bc = grids.BlochCoefficients(
            self.n_period,
            fibers.reshape(self.n_period, self.m_x, self.n),
            was_real=was_real)
        return grids.bloch_inverse(bc)

    def _propagate(self, fibers, t):
        out = np.empty_like(fibers)
        for j in range(self.n_period):
            if self.diagonalizable[j]:
                out[j] = self.right[j] @ (np.exp(self.eigvals[j] * t)
                                          * (self.right_inv[j] @ fibers[j]))
            else:
                out[j] = sla.expm(self.matrices[j] * t) @ fibers[j]
        return out

    # -- public operations ---------------------------------------------------

    def apply(self, v, t):
        """e^{Lt} v on the grid."""
        return self._assemble(self._propagate(self._fibers(v), t))

    def mean_phase_coefficient(self, v):
        """<adj_0, v> over [0, N): the translation content of v."""
        fibers = self._fibers(v)
        return float(np.real(np.vdot(self.crit_adj[0], fibers[0])))

    def critical_inner(self, v):
        """Per-frequency critical projections <adj_xi, (B v)(xi, .)>."""
        fibers = self._fibers(v)
        out = np.full(self.n_period, np.nan + 0j)
        for j in range(self.n_period):
            if self.rho[j] > 0.0 and np.isfinite(self.crit_lam[j].real):
                out[j] = np.vdot(self.crit_adj[j], fibers[j])
        return out

    def synthesize_phase(self, inner, t=0.0, l=0, m=0):
        """Plane-wave synthesis of the scalar phase field from critical
        amplitudes: (1/N) sum_{xi != 0} rho (i xi)^l lambda^m e^{lambda t}
        inner_xi e^{i xi x}.  Non-finite entries of ``inner`` and fibers
        outside the cutoff support are skipped."""
        fibers = np.zeros((self.n_period, self.m_x, 1), dtype=complex)
        for j in range(self.n_period):
            if j == 0 or not np.isfinite(inner[j].real):
                continue
            if self.rho[j] <= 0.0 or not np.isfinite(self.crit_lam[j].real):
                continue
            xi = self.frequencies[j]
            lam = self.crit_lam[j]
            amp = (self.rho[j] * (1j * xi) ** l * lam ** m
                   * np.exp(lam * t) * inner[j])
            fibers[j, 0, 0] = amp
        bc = grids.BlochCoefficients(self.n_period, fibers, was_real=True)
        return grids.bloch_inverse(bc)

    def sp_scalar(self, v, t, l=0, m=0):
        """The scalar field d_x^l d_t^m s_p(t) v (plane-wave synthesis)."""
        return self.synthesize_phase(self.critical_inner(v), t=t, l=l, m=m)

    def decompose(self, v, t):
        """Split e^{Lt} v into mean-phase, critical phase field, and remainder.

        The pieces satisfy mean + sp_field + stilde = apply(v, t) exactly in
        the discretization (same eigendecompositions throughout).
        """
        fibers = self._fibers(v)
        full = self._propagate(fibers, t)

        mean_f = np.zeros_like(fibers)
        sp_f = np.zeros_like(fibers)
        for j in range(self.n_period):
            if self.rho[j] <= 0.0 or not np.isfinite(self.crit_lam[j].real):
                continue
            inner = np.vdot(self.crit_adj[j], fibers[j])
            factor = self.rho[j] * np.exp(self.crit_lam[j] * t) * inner
            if j == 0:
                mean_f[0] = factor * self.crit_phi[0]
            else:
                sp_f[j] = factor * self.phi_slots
        stilde_f = full - mean_f - sp_f

        mean_gf = self._assemble(mean_f)
        sp_gf = self._assemble(sp_f)
        st_gf = self._assemble(stilde_f)
        gamma = float(np.real(np.vdot(self.crit_adj[0], fibers[0])))
        return SemigroupParts(float(t), self._assemble(full), mean_gf, sp_gf,
                              st_gf, gamma)

    def stilde_parts(self, v, t):
        """Split S~ further: high-frequency, low-frequency complement, critical
        correction (eigenfunction minus phi')."""
        fibers = self._fibers(v)
        full = self._propagate(fibers, t)
        hf = np.zeros_like(fibers)
        lf = np.zeros_like(fibers)
        corr = np.zeros_like(fibers)
        for j in range(self.n_period):
            hf[j] = (1.0 - self.rho[j]) * full[j]
            if self.rho[j] <= 0.0 or not np.isfinite(self.crit_lam[j].real):
                lf[j] = self.rho[j] * full[j]
                continue
            inner = np.vdot(self.crit_adj[j], fibers[j])
            proj = inner * self.crit_phi[j]
            lf[j] = self.rho[j] * self._propagate_single(j, fibers[j] - proj, t)
            if j != 0:
                corr[j] = (self.rho[j] * np.exp(self.crit_lam[j] * t) * inner
                           * (self.crit_phi[j] - self.phi_slots))
        return (self._assemble(hf), self._assemble(lf), self._assemble(corr))

    def _propagate_single(self, j, fiber, t):
        if self.diagonalizable[j]:
            return self.right[j] @ (np.exp(self.eigvals[j] * t)
                                    * (self.right_inv[j] @ fiber))
        return sla.expm(self.matrices[j] * t) @ fiber


# ---------------------------------------------------------------------------
# decay measurement

@dataclass
class DecayMeasurement:
    """Norm history of one decomposition part against a claimed envelope."""

    part: str
    times: np.ndarray
    norms: np.ndarray
    claimed_exponent: float
    fitted_exponent: float
    fitted_constant: float      # intercept of the least-squares fit, over ref
    attained_constant: float    # sup_t norm (1+t)^{-claimed} / ref
    reference_norm: float
    super_polynomial: bool


def measure_decay(engine, v, times, part="sp", l=0, m=0, claimed_exponent=None,
                  fit_window=None):
    """Track a part's L2 norm over time and fit log-norm vs log(1+t).

    ``part`` is one of "sp" (the scalar field with derivative multipliers),
    "stilde", "mean", or "total".  The attained constant is
    sup_t norm(t) (1+t)^{-claimed} / ||v||_{L1}.

    The default fit window is [10, N^2/10] (transient and crossover excluded);
    when that window holds fewer than two samples the whole series is used.
    An explicitly empty window raises ValueError.
    """
    times = np.asarray(times, dtype=float)
    norms = np.empty_like(times)
    for i, t in enumerate(times):
        if part == "sp":
            gf = engine.sp_scalar(v, t, l=l, m=m)
        else:
            parts = engine.decompose(v, t)
            gf = {"stilde": parts.stilde, "mean": parts.mean_phase,
                  "total": parts.total}[part]
        norms[i] = grids.norm_l2(gf)

    if claimed_exponent is None:
        claimed_exponent = {"sp": -0.25 - 0.5 * (l + m), "stilde": -0.75,
                            "mean": 0.0, "total": 0.0}[part]
    ref = grids.norm_l1(v)

    mask = norms > 1e-290
    if fit_window is not None:
        lo, hi = fit_window
        window_mask = (times >= lo) & (times <= hi)
        if not window_mask.any():
            raise ValueError(f"no samples inside fit window [{lo}, {hi}]")
        mask &= window_mask
    else:
        lo, hi = 10.0, engine.n_period ** 2 / 10.0
        window_mask = (times >= lo) & (times <= hi)
        if (mask & window_mask).sum() >= 2:
            mask &= window_mask
    lt = np.log1p(times[mask])
    ln = np.log(norms[mask])
    if mask.sum() >= 2:
        slope, intercept = np.polyfit(lt, ln, 1)
    else:
        slope, intercept = np.nan, np.nan
    envelope = (1.0 + times) ** claimed_exponent
    attained = float(np.max(norms / (envelope * ref))) if ref > 0 else np.inf
    fitted_c = float(np.exp(intercept) / ref) if ref > 0 else np.inf
    return DecayMeasurement(
        part=part,
        times=times,
        norms=norms,
        claimed_exponent=float(claimed_exponent),
        fitted_exponent=float(slope),
        fitted_constant=fitted_c,
        attained_constant=attained,
        reference_norm=float(ref),
        super_polynomial=bool(slope < claimed_exponent - 2.0),
    )


# ---------------------------------------------------------------------------
# frequency-lattice sums

def lattice_sum(n_period, r, times, d=1.0):
    """(1/N) sum over nonzero lattice frequencies of |xi|^{2r} e^{-2 d xi^2 t}."""
    grid = bloch.omega_grid(n_period)
    xi = grid.frequencies[np.abs(grid.frequencies) > 1e-14]
    t = np.asarray(times, dtype=float)[..., None]
    return np.sum(np.abs(xi) ** (2 * r) * np.exp(-2.0 * d * xi ** 2 * t),
                  axis=-1) / n_period


def continuum_envelope(r, times, d=1.0, band=None):
    """(1/2pi) integral of |xi|^{2r} e^{-2 d xi^2 t} over the line.

    With ``band`` the integral is restricted to |xi| <= band, which keeps it
    finite at t = 0 and makes it the natural comparison object for lattice
    sums over frequencies in (-pi, pi].
    """
    from scipy.special import gamma, gammainc
    t = np.asarray(times, dtype=float)
    if band is None:
        return gamma(r + 0.5) * (2.0 * d * t) ** (-(r + 0.5)) / (2.0 * np.pi)
    with np.errstate(divide="ignore"):
        scale = np.where(t > 0, (2.0 * d * t) ** (-(r + 0.5)), 0.0)
    tail = gammainc(r + 0.5, 2.0 * d * t * band ** 2)
    out = np.where(t > 0,
                   gamma(r + 0.5) * scale * tail / (2.0 * np.pi),
                   band ** (2 * r + 1) / ((2 * r + 1) * np.pi))
    return out if out.shape else float(out)


@dataclass
class SumBoundRow:
    n_period: int
    r: float
    attained_constant: float    # sup_t sum * (1+t)^{r+1/2}
    sup_time: float


def sum_bound_report(n_values, r_values, times, d=1.0):
    """Attained constants of the polynomial bound, per (N, r) pair.

    The claim is (1/N) sum_{xi != 0} |xi|^{2r} e^{-2 d xi^2 t} <= C (1+t)^{-r-1/2}
    with C independent of N and t; the report exposes sup ratios so uniformity
    can be checked across N.
    """
    times = np.asarray(times, dtype=float)
    rows = []
    for n in n_values:
        for r in r_values:
            vals = lattice_sum(n, r, times, d=d)
            ratios = vals * (1.0 + times) ** (r + 0.5)
            i = int(np.argmax(ratios))
            rows.append(SumBoundRow(int(n), float(r), float(ratios[i]),
                                    float(times[i])))
    return rows


@dataclass
class CrossoverReport:
    n_period: int
    t_star: float               # departure from the continuum envelope
    late_rate: float            # fitted exponential rate after the crossover
    predicted_rate: float       # 2 d (2 pi / N)^2


def crossover_probe(n_period, d=1.0, r=0, times=None, factor=2.0):
    """Locate the finite-N crossover from power-law to exponential decay."""
    if times is None:
        tmax = 20.0 * n_period ** 2
        times = np.geomspace(1e-2, tmax, 400)
    times = np.asarray(times, dtype=float)
    sums = lattice_sum(n_period, r, times, d=d)
    env = continuum_envelope(r, times, d=d)
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        ratio = np.where(sums > 0, env / sums, np.inf)
    # at small t the line integral overshoots the bounded lattice sum, so the
    # departure is the first excursion after the agreement window
    agree = np.nonzero(ratio < factor)[0]
    if agree.size:
        later = np.nonzero((np.arange(times.size) > agree[-1]) & (ratio >= factor))[0]
        t_star = float(times[later[0]]) if later.size else float(times[-1])
    else:
        t_star = float(times[-1])

    xi_min = TWO_PI / n_period
    predicted = 2.0 * d * xi_min ** 2
    late = (times >= 4.0 * t_star) & (sums > 1e-290)
    if late.sum() >= 2:
        slope, _ = np.polyfit(times[late], np.log(sums[late]), 1)
        late_rate = float(-slope)
    else:
        late_rate = np.nan
    return CrossoverReport(int(n_period), t_star, late_rate, float(predicted))
