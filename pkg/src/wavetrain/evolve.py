"""Time integration in the co-moving frame and modulation extraction.

States evolve under u_t = k u_xx + c u_x + f(u)/k on [0, N) with spectral
space discretization: the linear part is applied exactly through its Fourier
symbol, the reaction term pointwise on the grid.

Modulation data (gamma, psi) is read off a trajectory in two independent
ways: by direct spectral projection of u - phi at each time, and through the
Duhamel representation, iterating the nonlinear integral equations for the
phase variables and the residual to a joint fixed point.  In both routes the
perturbation is

    v(x) = u_mod(x) - phi(x),   u_mod(x) = u(x - gamma/N - psi(x)),

so the wave is undone by a mean translation gamma/N plus a local phase psi.
"""

from __future__ import annotations

import time as _time
from dataclasses import dataclass, field

import numpy as np

from . import grids
from .errors import BlowUpError, ExtractionDivergenceError, PhaseWarpError

TWO_PI = 2.0 * np.pi


# ---------------------------------------------------------------------------
# steppers

class _Stepper:
    """Shared spectral plumbing: rfft state, linear symbol, reaction closure."""

    def __init__(self, profile, n_period, m_x, dt):
        self.profile = profile
        self.n_period = int(n_period)
        self.m_x = int(m_x)
        self.P = self.m_x * self.n_period
        self.dt = float(dt)
        omega = TWO_PI * np.fft.rfftfreq(self.P, d=1.0 / self.P) / self.n_period
        k, c = profile.k, profile.c
        self.symbol = (k * (1j * omega) ** 2 + c * (1j * omega))[:, None]
        self.inv_k = 1.0 / k

    def reaction_hat(self, u_hat):
        u = np.fft.irfft(u_hat, n=self.P, axis=0)
        return np.fft.rfft(self.profile.model.f(u) * self.inv_k, axis=0)

    def to_hat(self, values):
        return np.fft.rfft(values, axis=0)

    def to_grid(self, u_hat):
        return np.fft.irfft(u_hat, n=self.P, axis=0)


class ImexStepper(_Stepper):
    """Crank-Nicolson on the linear symbol, 2-step Adams-Bashforth reaction.

    Exact equilibria of the semidiscretization are preserved exactly: with
    L u + G(u) = 0 the update reduces to the identity.
    """

    def __init__(self, profile, n_period, m_x, dt):
        super().__init__(profile, n_period, m_x, dt)
        h = self.dt
        self.num = 1.0 + 0.5 * h * self.symbol
        self.den = 1.0 - 0.5 * h * self.symbol
        self.prev_g = None

    def step(self, u_hat):
        g = self.reaction_hat(u_hat)
        if self.prev_g is None:
            self.prev_g = g
        rhs = self.num * u_hat + self.dt * (1.5 * g - 0.5 * self.prev_g)
        self.prev_g = g
        return rhs / self.den


class Etdrk4Stepper(_Stepper):
    """Fourth-order exponential time differencing (Cox-Matthews scheme).

    The phi-function coefficients are evaluated by contour averaging so the
    near-zero symbol entries stay accurate.
    """

    def __init__(self, profile, n_period, m_x, dt, contour_points=32):
        super().__init__(profile, n_period, m_x, dt)
        h = self.dt
        L = self.symbol
        self.E = np.exp(h * L)
        self.E2 = np.exp(0.5 * h * L)
        M = contour_points
        r = np.exp(1j * np.pi * (np.arange(1, M + 1) - 0.5) / M)
        LR = h * L[..., None] + r
        self.Q = h * np.real(np.mean((np.exp(LR / 2.0) - 1.0) / LR, axis=-1))
        self.f1 = h * np.real(np.mean(
            (-4.0 - LR + np.exp(LR) * (4.0 - 3.0 * LR + LR ** 2)) / LR ** 3, axis=-1))
        self.f2 = h * np.real(np.mean(
            (2.0 + LR + np.exp(LR) * (-2.0 + LR)) / LR ** 3, axis=-1))
        self.f3 = h * np.real(np.mean(
            (-4.0 - 3.0 * LR - LR ** 2 + np.exp(LR) * (4.0 - LR)) / LR ** 3, axis=-1))

    def step(self, u_hat):
        g = self.reaction_hat
        Nu = g(u_hat)
        a = self.E2 * u_hat + self.Q * Nu
        Na = g(a)
        b = self.E2 * u_hat + self.Q * Na
        Nb = g(b)
        c = self.E2 * a + self.Q * (2.0 * Nb - Nu)
        Nc = g(c)
        return (self.E * u_hat + self.f1 * Nu + 2.0 * self.f2 * (Na + Nb)
                + self.f3 * Nc)


_SCHEMES = {"imex": ImexStepper, "imex-cn": ImexStepper, "etdrk4": Etdrk4Stepper}


def stable_dt_limit(profile, samples=256):
    """Heuristic explicit-term step bound 0.5 / rho(Df(phi)/k).

    The reaction term is integrated explicitly; its stiffness along the wave
    is estimated by the largest spectral radius of Df(phi(x))/k on a fine
    profile grid.
    """
    vals = profile.on_grid(max(samples, 4 * profile.m_f + 4))
    jac = profile.model.df(vals) / profile.k
    rho = np.max(np.abs(np.linalg.eigvals(jac)))
    return 0.5 / max(float(rho), 1e-300)


# ---------------------------------------------------------------------------
# initial data

def random_perturbation(n_period, m_x, n_components, seed, amplitude,
                        band=None, kind="fourier", normalize="sup", k_sob=3):
    """Smooth random N-periodic field of prescribed size ``amplitude``.

    Deterministic in ``seed`` (counter-based Philox generator).  "fourier"
    draws Gaussian coefficients on global modes |m| <= band (default 3N);
    "bump" places a Gaussian bump of unit-cell width at a random location.

    ``normalize`` picks the norm that is scaled to ``amplitude``: "sup" for
    the grid max, "l1" for the L1(0, N) norm, "l1_sobolev" for the sum
    ||.||_{L1} + ||.||_{H^k_sob} (the smallness quantity of the nonlinear
    stability statement).
    """
    P = n_period * m_x
    rng = np.random.Generator(np.random.Philox(key=int(seed)))
    x = grids.grid_points(n_period, m_x)
    if kind == "fourier":
        if band is None:
            band = 3 * n_period
        band = int(min(band, P // 2 - 1))
        vals = np.zeros((P, n_components))
        for comp in range(n_components):
            c = np.zeros(P // 2 + 1, dtype=complex)
            c[0] = rng.standard_normal()
            c[1:band + 1] = (rng.standard_normal(band)
                             + 1j * rng.standard_normal(band))
            vals[:, comp] = np.fft.irfft(c, n=P) * P
    elif kind == "bump":
        x0 = rng.uniform(0.0, n_period)
        dist = np.abs((x - x0 + n_period / 2.0) % n_period - n_period / 2.0)
        shape = np.exp(-0.5 * (dist / 0.25) ** 2)
        weights = rng.standard_normal(n_components)
        vals = shape[:, None] * weights[None, :]
    else:
        raise ValueError(f"unknown perturbation kind {kind!r}")
    gf = grids.GridFunction(n_period, vals)
    if amplitude == 0.0:
        gf.values[:] = 0.0
        return gf
    if normalize == "sup":
        size = grids.norm_linf(gf)
    elif normalize == "l1":
        size = grids.norm_l1(gf)
    elif normalize == "l1_sobolev":
        size = grids.norm_l1(gf) + grids.norm_h(gf, k_sob)
    else:
        raise ValueError(f"unknown normalization {normalize!r}")
    if size == 0.0:
        raise ValueError("degenerate random draw with zero amplitude")
    gf.values *= amplitude / size
    return gf


def translated_profile_data(profile, n_period, m_x, shift):
    """Grid samples of phi(x + shift), exact through the coefficient phases."""
    from . import fourier
    x = grids.grid_points(n_period, m_x)
    vals = fourier.synth(profile.coeffs, x + shift)
    return grids.GridFunction(n_period, vals)


def quintic_smoothstep(t, lo=0.5, hi=1.0):
    """C^2 ramp: 0 below lo, 1 above hi, quintic polynomial between."""
    r = np.clip((np.asarray(t, dtype=float) - lo) / (hi - lo), 0.0, 1.0)
    out = r ** 3 * (10.0 - 15.0 * r + 6.0 * r ** 2)
    return out if out.shape else float(out)


# ---------------------------------------------------------------------------
# experiment driver

def write_snapshot(path, gf, t):
    """Store one state snapshot as a little-endian binary blob.

    Layout: three int64 header words (N, m_x, components), one float64 time
    stamp, then the N*m_x by components state row-major as float64.
    """
    with open(path, "wb") as fh:
        head = np.array([gf.n_period, gf.m_x, gf.values.shape[1]], dtype="<i8")
        head.tofile(fh)
        np.array([t], dtype="<f8").tofile(fh)
        np.ascontiguousarray(gf.values, dtype="<f8").tofile(fh)


def read_snapshot(path):
    """Load a snapshot blob back into (GridFunction, t)."""
    with open(path, "rb") as fh:
        head = np.fromfile(fh, dtype="<i8", count=3)
        t = float(np.fromfile(fh, dtype="<f8", count=1)[0])
        vals = np.fromfile(fh, dtype="<f8")
    n_period, m_x, n_comp = (int(h) for h in head)
    return grids.GridFunction(n_period, vals.reshape(m_x * n_period, n_comp)), t


def default_snapshot_times(t_max, dense_until=10.0, dense_spacing=0.25,
                           geometric_ratio=1.15):
    """Uniform sampling early, geometric later."""
    times = list(np.arange(0.0, min(dense_until, t_max) + 1e-12, dense_spacing))
    t = times[-1]
    while t < t_max:
        t = min(t * geometric_ratio, t_max)
        times.append(t)
    return np.array(times)


@dataclass
class ExperimentResult:
    """Trajectory record: snapshots of u plus projection traces.

    ``gamma_raw`` and ``inner`` hold the spectral projections of u - phi at
    each snapshot (mean translation content and per-frequency critical
    amplitudes).  ``chi`` is the short-time ramp; the modulation ansatz uses
    gamma = chi * gamma_raw so the phase variables vanish at t = 0.
    """

    profile: object
    engine: object
    n_period: int
    m_x: int
    dt: float
    scheme: str
    seed: int
    amplitude: float
    times: np.ndarray
    snapshots: list
    gamma_raw: np.ndarray
    inner: np.ndarray
    chi: np.ndarray
    v_l2: np.ndarray
    v_linf: np.ndarray
    n_steps: int
    wall_time: float
    perturbation: dict = field(default_factory=dict)

    @property
    def gamma(self):
        return self.chi * self.gamma_raw

    def psi_field(self, i):
        """The local phase psi at snapshot i (chi-ramped projection)."""
        return self.engine.synthesize_phase(self.chi[i] * self.inner[i])

    def psi_norms(self):
        return np.array([grids.norm_l2(self.psi_field(i))
                         for i in range(len(self.times))])


def run_experiment(profile, n_period, engine, *, t_max=100.0, dt=0.01,
                   scheme="imex", seed=0, amplitude=1e-2, band=None,
                   kind="fourier", normalize="l1_sobolev", k_sob=3,
                   initial=None, snapshot_times=None, blowup_limit=1e6,
                   chi_interval=(0.5, 1.0)):
    """Integrate phi + perturbation and record snapshots with projections.

    ``initial`` overrides the random perturbation (a GridFunction added to
    phi).  Snapshot times are rounded to whole steps.  Raises BlowUpError
    when the sup-norm passes ``blowup_limit`` or turns non-finite.
    """
    if scheme not in _SCHEMES:
        raise ValueError(f"unknown scheme {scheme!r} (have {sorted(_SCHEMES)})")
    m_x = engine.m_x
    if engine.n_period != n_period:
        raise ValueError(f"engine is for N={engine.n_period}, requested N={n_period}")
    stepper = _SCHEMES[scheme](profile, n_period, m_x, dt)

    base = grids.from_profile(profile, n_period, m_x)
    if initial is None:
        pert = random_perturbation(n_period, m_x, profile.n, seed, amplitude,
                                   band=band, kind=kind, normalize=normalize,
                                   k_sob=k_sob)
    else:
        pert = initial
        if pert.n_period != n_period or pert.m_x != m_x:
            raise ValueError("initial perturbation grid does not match the engine")
    u = base.values + pert.values

    if snapshot_times is None:
        snapshot_times = default_snapshot_times(t_max)
    snap_steps = np.unique(np.round(np.asarray(snapshot_times) / dt).astype(int))
    snap_steps = snap_steps[snap_steps * dt <= t_max + 1e-9]
    total_steps = int(snap_steps[-1])

    wall0 = _time.perf_counter()
    u_hat = stepper.to_hat(u)
    times, snaps, gammas, inners = [], [], [], []
    v_l2, v_linf = [], []

    def record(step_index):
        vals = stepper.to_grid(u_hat)
        sup = float(np.max(np.abs(vals))) if vals.size else 0.0
        t = step_index * dt
        if not np.isfinite(sup) or sup > blowup_limit:
            raise BlowUpError(f"solution reached sup-norm {sup:.3e} at t = {t:.4f}",
                              t=t)
        gf = grids.GridFunction(n_period, vals.copy())
        w = grids.GridFunction(n_period, vals - base.values)
        times.append(t)
        snaps.append(gf)
        gammas.append(engine.mean_phase_coefficient(w))
        inners.append(engine.critical_inner(w))
        v_l2.append(grids.norm_l2(w))
        v_linf.append(grids.norm_linf(w))

    next_snap = 0
    # non-finite values only occur on the way to the BlowUpError below, so
    # numpy's invalid-value warnings are just noise here
    with np.errstate(invalid="ignore", over="ignore"):
        for step_index in range(total_steps + 1):
            if next_snap < len(snap_steps) and step_index == snap_steps[next_snap]:
                record(step_index)
                next_snap += 1
            if step_index < total_steps:
                u_hat = stepper.step(u_hat)

    times = np.array(times)
    return ExperimentResult(
        profile=profile,
        engine=engine,
        n_period=n_period,
        m_x=m_x,
        dt=dt,
        scheme=scheme,
        seed=int(seed),
        amplitude=float(amplitude),
        times=times,
        snapshots=snaps,
        gamma_raw=np.array(gammas),
        inner=np.array(inners),
        chi=quintic_smoothstep(times, *chi_interval),
        v_l2=np.array(v_l2),
        v_linf=np.array(v_linf),
        n_steps=total_steps,
        wall_time=_time.perf_counter() - wall0,
        perturbation={"seed": int(seed), "amplitude": float(amplitude),
                      "band": band, "normalize": normalize,
                      "kind": kind if initial is None else "explicit",
                      "chi_interval": list(chi_interval)},
    )


# ---------------------------------------------------------------------------
# nonuniform finite differences (for time derivatives of traces)

def fd_weights(nodes, x0, order):
    """Finite-difference weights at x0 for the given derivative order."""
    nodes = np.asarray(nodes, dtype=float)
    n = nodes.size
    C = np.zeros((n, order + 1))
    C[0, 0] = 1.0
    c1 = 1.0
    c4 = nodes[0] - x0
    for i in range(1, n):
        mn = min(i, order)
        c2 = 1.0
        c5 = c4
        c4 = nodes[i] - x0
        for j in range(i):
            c3 = nodes[i] - nodes[j]
            c2 *= c3
            if j == i - 1:
                for kk in range(mn, 0, -1):
                    C[i, kk] = c1 * (kk * C[i - 1, kk - 1] - c5 * C[i - 1, kk]) / c2
                C[i, 0] = -c1 * c5 * C[i - 1, 0] / c2
            for kk in range(mn, 0, -1):
                C[j, kk] = (c4 * C[j, kk] - kk * C[j, kk - 1]) / c3
            C[j, 0] = c4 * C[j, 0] / c3
        c1 = c2
    return C[:, order]


def time_derivative(times, values, order=1, stencil=5):
    """Differentiate sampled traces on a nonuniform time grid.

    ``values`` has leading axis aligned with ``times``; interior points use
    centered stencils, the ends one-sided ones.
    """
    times = np.asarray(times, dtype=float)
    values = np.asarray(values)
    T = times.size
    stencil = min(int(stencil), T)
    if T < 2 or stencil < 2:
        raise ValueError(f"need at least 2 samples, got {T}")
    out = np.empty_like(values, dtype=float)
    half = stencil // 2
    for i in range(T):
        lo = min(max(i - half, 0), T - stencil)
        sl = slice(lo, lo + stencil)
        w = fd_weights(times[sl], times[i], order)
        out[i] = np.tensordot(w, values[sl], axes=(0, 0))
    return out


# ---------------------------------------------------------------------------
# modulation extraction: direct projection route

@dataclass
class ModulationFrame:
    """Phase variables and modulated perturbation at one snapshot."""

    t: float
    gamma: float
    psi: grids.GridFunction
    v: grids.GridFunction


def modulation_frame(result, i, gamma=None, inner=None):
    """Build (gamma, psi, v) at snapshot i from projections of u - phi.

    The perturbation v undoes the extracted phases through the composition
    v(x) = u(x - gamma/N - psi(x)) - phi(x), evaluated by trigonometric
    interpolation of the snapshot.  Raises PhaseWarpError when the phase
    gradient reaches 1/2 and the warp stops being invertible.
    """
    u = result.snapshots[i]
    prof = result.profile
    if gamma is None:
        gamma = result.gamma[i]
    if inner is None:
        inner = result.chi[i] * result.inner[i]
    psi = result.engine.synthesize_phase(inner)
    steep = float(np.max(np.abs(grids.derivative(psi).values)))
    if not np.isfinite(steep) or steep >= 0.5:
        raise PhaseWarpError(
            f"max |psi_x| = {steep:.3f} >= 1/2 at t = {result.times[i]:.3f}; "
            "the coordinate warp is not invertible")
    x = u.x
    warped = x - gamma / result.n_period - psi.values[:, 0]
    u_mod = u.interp(warped)
    base = grids.from_profile(prof, result.n_period, result.m_x)
    v = grids.GridFunction(result.n_period, u_mod - base.values)
    return ModulationFrame(float(result.times[i]), float(gamma), psi, v)


def extract_modulation_projection(result):
    """Phase variables and modulated perturbations for a full trajectory."""
    return [modulation_frame(result, i) for i in range(len(result.times))]


def recomposition_error(result, frame, i):
    """Reproduce the snapshot from (gamma, psi, v) and report the sup misfit.

    The inverse warp point of each grid node y solves the fixed point
    x = y + gamma/N + psi(x); then phi(x) + v(x) should return u(y).  The
    remaining error measures interpolation quality of the composed fields.
    """
    u = result.snapshots[i]
    y = u.x
    g = frame.gamma / result.n_period
    x = y + g
    for _ in range(50):
        x_new = y + g + frame.psi.interp(x)[:, 0]
        shift = float(np.max(np.abs(x_new - x)))
        x = x_new
        if shift < 1e-14:
            break
    vals = frame.v.interp(x) + result.profile(x)
    err = np.max(np.abs(vals - u.values))
    return float(err / max(np.max(np.abs(u.values)), 1e-300))


# ---------------------------------------------------------------------------
# nonlinear residual terms

@dataclass
class ResidualFrame:
    """The quadratic source terms of the modulated perturbation equation."""

    t: float
    q_term: grids.GridFunction
    r_term: grids.GridFunction
    source: grids.GridFunction      # (Q + k dR/dx) / k


def nonlinear_residual(profile, n_period, frame, psi_t, gamma_t):
    """Assemble Q, R and the Duhamel source at one snapshot.

    Q = (1 - psi_x) [f(phi+v) - f(phi) - Df(phi) v]
    R = -psi_t v - gamma_t v / N + c psi_x v + k (psi_x v)_x
        + k psi_x/(1-psi_x) v_x + k psi_x^2/(1-psi_x) phi'
    and the source entering the integral equation is (Q + k R_x)/k.
    """
    k, c = profile.k, profile.c
    model = profile.model
    m_x = frame.v.m_x
    base = grids.from_profile(profile, n_period, m_x)
    phi = base.values
    phip = grids.derivative(base).values
    v = frame.v.values
    vx = grids.derivative(frame.v).values
    psix = grids.derivative(frame.psi).values[:, 0:1]
    if np.max(psix) >= 1.0:
        raise PhaseWarpError(
            f"max psi_x = {float(np.max(psix)):.3f} >= 1 at t = {frame.t:.3f}; "
            "the 1/(1 - psi_x) residual factors are singular")
    psit = psi_t.values[:, 0:1] if isinstance(psi_t, grids.GridFunction) else psi_t

    fv = model.f(phi + v) - model.f(phi)
    dfv = np.einsum("xij,xj->xi", model.df(phi), v)
    q_vals = (1.0 - psix) * (fv - dfv)

    denom = 1.0 - psix
    r_vals = (-psit * v - (gamma_t / n_period) * v + c * psix * v
              + k * grids.derivative(grids.GridFunction(n_period, psix * v)).values
              + k * (psix / denom) * vx
              + k * (psix ** 2 / denom) * phip)
    r_gf = grids.GridFunction(n_period, r_vals)
    src = (q_vals + k * grids.derivative(r_gf).values) / k
    return ResidualFrame(frame.t, grids.GridFunction(n_period, q_vals), r_gf,
                         grids.GridFunction(n_period, src))


# ---------------------------------------------------------------------------
# modulation extraction: Duhamel route

@dataclass
class DuhamelTrace:
    """Joint fixed point of the phase and residual integral equations."""

    times: np.ndarray
    gamma: np.ndarray
    inner: np.ndarray           # (T, N) complex critical amplitudes (chi-ramped)
    psi_vals: np.ndarray        # (T, P) synthesized phase fields
    v_vals: np.ndarray          # (T, P, n) iterated residual fields
    iterations: int
    update_norms: list
    v2_defect: float            # relative misfit when the trace is resubstituted

    def psi_field(self, engine, i):
        return engine.synthesize_phase(self.inner[i])


def _trapezoid_weights(times):
    """Per-node trapezoid weights for every prefix integral of the grid."""
    dt = np.diff(times)
    w = np.zeros_like(times)
    w[:-1] += 0.5 * dt
    w[1:] += 0.5 * dt
    return w


def extract_modulation_duhamel(result, tol=1e-8, max_iter=25):
    """Fixed-point solve of the integral equations for gamma, psi, and v.

    The iteration starts from the per-snapshot projection extraction.  Each
    sweep evaluates the quadratic source (Q + k R_x)/k from the current
    variables, updates gamma and psi through their Duhamel formulas
    (trapezoid quadrature on the snapshot grid), and updates v through the
    split residual equation: the unmodulated linear evolution on the ramp-in
    interval plus the cutoff remainder afterwards.  Iteration stops when the
    sup over snapshots of |d gamma| + ||d psi||_{L2} drops below ``tol``;
    two consecutive growing updates raise ExtractionDivergenceError.

    The returned trace carries ``v2_defect``: the relative sup-misfit when
    the converged variables are substituted back into the residual equation
    (same quadrature and stencils), which should sit at iteration tolerance.
    """
    eng = result.engine
    prof = result.profile
    times = result.times
    trel = times - times[0]
    T = times.size
    N = result.n_period
    m_x = result.m_x
    chi = result.chi
    lam0 = eng.crit_lam[0]
    lams = eng.crit_lam
    finite = np.isfinite(lams.real)

    base = grids.from_profile(prof, N, m_x)
    v0 = grids.GridFunction(N, result.snapshots[0].values - base.values)
    gamma0_raw = eng.mean_phase_coefficient(v0)
    inner0 = eng.critical_inner(v0)

    # time-independent pieces: the linear-data terms of each update
    lin_gamma = np.real(np.exp(lam0 * trel) * gamma0_raw)
    lin_inner = np.full((T, N), np.nan + 0j)
    lin_inner[:, finite] = (np.exp(np.outer(trel, lams[finite]))
                            * inner0[None, finite])
    need_full = np.nonzero(chi < 1.0)[0]
    need_mod = np.nonzero(chi > 0.0)[0]
    full_v0 = {i: eng.apply(v0, trel[i]).values for i in need_full}
    st_v0 = {i: eng.decompose(v0, trel[i]).stilde.values for i in need_mod}

    # projection initialization of (gamma, psi, v)
    gamma = result.gamma.copy()
    inner = chi[:, None] * result.inner
    frames = extract_modulation_projection(result)
    v_vals = np.stack([f.v.values for f in frames])
    psi_vals = np.stack([f.psi.values[:, 0] for f in frames])

    def sweep_sources(gamma, psi_vals, v_vals):
        gamma_t = time_derivative(times, gamma)
        psi_t_vals = time_derivative(times, psi_vals)
        sources, s_gamma = [], np.empty(T)
        s_inner = np.zeros((T, N), dtype=complex)
        for s in range(T):
            frame = ModulationFrame(
                float(times[s]), float(gamma[s]),
                grids.GridFunction(N, psi_vals[s][:, None]),
                grids.GridFunction(N, v_vals[s]))
            res = nonlinear_residual(
                prof, N, frame, grids.GridFunction(N, psi_t_vals[s][:, None]),
                gamma_t[s])
            sources.append(res.source)
            s_gamma[s] = eng.mean_phase_coefficient(res.source)
            s_inner[s] = eng.critical_inner(res.source)
        return sources, s_gamma, s_inner

    def phase_update(s_gamma, s_inner):
        new_gamma = np.empty(T)
        new_inner = np.full((T, N), np.nan + 0j)
        for i in range(T):
            w = _trapezoid_weights(times[:i + 1])
            lag = times[i] - times[:i + 1]
            conv_g = np.sum(w * np.real(np.exp(lam0 * lag)) * s_gamma[:i + 1])
            new_gamma[i] = chi[i] * (lin_gamma[i] + conv_g)
            conv = np.sum(w[None, :] * np.exp(np.outer(lams[finite], lag))
                          * s_inner[:i + 1, finite].T, axis=1)
            new_inner[i, finite] = chi[i] * (lin_inner[i, finite] + conv)
        return new_gamma, new_inner

    def v_update(sources, psi_vals_ref, v_vals_ref):
        new_v = np.empty_like(v_vals)
        for i in range(T):
            w = _trapezoid_weights(times[:i + 1])
            lag = times[i] - times[:i + 1]
            acc = np.zeros_like(new_v[0])
            if chi[i] < 1.0:
                lin = full_v0[i].copy()
                for s in range(i + 1):
                    if w[s] != 0.0:
                        lin += w[s] * eng.apply(sources[s], lag[s]).values
                acc += (1.0 - chi[i]) * lin
            if chi[i] > 0.0:
                psix = grids.derivative(
                    grids.GridFunction(N, psi_vals_ref[i][:, None])).values
                mod = st_v0[i] + psix * v_vals_ref[i]
                for s in range(i + 1):
                    if w[s] != 0.0:
                        mod += w[s] * eng.decompose(sources[s], lag[s]).stilde.values
                acc += chi[i] * mod
            new_v[i] = acc
        return new_v

    update_norms = []
    converged = False
    iterations = 0
    for sweep in range(1, max_iter + 1):
        iterations = sweep
        sources, s_gamma, s_inner = sweep_sources(gamma, psi_vals, v_vals)
        new_gamma, new_inner = phase_update(s_gamma, s_inner)
        new_psi = np.stack([eng.synthesize_phase(new_inner[i]).values[:, 0]
                            for i in range(T)])
        new_v = v_update(sources, new_psi, v_vals)

        dpsi = np.sqrt(np.sum((new_psi - psi_vals) ** 2, axis=1) / m_x)
        delta = float(np.max(np.abs(new_gamma - gamma) + dpsi))
        update_norms.append(delta)
        gamma, inner, psi_vals, v_vals = new_gamma, new_inner, new_psi, new_v
        if delta < tol:
            converged = True
            break
        if (len(update_norms) >= 3
                and update_norms[-1] > update_norms[-2] > update_norms[-3]):
            raise ExtractionDivergenceError(
                "integral-equation iteration is diverging (two consecutive "
                "growing updates); a smaller initial perturbation converges",
                iterations=sweep, update_norms=update_norms)
    if not converged:
        raise ExtractionDivergenceError(
            f"no fixed point within {max_iter} sweeps (last update "
            f"{update_norms[-1]:.3e})", iterations=max_iter,
            update_norms=update_norms)

    # consistency: substitute the converged trace back into the equations
    sources, _, _ = sweep_sources(gamma, psi_vals, v_vals)
    rhs_v = v_update(sources, psi_vals, v_vals)
    vnorms = np.sqrt(np.sum(v_vals ** 2, axis=(1, 2)) / m_x)
    dnorms = np.sqrt(np.sum((rhs_v - v_vals) ** 2, axis=(1, 2)) / m_x)
    v2_defect = float(np.max(dnorms) / max(np.max(vnorms), 1e-300))
    return DuhamelTrace(times, gamma, inner, psi_vals, v_vals, iterations,
                        update_norms, v2_defect)


# ---------------------------------------------------------------------------
# trajectory diagnostics

@dataclass
class ModulationTraceData:
    """Per-snapshot phase variables, residual fields, and their norms.

    All Sobolev norms use the global periodic frequencies of [0, N); the
    ``k_sob`` order applies to v and psi_t, with psi_x measured one order
    higher, matching the weighted quantity the decay diagnostics track.
    """

    k_sob: int
    times: np.ndarray
    gamma: np.ndarray
    gamma_t: np.ndarray
    psi_vals: np.ndarray        # (T, P)
    psi_t_vals: np.ndarray
    v_vals: np.ndarray          # (T, P, n)
    v_h: np.ndarray             # ||v||_{H^K}
    psi_x_h: np.ndarray         # ||psi_x||_{H^{K+1}}
    psi_t_h: np.ndarray         # ||psi_t||_{H^K}
    v_l2: np.ndarray
    psi_x_l2: np.ndarray
    psi_t_l2: np.ndarray


def modulation_trace(result, k_sob=3):
    """Extract phases along the trajectory and collect the diagnostic norms."""
    frames = extract_modulation_projection(result)
    times = result.times
    T = times.size
    N = result.n_period
    psi_vals = np.stack([f.psi.values[:, 0] for f in frames])
    v_vals = np.stack([f.v.values for f in frames])
    psi_t_vals = time_derivative(times, psi_vals)
    gamma_t = time_derivative(times, result.gamma)

    psi_x = [grids.derivative(f.psi) for f in frames]
    psi_t = [grids.GridFunction(N, psi_t_vals[i][:, None]) for i in range(T)]
    return ModulationTraceData(
        k_sob=int(k_sob),
        times=times,
        gamma=result.gamma.copy(),
        gamma_t=gamma_t,
        psi_vals=psi_vals,
        psi_t_vals=psi_t_vals,
        v_vals=v_vals,
        v_h=np.array([grids.norm_h(f.v, k_sob) for f in frames]),
        psi_x_h=np.array([grids.norm_h(g, k_sob + 1) for g in psi_x]),
        psi_t_h=np.array([grids.norm_h(g, k_sob) for g in psi_t]),
        v_l2=np.array([grids.norm_l2(f.v) for f in frames]),
        psi_x_l2=np.array([grids.norm_l2(g) for g in psi_x]),
        psi_t_l2=np.array([grids.norm_l2(g) for g in psi_t]),
    )


@dataclass
class ZetaDiagnostic:
    """Running weighted modulation norm and its ingredients."""

    times: np.ndarray
    zeta: np.ndarray
    pointwise: np.ndarray       # the un-supped weighted norm at each time
    components: dict


def zeta_diagnostic(result, k_sob=3, trace=None):
    """zeta(t) = sup_{s <= t} (1+s)^{3/4} [ ||v||_{H^K}^2 + ||psi_x||_{H^{K+1}}^2
    + ||psi_t||_{H^K}^2 + |gamma_t| ]^{1/2} from the projection route."""
    if trace is None:
        trace = modulation_trace(result, k_sob=k_sob)
    point = np.sqrt(trace.v_h ** 2 + trace.psi_x_h ** 2 + trace.psi_t_h ** 2
                    + np.abs(trace.gamma_t))
    weighted = (1.0 + trace.times) ** 0.75 * point
    zeta = np.maximum.accumulate(weighted)
    return ZetaDiagnostic(trace.times, zeta, weighted, {
        "v_h": trace.v_h, "psi_x_h": trace.psi_x_h, "psi_t_h": trace.psi_t_h,
        "gamma_t": trace.gamma_t})


@dataclass
class DampingReport:
    thetas: np.ndarray
    constants: np.ndarray
    best_theta: float
    best_constant: float
    violations: int             # snapshots infeasible at the best theta


def damping_check(result, k_sob=3, thetas=None, delta_n=None, trace=None):
    """Smallest constants in the nonlinear damping inequality

        ||v(t)||_{H^K}^2 <= C [ e^{-theta t} ||v(0)||_{H^K}^2
                                + int_0^t e^{-theta (t-s)} S(s) ds ],

    with the lower-order source S = ||v||_{L2}^2 + ||psi_x||_{L2}^2
    + ||psi_t||_{L2}^2 + gamma_t^2, over a grid of decay rates theta.  The
    reported optimum minimizes C(theta) (1 + theta); a snapshot where the
    right side vanishes while the energy does not makes theta infeasible
    (C = inf) and counts as a violation.
    """
    if trace is None:
        trace = modulation_trace(result, k_sob=k_sob)
    times = trace.times
    T = times.size
    energy = trace.v_h ** 2
    source = (trace.v_l2 ** 2 + trace.psi_x_l2 ** 2 + trace.psi_t_l2 ** 2
              + trace.gamma_t ** 2)

    if thetas is None:
        base = np.geomspace(1e-3, 1.0, 13)
        thetas = np.sort(np.unique(np.concatenate(
            [base, [delta_n / 2.0]] if delta_n else [base])))
    thetas = np.asarray(thetas, dtype=float)

    constants = np.empty_like(thetas)
    bad_counts = np.zeros(thetas.size, dtype=int)
    for a, theta in enumerate(thetas):
        bound = np.empty(T)
        for i in range(T):
            w = _trapezoid_weights(times[:i + 1])
            kern = np.exp(-theta * (times[i] - times[:i + 1]))
            bound[i] = (np.exp(-theta * times[i]) * energy[0]
                        + np.sum(w * kern * source[:i + 1]))
        with np.errstate(divide="ignore", invalid="ignore"):
            ratios = np.where(bound > 0, energy / bound,
                              np.where(energy > 0, np.inf, 0.0))
        constants[a] = np.max(ratios[1:]) if T > 1 else ratios[0]
        bad_counts[a] = int(np.sum((bound <= 0) & (energy > 0)))
    score = constants * (1.0 + thetas)
    best = int(np.argmin(score))
    return DampingReport(thetas, constants, float(thetas[best]),
                         float(constants[best]), int(bad_counts[best]))


def envelope_slope(times, values, t_lo=10.0, t_hi=None):
    """Fitted exponent of the decaying upper envelope of a trace.

    The envelope at time t is the running maximum of |values| over [t, end],
    so oscillation nulls do not drag the fit; the slope is the least-squares
    coefficient of log(envelope) against log(1+t) inside the window.
    """
    times = np.asarray(times, dtype=float)
    vals = np.abs(np.asarray(values, dtype=float))
    env = np.maximum.accumulate(vals[::-1])[::-1]
    mask = (times >= t_lo) & (env > 0)
    if t_hi is not None:
        mask &= times <= t_hi
    if mask.sum() < 3:
        raise ValueError(f"fewer than 3 samples in the fit window (t >= {t_lo})")
    slope, _ = np.polyfit(np.log1p(times[mask]), np.log(env[mask]), 1)
    return float(slope)


@dataclass
class PhaseReport:
    """Long-time translation offset and its linear-prediction anchor."""

    gamma_inf: float            # gamma(t_end) plus the fitted tail integral
    gamma_inf_fit: float        # from the algebraic gamma_inf + b/sqrt(t) fit
    tail_coeff: float
    tail_power: float           # fitted decay power of |gamma_t|
    anchor: float
    sigma_inf: float
    best_shift: float
    shift_misfit: float         # L2 distance of u(T) to the best translate
    unshifted_misfit: float


def phase_convergence(result, fit_fraction=0.25):
    """Extrapolate gamma(t) -> gamma_inf and test the rigid-shift picture.

    gamma_inf is the final value plus a tail correction from the fitted
    power-law decay of gamma_t; an algebraic fit gamma(t) = g + b t^{-1/2}
    over the last quarter cross-checks it.  The anchor <adj_0, v(0)> is the
    linear prediction of the limit.  The final snapshot is compared against
    rigid translates of the wave to locate the best shift.
    """
    times = result.times
    if times[-1] <= 10.0:
        raise ValueError(
            f"horizon t_max = {times[-1]:g} is too short to fit the phase "
            "limit; need t_max > 10")
    gam = result.gamma
    gamma_t = time_derivative(times, gam)

    gamma_inf = float(gam[-1])
    tail_power = np.nan
    late = (times >= max(10.0, times[-1] * (1.0 - fit_fraction))) \
        & (np.abs(gamma_t) > 0)
    if late.sum() >= 3:
        p, _ = np.polyfit(np.log1p(times[late]), np.log(np.abs(gamma_t[late])), 1)
        tail_power = float(-p)
        if tail_power > 1.05:
            # integrate the fitted c (1+t)^{-p} model beyond the horizon
            gamma_inf += float(gamma_t[-1] * (1.0 + times[-1]) / (tail_power - 1.0))

    mask = times >= max(times[-1] * (1.0 - fit_fraction), 1.0)
    if mask.sum() < 3:
        mask = times >= times[max(0, times.size - 4)]
    A = np.stack([np.ones(mask.sum()), times[mask] ** -0.5], axis=1)
    coef, *_ = np.linalg.lstsq(A, gam[mask], rcond=None)
    gamma_inf_fit, tail = float(coef[0]), float(coef[1])

    anchor = float(result.gamma_raw[0])
    N = result.n_period
    sigma = gamma_inf / N

    u_last = result.snapshots[-1]
    prof = result.profile

    def misfit(s):
        ref = translated_profile_data(prof, N, result.m_x, s)
        return grids.norm_l2(grids.GridFunction(N, u_last.values - ref.values))

    # golden-section around the predicted shift, one cell wide
    lo, hi = sigma - 0.5, sigma + 0.5
    invphi = (np.sqrt(5.0) - 1.0) / 2.0
    a, b = lo, hi
    c, d = b - invphi * (b - a), a + invphi * (b - a)
    fc, fd = misfit(c), misfit(d)
    for _ in range(60):
        if fc < fd:
            b, d, fd = d, c, fc
            c = b - invphi * (b - a)
            fc = misfit(c)
        else:
            a, c, fc = c, d, fd
            d = a + invphi * (b - a)
            fd = misfit(d)
    best = 0.5 * (a + b)
    return PhaseReport(
        gamma_inf=gamma_inf,
        gamma_inf_fit=gamma_inf_fit,
        tail_coeff=tail,
        tail_power=tail_power,
        anchor=anchor,
        sigma_inf=sigma,
        best_shift=float(best),
        shift_misfit=float(misfit(best)),
        unshifted_misfit=float(misfit(0.0)),
    )


@dataclass
class CrossoverFit:
    """Two-regime fit of a decaying trace: one power-law and one exponential
    segment joined at a knee.  ``exp_side`` tells which side the exponential
    won ("late" is the physical finite-size crossover)."""

    t_knee: float
    power: float
    rate: float
    sse: float
    exp_side: str = "late"


def crossover_fit(times, values, min_side=3):
    """Split values(t) at the knee minimizing the two-segment fit error.

    Both orientations are tried (power then exponential, and the reverse);
    the reported rate always belongs to the exponential segment.
    """
    times = np.asarray(times, dtype=float)
    values = np.asarray(values, dtype=float)
    keep = (times > 0) & (values > 0)
    t, v = times[keep], values[keep]
    T = t.size
    if T < 2 * min_side + 1:
        raise ValueError(f"need at least {2 * min_side + 1} usable samples, got {T}")
    lt, lv = np.log(t), np.log(v)

    def seg_fit(abscissa, sl):
        p = np.polyfit(abscissa[sl], lv[sl], 1)
        r = lv[sl] - np.polyval(p, abscissa[sl])
        return -p[0], float(r @ r)

    best = (np.inf, None, None, None, "late")
    for kk in range(min_side, T - min_side + 1):
        left, right = slice(None, kk), slice(kk, None)
        pw, e1 = seg_fit(lt, left)
        rate, e2 = seg_fit(t, right)
        if e1 + e2 < best[0]:
            best = (e1 + e2, kk, pw, rate, "late")
        rate, e1 = seg_fit(t, left)
        pw, e2 = seg_fit(lt, right)
        if e1 + e2 < best[0]:
            best = (e1 + e2, kk, pw, rate, "early")
    sse, kk, power, rate, side = best
    return CrossoverFit(float(t[kk - 1]), float(power), float(rate), sse, side)
