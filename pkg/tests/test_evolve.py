"""Time stepping, modulation extraction, and trajectory diagnostics."""

import numpy as np
import pytest

from wavetrain import evolve, grids, semigroup
from wavetrain.errors import (
    BlowUpError,
    ExtractionDivergenceError,
    PhaseWarpError,
)
from wavetrain.evolve import (
    crossover_fit,
    default_snapshot_times,
    envelope_slope,
    extract_modulation_duhamel,
    extract_modulation_projection,
    fd_weights,
    modulation_frame,
    modulation_trace,
    nonlinear_residual,
    quintic_smoothstep,
    random_perturbation,
    read_snapshot,
    recomposition_error,
    run_experiment,
    stable_dt_limit,
    time_derivative,
    translated_profile_data,
    write_snapshot,
)


@pytest.fixture(scope="module")
def small_run(rgl_profile, engine4):
    return run_experiment(rgl_profile, 4, engine4, t_max=6.0, dt=0.01,
                          seed=3, amplitude=1e-5)


def test_stable_dt_limit_is_positive_and_tight(rgl_profile):
    lim = stable_dt_limit(rgl_profile)
    assert 0.005 < lim < 0.05      # the default dt = 0.01 must be admissible


def test_random_perturbation_is_deterministic():
    a = random_perturbation(4, 65, 2, seed=7, amplitude=1e-3)
    b = random_perturbation(4, 65, 2, seed=7, amplitude=1e-3)
    np.testing.assert_array_equal(a.values, b.values)
    c = random_perturbation(4, 65, 2, seed=8, amplitude=1e-3)
    assert np.any(c.values != a.values)


def test_random_perturbation_normalizations():
    sup = random_perturbation(4, 65, 2, seed=1, amplitude=2.5, normalize="sup")
    assert grids.norm_linf(sup) == pytest.approx(2.5, rel=1e-12)
    l1 = random_perturbation(4, 65, 2, seed=1, amplitude=0.5, normalize="l1")
    assert grids.norm_l1(l1) == pytest.approx(0.5, rel=1e-12)
    sob = random_perturbation(4, 65, 2, seed=1, amplitude=1e-2,
                              normalize="l1_sobolev", k_sob=3)
    assert (grids.norm_l1(sob) + grids.norm_h(sob, 3)
            ) == pytest.approx(1e-2, rel=1e-12)


def test_random_perturbation_band_limit():
    gf = random_perturbation(8, 65, 2, seed=2, amplitude=1.0, band=8)
    spec = np.fft.fft(gf.values, axis=0)
    # modes live at global frequencies 2 pi m / 8 with |m| <= 8
    mags = np.abs(spec).sum(axis=1)
    live = np.nonzero(mags > 1e-9 * mags.max())[0]
    P = 8 * 65
    signed = np.where(live <= P // 2, live, live - P)
    assert np.max(np.abs(signed)) <= 8


def test_zero_amplitude_perturbation_is_zero():
    gf = random_perturbation(4, 65, 2, seed=0, amplitude=0.0)
    assert np.all(gf.values == 0.0)


def test_snapshot_round_trip(tmp_path, rng):
    gf = grids.GridFunction(3, rng.standard_normal((3 * 5, 2)))
    path = tmp_path / "snap.bin"
    write_snapshot(path, gf, 12.25)
    back, t = read_snapshot(path)
    assert t == 12.25
    assert back.n_period == 3
    np.testing.assert_array_equal(back.values, gf.values)


def test_default_snapshot_times_structure():
    times = default_snapshot_times(100.0)
    assert times[0] == 0.0
    assert times[-1] == pytest.approx(100.0)
    assert np.all(np.diff(times) > 0)
    dense = times[times <= 10.0]
    np.testing.assert_allclose(np.diff(dense), 0.25, atol=1e-9)


def test_quintic_smoothstep_ramp():
    assert quintic_smoothstep(0.2) == 0.0
    assert quintic_smoothstep(1.5) == 1.0
    assert quintic_smoothstep(0.75) == pytest.approx(0.5)
    ts = np.linspace(0.5, 1.0, 50)
    vals = quintic_smoothstep(ts)
    assert np.all(np.diff(vals) >= 0)
    # first and second derivatives vanish at both ends
    h = 1e-4
    for edge in (0.5, 1.0):
        fd1 = (quintic_smoothstep(edge + h) - quintic_smoothstep(edge - h)) / (2 * h)
        assert abs(fd1) < 1e-6


def test_fd_weights_differentiate_polynomials():
    nodes = np.array([-2.0, -1.0, 0.0, 1.0, 2.0])
    w = fd_weights(nodes, 0.0, 1)
    # exact for polynomials up to degree 4
    for p in range(5):
        deriv = np.dot(w, nodes ** p)
        expected = 0.0 if p != 1 else 1.0
        assert deriv == pytest.approx(expected, abs=1e-12)


def test_time_derivative_exact_on_cubics():
    times = np.linspace(0.0, 2.0, 9)
    vals = times ** 3 - 2.0 * times
    d1 = time_derivative(times, vals)
    np.testing.assert_allclose(d1, 3.0 * times ** 2 - 2.0, atol=1e-10)
    # nonuniform grid
    times = np.geomspace(1.0, 4.0, 11)
    vals = times ** 2
    np.testing.assert_allclose(time_derivative(times, vals), 2.0 * times,
                               atol=1e-9)


@pytest.mark.parametrize("scheme", ["imex", "etdrk4"])
def test_pure_profile_is_stationary(rgl_profile, engine4, scheme):
    res = run_experiment(rgl_profile, 4, engine4, t_max=10.0, dt=0.01,
                         scheme=scheme, amplitude=0.0,
                         snapshot_times=[0.0, 10.0])
    base = grids.from_profile(rgl_profile, 4, engine4.m_x)
    drift = grids.norm_l2(grids.GridFunction(
        4, res.snapshots[-1].values - base.values))
    assert drift <= 1e-10, scheme


def test_imex_is_second_order_in_time(rgl_profile, engine4):
    # use a state well away from the wave so the reaction term actually
    # moves; near phi the scheme's exact steady state hides the truncation
    x = grids.grid_points(4, engine4.m_x)
    bump = grids.GridFunction(4, np.column_stack(
        [0.2 * np.sin(np.pi * x / 2), 0.1 * np.cos(np.pi * x)]))

    def final_state(dt, scheme="imex"):
        res = run_experiment(rgl_profile, 4, engine4, t_max=1.0, dt=dt,
                             scheme=scheme, amplitude=0.0, initial=bump,
                             snapshot_times=[1.0])
        return res.snapshots[-1].values

    ref = final_state(0.000625, scheme="etdrk4")
    e1 = np.max(np.abs(final_state(0.01) - ref))
    e2 = np.max(np.abs(final_state(0.005) - ref))
    assert 2.8 < e1 / e2 < 5.5


def test_etdrk4_beats_imex_accuracy(rgl_profile, engine4):
    x = grids.grid_points(4, engine4.m_x)
    bump = grids.GridFunction(4, np.column_stack(
        [0.2 * np.sin(np.pi * x / 2), 0.1 * np.cos(np.pi * x)]))
    ref = run_experiment(rgl_profile, 4, engine4, t_max=1.0, dt=0.000625,
                         scheme="etdrk4", amplitude=0.0, initial=bump,
                         snapshot_times=[1.0]).snapshots[-1].values
    results = {}
    for scheme in ("imex", "etdrk4"):
        res = run_experiment(rgl_profile, 4, engine4, t_max=1.0, dt=0.01,
                             scheme=scheme, amplitude=0.0, initial=bump,
                             snapshot_times=[1.0])
        results[scheme] = np.max(np.abs(res.snapshots[-1].values - ref))
    assert results["etdrk4"] < 0.1 * results["imex"]


def test_unknown_scheme_is_rejected(rgl_profile, engine4):
    with pytest.raises(ValueError, match="scheme"):
        run_experiment(rgl_profile, 4, engine4, scheme="rk4")


def test_engine_period_mismatch_is_rejected(rgl_profile, engine8):
    with pytest.raises(ValueError, match="N="):
        run_experiment(rgl_profile, 4, engine8)


def test_blow_up_is_detected(rgl_profile, engine4):
    # drive the cubic nonlinearity past recovery
    big = grids.GridFunction(4, 40.0 * np.ones((4 * engine4.m_x, 2)))
    with pytest.raises(BlowUpError) as err:
        run_experiment(rgl_profile, 4, engine4, t_max=5.0, dt=0.01,
                       initial=big, blowup_limit=1e4)
    assert err.value.t is not None


def test_trajectory_stays_real(small_run):
    for snap in small_run.snapshots:
        assert snap.values.dtype == np.float64
    assert small_run.gamma_raw.dtype == np.float64
    assert np.max(np.abs(small_run.inner.imag[:, 0])) <= 1e-12


def test_chi_ramp_gates_the_phase(small_run):
    times = small_run.times
    assert np.all(small_run.chi[times <= 0.5] == 0.0)
    assert np.all(small_run.chi[times >= 1.0] == 1.0)
    assert small_run.gamma[0] == 0.0


def test_translation_is_pure_phase(rgl_profile, engine4):
    # starting from phi(x - s), the projection reads off gamma ~ N s
    s = 0.01
    shifted = translated_profile_data(rgl_profile, 4, engine4.m_x, s)
    base = grids.from_profile(rgl_profile, 4, engine4.m_x)
    init = grids.GridFunction(4, shifted.values - base.values)
    res = run_experiment(rgl_profile, 4, engine4, t_max=3.0, dt=0.01,
                         amplitude=0.0, initial=init,
                         snapshot_times=[0.0, 2.0, 3.0])
    assert res.gamma_raw[-1] == pytest.approx(4 * s, rel=1e-2)
    frame = modulation_frame(res, len(res.times) - 1)
    assert grids.norm_l2(frame.psi) <= 1e-4
    assert grids.norm_linf(frame.v) <= 1e-4


def test_derivative_direction_is_pure_phase(rgl_profile, engine4):
    # phi + eps phi' is phi translated by -eps/1 to leading order... the
    # projection sees mean content eps * N with no local phase
    eps = 1e-6
    x = grids.grid_points(4, engine4.m_x)
    init = grids.GridFunction(4, eps * rgl_profile(x, deriv=1))
    res = run_experiment(rgl_profile, 4, engine4, t_max=2.0, dt=0.01,
                         amplitude=0.0, initial=init, snapshot_times=[0.0, 2.0])
    assert res.gamma_raw[0] == pytest.approx(4 * eps, rel=1e-6)
    psi0 = res.psi_field(0)
    assert grids.norm_l2(psi0) <= 1e-10


def test_recomposition_inverts_the_warp(rgl_profile, engine4):
    res = run_experiment(rgl_profile, 4, engine4, t_max=5.0, dt=0.01,
                         seed=9, amplitude=1e-4)
    for i in (0, len(res.times) // 2, len(res.times) - 1):
        frame = modulation_frame(res, i)
        assert recomposition_error(res, frame, i) <= 1e-6


def test_modulation_frame_rejects_steep_phases(rgl_profile, engine4, small_run):
    # force an absurd phase amplitude through the optional override
    inner = np.zeros(4, dtype=complex)
    inner[1] = 40.0
    inner[3] = np.conj(inner[1])
    with pytest.raises(PhaseWarpError, match="psi_x"):
        modulation_frame(small_run, 10, inner=inner)


def test_nonlinear_residual_scales_quadratically(rgl_profile, engine4):
    # Q collects the beyond-linear part of f along the wave: halving the
    # perturbation should quarter it
    norms = {}
    for eps in (1e-3, 5e-4):
        res = run_experiment(rgl_profile, 4, engine4, t_max=4.0, dt=0.01,
                             seed=13, amplitude=eps, normalize="sup")
        i = len(res.times) - 1
        frame = modulation_frame(res, i)
        gamma_t = float(np.gradient(res.gamma, res.times)[i])
        rf = nonlinear_residual(rgl_profile, 4, frame, psi_t=0.0,
                                gamma_t=gamma_t)
        norms[eps] = grids.norm_l2(rf.q_term)
    ratio = norms[1e-3] / norms[5e-4]
    assert ratio == pytest.approx(4.0, rel=0.25)


def test_projection_extraction_full_trajectory(small_run):
    frames = extract_modulation_projection(small_run)
    assert len(frames) == len(small_run.times)
    assert frames[0].gamma == 0.0
    # v is the perturbation in the comoving frame; it stays small
    assert all(grids.norm_linf(f.v) < 1e-3 for f in frames)


def test_duhamel_agrees_with_projection_for_small_data(rgl_profile, engine4):
    # dense snapshots keep the quadrature defect below the 10x-tol bar
    res = run_experiment(rgl_profile, 4, engine4, t_max=8.0, dt=0.01,
                         seed=21, amplitude=1e-5,
                         snapshot_times=np.arange(0.0, 8.01, 0.1))
    trace = extract_modulation_duhamel(res, tol=1e-8)
    assert trace.iterations <= 3
    assert trace.v2_defect <= 1e-7
    gam_p = res.gamma
    diff = np.max(np.abs(trace.gamma - gam_p))
    assert diff <= 1e-3 * max(np.max(np.abs(gam_p)), 1e-30)


def test_duhamel_contracts_at_moderate_amplitude(rgl_profile, engine4):
    res = run_experiment(rgl_profile, 4, engine4, t_max=6.0, dt=0.01,
                         seed=2, amplitude=5e-3, normalize="sup")
    trace = extract_modulation_duhamel(res, tol=1e-10)
    assert trace.iterations >= 3
    updates = trace.update_norms
    assert all(a > b for a, b in zip(updates, updates[1:]))
    assert trace.v2_defect <= 1e-9


def test_duhamel_reports_divergence(rgl_profile, engine4):
    res = run_experiment(rgl_profile, 4, engine4, t_max=6.0, dt=0.01,
                         seed=2, amplitude=0.4, normalize="sup")
    with pytest.raises(ExtractionDivergenceError, match="diverging"):
        extract_modulation_duhamel(res)


def test_duhamel_reports_sweep_exhaustion(rgl_profile, engine4):
    # just inside the contraction region but too slow for the sweep budget
    res = run_experiment(rgl_profile, 4, engine4, t_max=6.0, dt=0.01,
                         seed=2, amplitude=0.2, normalize="sup")
    with pytest.raises(ExtractionDivergenceError, match="sweeps"):
        extract_modulation_duhamel(res)


def test_zero_run_extracts_zero(rgl_profile, engine4):
    res = run_experiment(rgl_profile, 4, engine4, t_max=3.0, dt=0.01,
                         amplitude=0.0)
    trace = extract_modulation_duhamel(res)
    assert trace.iterations == 1
    assert np.max(np.abs(trace.gamma)) <= 1e-12
    assert np.max(np.abs(trace.psi_vals)) <= 1e-12


def test_envelope_slope_recovers_a_power_law():
    times = np.geomspace(0.5, 200.0, 60)
    vals = 3.0 * (1.0 + times) ** -0.75
    slope = envelope_slope(times, vals, t_lo=5.0)
    assert slope == pytest.approx(-0.75, abs=0.01)
    # oscillation under the envelope does not change the fit much
    wob = vals * (1.0 + 0.3 * np.sin(3.0 * np.log(times)))
    slope2 = envelope_slope(times, wob, t_lo=5.0)
    assert slope2 == pytest.approx(-0.75, abs=0.15)


def test_envelope_slope_needs_enough_samples():
    with pytest.raises(ValueError, match="samples"):
        envelope_slope(np.array([1.0, 2.0]), np.array([1.0, 0.5]), t_lo=10.0)


def test_crossover_fit_recovers_the_synthetic_rate():
    # a power term plus an exponential: the exponential rules early here,
    # and the fitter's orientation search still pins its rate
    delta = 0.09
    times = np.geomspace(0.5, 400.0, 120)
    vals = 1e-4 * (1.0 + times) ** -0.25 + 2.0 * np.exp(-delta * times)
    fit = crossover_fit(times, vals)
    assert fit.rate == pytest.approx(delta, rel=0.05)
    assert fit.exp_side == "early"


def test_crossover_fit_physical_orientation():
    # power law handing over to an exponential at a knee (the finite-size
    # crossover shape): knee and rate both recovered
    delta = 0.08
    times = np.geomspace(0.5, 300.0, 150)
    knee = 60.0
    pow_part = 0.9 * (1.0 + times) ** -0.25
    exp_part = pow_part[np.searchsorted(times, knee)] * np.exp(
        -delta * (times - knee))
    vals = np.where(times <= knee, pow_part, exp_part)
    fit = crossover_fit(times, vals)
    assert fit.exp_side == "late"
    assert fit.rate == pytest.approx(delta, rel=0.05)
    assert fit.t_knee == pytest.approx(knee, rel=0.25)
    assert fit.power == pytest.approx(0.25, abs=0.1)


def test_crossover_fit_on_a_linear_relaxation(rgl_profile, engine4):
    # N = 4 has a large gap: the knee comes early and the late rate is the
    # subharmonic gap
    from wavetrain.bloch import subharmonic_spectrum
    delta4 = subharmonic_spectrum(rgl_profile, 4).delta
    res = run_experiment(rgl_profile, 4, engine4, t_max=64.0, dt=0.01,
                         seed=0, amplitude=1e-2, band=4)
    gam_inf = res.gamma_raw[-1]
    shifted = translated_profile_data(rgl_profile, 4, res.m_x, gam_inf / 4)
    h1 = np.array([grids.norm_h(grids.GridFunction(
        4, res.snapshots[i].values - shifted.values), 1)
        for i in range(len(res.times))])
    fit = crossover_fit(res.times, h1)
    assert fit.exp_side == "late"
    assert fit.rate == pytest.approx(delta4, rel=0.20)


def test_run_experiment_records_perturbation_metadata(small_run):
    meta = small_run.perturbation
    assert meta["seed"] == 3
    assert meta["amplitude"] == 1e-5
    assert meta["normalize"] == "l1_sobolev"
    assert "band" in meta and "kind" in meta


def test_decay_constant_is_uniform_in_the_period(rgl_profile, stability,
                                                 cutoff, engine8, engine16):
    # The constant in max_t ||v(t)||_{H^3} (1+t)^{3/4} <= C * E0 must not
    # grow with the number of periods.  Run the same protocol on wider and
    # wider domains and compare the attained constants.  The N = 32 leg
    # dominates the runtime of this whole module.
    engines = {8: engine8, 16: engine16,
               32: semigroup.SemigroupEngine(rgl_profile, 32, cutoff=cutoff,
                                             stability=stability)}
    e0 = 1e-2
    attained = {}
    for n, eng in engines.items():
        res = run_experiment(rgl_profile, n, eng, t_max=4.0 * n ** 2, dt=0.01,
                             seed=0, amplitude=e0, band=n,
                             normalize="l1_sobolev", k_sob=3)
        tr = modulation_trace(res, k_sob=3)
        attained[n] = float(np.max(tr.v_h * (1.0 + res.times) ** 0.75) / e0)
    assert all(np.isfinite(c) and c > 0 for c in attained.values())
    assert max(attained.values()) / min(attained.values()) < 3.0
