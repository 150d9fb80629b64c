"""Bloch-operator spectra, the critical branch, and stability verdicts."""

import numpy as np
import pytest

from wavetrain.bloch import (
    assemble_bloch,
    bloch_spectrum,
    critical_curve,
    critical_mode_data,
    gap_sequence,
    omega_grid,
    subharmonic_spectrum,
    verify_diffusive_stability,
)
from wavetrain.models import real_ginzburg_landau
from wavetrain.profiles import rgl_analytic, solve_profile

# Frozen reference values for the q = 0.3 wave (k = 0.3 / (2 pi)).
# The drift vanishes by reflection symmetry and the curvature equals
# k (1 - 3 q^2) / (1 - q^2); the gaps come from converged scans.
D_Q03 = 0.03830212366717042
GAPS_Q03 = {
    1: 1.515684575117475,
    2: 0.37825363713,
    4: 0.094520930738,
    8: 0.023627565626,
}


@pytest.fixture(scope="module")
def rgl_q07():
    return solve_profile(
        real_ginzburg_landau(), *rgl_analytic(0.7, m_f=32), solve_for="c")


def test_omega_grid_frequencies():
    grid = omega_grid(4)
    assert len(grid.frequencies) == 4
    assert 0.0 in grid.frequencies
    assert np.all(np.abs(grid.frequencies) <= np.pi + 1e-12)
    # spacing 2 pi / N
    spacing = np.diff(np.sort(grid.frequencies))
    np.testing.assert_allclose(spacing, np.pi / 2, atol=1e-12)


def test_translation_mode_sits_at_zero(rgl_profile):
    lam = bloch_spectrum(assemble_bloch(rgl_profile, 0.0))
    assert np.min(np.abs(lam)) <= 1e-10
    # and it is the only one near zero
    assert np.sort(np.abs(lam))[1] > 0.1


def test_spectrum_is_conjugate_symmetric_across_xi(rgl_profile):
    # L_{-xi} = conj(L_xi) for real operators, so spectra pair up.
    lam_plus = np.sort_complex(bloch_spectrum(assemble_bloch(rgl_profile, 0.4)))
    lam_minus = np.sort_complex(
        np.conj(bloch_spectrum(assemble_bloch(rgl_profile, -0.4))))
    np.testing.assert_allclose(lam_plus, lam_minus, atol=1e-9)


def test_critical_curve_recovers_drift_and_curvature(rgl_profile):
    curve = critical_curve(rgl_profile, xi_max=0.25, samples=17)
    assert abs(curve.a) < 1e-6
    assert curve.d > 0
    # the quadratic fit over |xi| <= 0.25 carries O(xi^2) truncation, so
    # agreement with the analytic curvature is ~1e-6 relative, not machine
    assert curve.d == pytest.approx(D_Q03, rel=1e-4)
    assert abs(curve.d - curve.d_second_diff) <= 0.01 * curve.d
    assert curve.fit_residual < 1e-2


def test_critical_curve_argument_validation(rgl_profile):
    with pytest.raises(ValueError, match="odd"):
        critical_curve(rgl_profile, samples=16)
    with pytest.raises(ValueError, match="xi_max"):
        critical_curve(rgl_profile, xi_max=4.0)


def test_critical_mode_data_gauge(rgl_profile):
    data = critical_mode_data(rgl_profile, 0.3)
    assert abs(np.vdot(data.adjoint_vec, data.phi_vec) - 1.0) < 1e-10
    assert data.lam.real < 0


def test_stability_verdict_true_in_the_stable_range(stability):
    assert stability.verdict
    assert stability.condition_negative_spectrum
    assert stability.condition_quadratic_bound
    assert stability.condition_simple_zero
    assert stability.theta > 0
    assert stability.failures == []
    assert stability.zero_simplicity > 0.1
    assert stability.curve.d == pytest.approx(D_Q03, rel=1e-4)


def test_stability_verdict_false_beyond_the_stable_range(rgl_q07):
    # q = 0.7 sits outside q^2 < 1/3: the curvature d goes negative, which
    # breaks the quadratic bound while the zero eigenvalue stays simple.
    report = verify_diffusive_stability(rgl_q07, scan=128)
    assert not report.verdict
    assert not report.condition_quadratic_bound
    assert report.condition_simple_zero
    assert report.curve.d == pytest.approx(-0.1024, rel=1e-2)
    assert report.failures


def test_stability_scan_validation(rgl_profile):
    with pytest.raises(ValueError, match="scan"):
        verify_diffusive_stability(rgl_profile, scan=4)


def test_subharmonic_spectrum_at_the_coperiodic_frequency(rgl_profile):
    spec = subharmonic_spectrum(rgl_profile, 1)
    assert spec.n_period == 1
    assert spec.zero_defect <= 1e-10
    assert spec.delta == pytest.approx(GAPS_Q03[1], rel=1e-6)
    assert spec.attaining_xi == 0.0


def test_gap_sequence_matches_reference_values(rgl_profile):
    gaps = gap_sequence(rgl_profile, [1, 2, 4, 8])
    for n, expected in GAPS_Q03.items():
        assert gaps[n] == pytest.approx(expected, rel=1e-6), f"N = {n}"


def test_gap_sequence_is_nonincreasing(rgl_profile):
    gaps = gap_sequence(rgl_profile, [2, 4, 8, 16])
    vals = [gaps[n] for n in (2, 4, 8, 16)]
    assert all(a >= b for a, b in zip(vals, vals[1:]))


def test_gaps_scale_like_the_critical_curvature(rgl_profile):
    # For large N the gap is governed by the parabolic tip:
    # delta_N ~ d (2 pi / N)^2.
    gaps = gap_sequence(rgl_profile, [32, 64])
    for n in (32, 64):
        predicted = D_Q03 * (2 * np.pi / n) ** 2
        assert gaps[n] == pytest.approx(predicted, rel=0.10), f"N = {n}"


def test_critical_branch_is_tracked_across_the_lattice(rgl_profile):
    spec = subharmonic_spectrum(rgl_profile, 8)
    assert not np.any(np.isnan(spec.critical))
    # the branch obeys the quadratic model near xi = 0
    for x, lam in zip(spec.frequencies, spec.critical):
        if 0 < abs(x) <= 0.8:
            assert lam.real == pytest.approx(-D_Q03 * x ** 2, rel=0.15)


def test_eigenvalues_are_sorted_by_descending_real_part(rgl_profile):
    spec = subharmonic_spectrum(rgl_profile, 2)
    for lam in spec.eigenvalues:
        assert np.all(np.diff(lam.real) <= 1e-12)
