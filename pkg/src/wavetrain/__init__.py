"""Spectral tools for periodic traveling waves of reaction-diffusion systems.

The package solves for wave-train profiles in a scaled co-moving frame,
assembles their Bloch-operator linearizations, verifies diffusive spectral
stability, decomposes the linear semigroup on N-periodic functions into
phase, critically damped, and exponentially damped parts, and runs nonlinear
simulations with modulation (phase/translation) extraction.
"""

from .bloch import (
    CriticalCurve,
    StabilityReport,
    SubharmonicSpectrum,
    assemble_bloch,
    bloch_spectrum,
    critical_curve,
    critical_mode_data,
    gap_sequence,
    omega_grid,
    subharmonic_spectrum,
    verify_diffusive_stability,
)
from .errors import (
    AdmissibilityError,
    BlowUpError,
    BranchTrackingError,
    ContinuationError,
    DegenerateProfileError,
    ExtractionDivergenceError,
    ModelParameterError,
    PhaseWarpError,
    ProfileConvergenceError,
    WavetrainError,
)
from .evolve import (
    DuhamelTrace,
    ExperimentResult,
    ModulationTraceData,
    crossover_fit,
    damping_check,
    default_snapshot_times,
    envelope_slope,
    extract_modulation_duhamel,
    extract_modulation_projection,
    modulation_frame,
    modulation_trace,
    nonlinear_residual,
    phase_convergence,
    random_perturbation,
    read_snapshot,
    recomposition_error,
    run_experiment,
    translated_profile_data,
    write_snapshot,
    zeta_diagnostic,
)
from .grids import (
    BlochCoefficients,
    GridFunction,
    bloch_inverse,
    bloch_transform,
    derivative,
    from_callable,
    from_profile,
    grid_points,
    inner_l2,
    norm_h,
    norm_l1,
    norm_l2,
    norm_linf,
)
from .models import ReactionModel, brusselator, make_model, nagumo, real_ginzburg_landau
from .profiles import (
    WaveProfile,
    continue_profile,
    load_profile,
    nagumo_guess,
    profile_residual,
    rgl_analytic,
    save_profile,
    solve_profile,
)
from .semigroup import (
    CutoffSpec,
    DecayMeasurement,
    SemigroupEngine,
    SemigroupParts,
    continuum_envelope,
    crossover_probe,
    default_cutoff,
    lattice_sum,
    measure_decay,
    sum_bound_report,
)

__version__ = "0.1.0"

__all__ = [
    "AdmissibilityError",
    "BlochCoefficients",
    "BlowUpError",
    "BranchTrackingError",
    "ContinuationError",
    "CriticalCurve",
    "CutoffSpec",
    "DecayMeasurement",
    "DegenerateProfileError",
    "DuhamelTrace",
    "ExperimentResult",
    "ExtractionDivergenceError",
    "GridFunction",
    "ModelParameterError",
    "ModulationTraceData",
    "PhaseWarpError",
    "ProfileConvergenceError",
    "ReactionModel",
    "SemigroupEngine",
    "SemigroupParts",
    "StabilityReport",
    "SubharmonicSpectrum",
    "WaveProfile",
    "WavetrainError",
    "assemble_bloch",
    "bloch_inverse",
    "bloch_spectrum",
    "bloch_transform",
    "brusselator",
    "continue_profile",
    "continuum_envelope",
    "critical_curve",
    "critical_mode_data",
    "crossover_fit",
    "crossover_probe",
    "damping_check",
    "default_cutoff",
    "default_snapshot_times",
    "derivative",
    "envelope_slope",
    "extract_modulation_duhamel",
    "extract_modulation_projection",
    "from_callable",
    "from_profile",
    "gap_sequence",
    "grid_points",
    "inner_l2",
    "lattice_sum",
    "load_profile",
    "make_model",
    "measure_decay",
    "modulation_frame",
    "modulation_trace",
    "nagumo",
    "nagumo_guess",
    "nonlinear_residual",
    "norm_h",
    "norm_l1",
    "norm_l2",
    "norm_linf",
    "omega_grid",
    "phase_convergence",
    "profile_residual",
    "random_perturbation",
    "read_snapshot",
    "real_ginzburg_landau",
    "recomposition_error",
    "rgl_analytic",
    "run_experiment",
    "save_profile",
    "solve_profile",
    "subharmonic_spectrum",
    "sum_bound_report",
    "translated_profile_data",
    "verify_diffusive_stability",
    "write_snapshot",
    "zeta_diagnostic",
]
