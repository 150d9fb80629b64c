"""Command-line entry point: profiles, spectra, decay studies, experiments.

Every command writes its artifacts into an output directory together with a
single ``manifest.json`` recording the resolved configuration, tool version,
input digests, output paths, and wall-clock/step counts.  Reruns with the
same inputs and seeds reproduce all CSV/JSON payloads bit-for-bit (manifest
timing fields excepted).

Exit codes: 0 success, 2 solver failure, 64 usage error, 65 validation
error, 66 unreadable input, 70 blow-up, 71 extraction divergence.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__, bloch, evolve, fourier, grids, profiles, semigroup
from .errors import (
    AdmissibilityError,
    BlowUpError,
    BranchTrackingError,
    ExtractionDivergenceError,
    ModelParameterError,
    PhaseWarpError,
    ProfileConvergenceError,
)
from .models import make_model

EXIT_OK = 0
EXIT_SOLVER = 2
EXIT_USAGE = 64
EXIT_VALIDATION = 65
EXIT_IO = 66
EXIT_BLOWUP = 70
EXIT_DIVERGENCE = 71

_SCHEMA_VERSIONS = {
    "manifest": 1,
    "profile": 1,
    "spectrum_csv": 1,
    "stability_report": 1,
    "gap_report": 1,
    "decay_csv": 1,
    "decay_fit": 1,
    "sum_csv": 1,
    "sum_summary": 1,
    "trace_csv": 1,
    "snapshot_blob": 1,
    "experiment_report": 1,
}

# model parameters consumed by the model factory; remaining --param entries
# parameterize the analytic guess family (q for rgl, amplitude/detune knobs)
_MODEL_PARAM_NAMES = {"rgl": (), "realgl": (), "nagumo": ("alpha",),
                      "brusselator": ("A", "B")}


class _CliError(Exception):
    def __init__(self, code, message):
        super().__init__(message)
        self.code = code


class _Parser(argparse.ArgumentParser):
    """argparse with usage failures mapped onto exit code 64."""

    def error(self, message):
        self.print_usage(sys.stderr)
        raise _CliError(EXIT_USAGE, f"{self.prog}: error: {message}")


def _fmt(x):
    """Floats with 17 significant digits (value-preserving for doubles)."""
    return f"{float(x):.17g}"


def _sha256(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def _write_csv(path, header, rows):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(row) + "\n")


def _jsonable(obj):
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.floating):
        return float(obj)
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    raise TypeError(f"not JSON-serializable: {type(obj).__name__}")


def _write_json(path, payload):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True, default=_jsonable)
        fh.write("\n")


class _Manifest:
    """Collects run metadata; written once per output directory."""

    def __init__(self, command, argv, config):
        self.command = command
        self.argv = list(argv)
        self.config = config
        self.inputs = {}
        self.outputs = []
        self.counts = {}
        self.t0 = time.perf_counter()

    def add_input(self, path):
        self.inputs[str(path)] = _sha256(path)

    def add_output(self, out_dir, path):
        self.outputs.append(str(Path(path).relative_to(out_dir)))

    def write(self, out_dir):
        payload = {
            "schema_version": _SCHEMA_VERSIONS["manifest"],
            "schema_versions": _SCHEMA_VERSIONS,
            "tool_version": __version__,
            "command": self.command,
            "argv": self.argv,
            "config": self.config,
            "inputs": self.inputs,
            "outputs": sorted(self.outputs),
            "step_counts": self.counts,
            "wall_time_s": time.perf_counter() - self.t0,
        }
        _write_json(Path(out_dir) / "manifest.json", payload)


def _ensure_dir(path):
    p = Path(path)
    p.mkdir(parents=True, exist_ok=True)
    return p


def _load_profile_checked(path):
    try:
        return profiles.load_profile(path)
    except OSError as exc:
        raise _CliError(EXIT_IO, f"cannot read profile file {path}: {exc}")
    except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
        raise _CliError(EXIT_IO, f"not a valid profile file {path}: {exc}")


def _parse_params(pairs):
    out = {}
    for pair in pairs or []:
        if "=" not in pair:
            raise _CliError(EXIT_USAGE,
                            f"--param expects key=value, got {pair!r}")
        key, _, val = pair.partition("=")
        try:
            out[key.strip()] = float(val)
        except ValueError:
            raise _CliError(EXIT_USAGE,
                            f"--param {key.strip()}: not a number: {val!r}")
    return out


def _parse_int_list(text, name, minimum=1):
    try:
        vals = [int(tok) for tok in str(text).split(",") if tok.strip()]
    except ValueError:
        raise _CliError(EXIT_USAGE, f"{name} expects integers, got {text!r}")
    if not vals or any(v < minimum for v in vals):
        raise _CliError(EXIT_USAGE, f"{name} entries must be >= {minimum}")
    return vals


def _resize_coeffs(coeffs, m_new):
    m_old = fourier.trunc_order(coeffs)
    if m_new == m_old:
        return coeffs
    out = np.zeros((2 * m_new + 1, coeffs.shape[1]), dtype=complex)
    keep = min(m_old, m_new)
    out[m_new - keep:m_new + keep + 1] = coeffs[m_old - keep:m_old + keep + 1]
    return out


# ---------------------------------------------------------------------------
# profile

def cmd_profile(args, argv):
    params = _parse_params(args.param)
    model_id = args.model.lower()
    if model_id not in _MODEL_PARAM_NAMES:
        raise _CliError(EXIT_USAGE,
                        f"unknown model {args.model!r}; known: "
                        f"{sorted(set(_MODEL_PARAM_NAMES) - {'realgl'})}")
    try:
        model = make_model(model_id,
                           {k: params[k] for k in _MODEL_PARAM_NAMES[model_id]
                            if k in params})
    except ModelParameterError as exc:
        raise _CliError(EXIT_VALIDATION, str(exc))

    out_path = Path(args.out)
    out_dir = _ensure_dir(out_path.parent if out_path.parent != Path("")
                          else Path("."))
    manifest = _Manifest("profile", argv, {
        "model": model_id, "params": params, "modes": args.modes,
        "guess": args.guess, "solve_for": args.solve_for, "tol": args.tol,
        "out": str(out_path)})

    if args.guess == "analytic":
        try:
            if model_id in ("rgl", "realgl"):
                if "q" not in params:
                    raise _CliError(EXIT_VALIDATION,
                                    "analytic rgl guess needs --param q=...")
                coeffs, k0, c0 = profiles.rgl_analytic(params["q"],
                                                       m_f=args.modes)
            elif model_id == "nagumo":
                coeffs, k0, c0 = profiles.nagumo_guess(
                    params["alpha"], amplitude=params.get("amplitude", 0.1),
                    m_f=args.modes, detune=params.get("detune", 0.95))
            else:
                raise _CliError(EXIT_VALIDATION,
                                f"no analytic wave family for {model_id}; "
                                "use --guess file:PATH")
        except KeyError as exc:
            raise _CliError(EXIT_VALIDATION, f"missing --param {exc}")
        except ModelParameterError as exc:
            raise _CliError(EXIT_VALIDATION, str(exc))
    elif args.guess.startswith("file:"):
        guess_path = args.guess[5:]
        guess_prof = _load_profile_checked(guess_path)
        manifest.add_input(guess_path)
        coeffs = _resize_coeffs(guess_prof.coeffs, args.modes)
        k0, c0 = guess_prof.k, guess_prof.c
    else:
        raise _CliError(EXIT_USAGE,
                        f"--guess must be 'analytic' or 'file:PATH', "
                        f"got {args.guess!r}")

    try:
        prof = profiles.solve_profile(model, coeffs, k0, c0,
                                      solve_for=args.solve_for, tol=args.tol)
    except ProfileConvergenceError as exc:
        hist = ", ".join(f"{r:.3e}" for r in exc.history)
        print(f"solver failed: {exc}\nresidual history: [{hist}]",
              file=sys.stderr)
        return EXIT_SOLVER

    profiles.save_profile(prof, out_path)
    manifest.counts["newton_iterations"] = len(
        prof.info.get("newton_residuals", []))
    manifest.add_output(out_dir, out_path)
    manifest.write(out_dir)
    print(f"converged: residual {prof.residual_norm:.3e}, "
          f"k = {prof.k:.12g}, c = {prof.c:.12g}, "
          f"amplitude {prof.amplitude():.12g} -> {out_path}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# spectrum

def cmd_spectrum(args, argv):
    if args.scan < 8:
        raise _CliError(EXIT_USAGE, f"--scan must be >= 8, got {args.scan}")
    if not 0.0 < args.xi_max <= np.pi:
        raise _CliError(EXIT_USAGE, "--xi-max must lie in (0, pi]")
    prof = _load_profile_checked(args.profile)
    out_dir = _ensure_dir(args.out_dir)
    manifest = _Manifest("spectrum", argv, {
        "profile": str(args.profile), "scan": args.scan,
        "xi_max": args.xi_max, "out_dir": str(out_dir)})
    manifest.add_input(args.profile)

    report = bloch.verify_diffusive_stability(prof, scan=args.scan,
                                              xi_fit=args.xi_max)

    ells = fourier.modes(prof.m_f)
    that = bloch.reaction_coeffs(prof, 2 * prof.m_f)
    walker = bloch._BranchWalker(prof, ells, that)
    xis = np.unique(np.concatenate(
        [np.linspace(-np.pi, np.pi, args.scan, endpoint=False), [0.0]]))
    rows = []
    for xi in xis:
        lam = bloch.bloch_spectrum(bloch.assemble_bloch(prof, xi, ells=ells,
                                                        that=that))
        try:
            crit = complex(walker.mode_at(xi).lam)
        except BranchTrackingError:
            crit = None
        tagged = None
        if crit is not None:
            tagged = int(np.argmin(np.abs(lam - crit)))
        for idx, l in enumerate(lam):
            tag = "critical" if idx == tagged else "bulk"
            rows.append((_fmt(xi), _fmt(l.real), _fmt(l.imag), tag))

    csv_path = out_dir / "spectrum.csv"
    _write_csv(csv_path, ("xi", "re_lambda", "im_lambda", "branch_tag"), rows)
    report_path = out_dir / "stability_report.json"
    _write_json(report_path, {
        "schema_version": _SCHEMA_VERSIONS["stability_report"],
        "verdict": report.verdict,
        "conditions": {
            "negative_spectrum": report.condition_negative_spectrum,
            "quadratic_bound": report.condition_quadratic_bound,
            "simple_zero": report.condition_simple_zero,
        },
        "theta": report.theta,
        "a": report.curve.a,
        "d": report.curve.d,
        "d_second_diff": report.curve.d_second_diff,
        "curve_fit_residual": report.curve.fit_residual,
        "xi_1": report.xi_1,
        "delta_1": report.delta_1,
        "delta_0": {_fmt(k): v for k, v in report.delta_0.items()},
        "zero_simplicity": report.zero_simplicity,
        "max_nonzero_real": report.max_nonzero_real,
        "failures": report.failures,
        "tolerances": {"tol_zero": report.tol_zero, "scan": report.scan,
                       "m_f": report.m_f, "xi_fit": args.xi_max},
    })
    manifest.counts["scan_points"] = int(xis.size)
    manifest.add_output(out_dir, csv_path)
    manifest.add_output(out_dir, report_path)
    manifest.write(out_dir)
    print(f"verdict={'true' if report.verdict else 'false'} "
          f"theta={report.theta:.6g} a={report.curve.a:.3e} "
          f"d={report.curve.d:.6g} xi_1={report.xi_1:.6g} "
          f"delta_1={report.delta_1:.6g}")
    if not report.verdict:
        for line in report.failures:
            print(f"  failed: {line}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# gap

def cmd_gap(args, argv):
    n_values = _parse_int_list(args.N, "--N")
    prof = _load_profile_checked(args.profile)
    records = []
    for n in n_values:
        sub = bloch.subharmonic_spectrum(prof, n)
        records.append({"N": n, "delta_N": sub.delta,
                        "attaining_xi": sub.attaining_xi,
                        "zero_defect": sub.zero_defect})
    print("N,delta_N,attaining_xi")
    for rec in records:
        print(f"{rec['N']},{_fmt(rec['delta_N'])},{_fmt(rec['attaining_xi'])}")

    if args.out_dir is not None:
        out_dir = _ensure_dir(args.out_dir)
        manifest = _Manifest("gap", argv, {
            "profile": str(args.profile), "N": n_values,
            "out_dir": str(out_dir)})
        manifest.add_input(args.profile)
        csv_path = out_dir / "gaps.csv"
        _write_csv(csv_path, ("N", "delta_N", "attaining_xi"),
                   [(str(r["N"]), _fmt(r["delta_N"]), _fmt(r["attaining_xi"]))
                    for r in records])
        json_path = out_dir / "gap_report.json"
        _write_json(json_path, {
            "schema_version": _SCHEMA_VERSIONS["gap_report"],
            "records": records})
        manifest.add_output(out_dir, csv_path)
        manifest.add_output(out_dir, json_path)
        manifest.write(out_dir)
    return EXIT_OK


# ---------------------------------------------------------------------------
# linear decay

def cmd_linear_decay(args, argv):
    n_values = _parse_int_list(args.N, "--N")
    if args.l < 0 or args.m < 0:
        raise _CliError(EXIT_USAGE, "--l and --m must be >= 0")
    if args.samples < 4:
        raise _CliError(EXIT_USAGE, "--samples must be >= 4")
    if args.tmax <= 10.0:
        raise _CliError(
            EXIT_VALIDATION,
            f"horizon --tmax {args.tmax} is shorter than the fit window, "
            "which starts at t = 10; increase --tmax (the window is "
            "[10, N^2/10])")
    prof = _load_profile_checked(args.profile)
    out_dir = _ensure_dir(args.out_dir)
    manifest = _Manifest("linear-decay", argv, {
        "profile": str(args.profile), "N": n_values, "tmax": args.tmax,
        "samples": args.samples, "l": args.l, "m": args.m, "seed": args.seed,
        "out_dir": str(out_dir)})
    manifest.add_input(args.profile)

    times = np.geomspace(0.1, args.tmax, args.samples)
    rows = []
    fits = []
    for n in n_values:
        engine = semigroup.SemigroupEngine(prof, n)
        v = evolve.random_perturbation(n, engine.m_x, prof.n, args.seed, 1.0,
                                       normalize="l1")
        measures = {
            part: semigroup.measure_decay(engine, v, times, part=part,
                                          l=args.l, m=args.m)
            for part in ("total", "mean", "sp", "stilde")
        }
        for i, t in enumerate(times):
            rows.append((str(n), _fmt(t),
                         _fmt(measures["total"].norms[i]),
                         _fmt(measures["mean"].norms[i]),
                         _fmt(measures["sp"].norms[i]),
                         _fmt(measures["stilde"].norms[i]),
                         str(args.l), str(args.m)))
        fits.append({"N": n, "parts": {
            part: {
                "claimed_exponent": meas.claimed_exponent,
                "fitted_exponent": meas.fitted_exponent,
                "attained_constant": meas.attained_constant,
                "reference_norm": meas.reference_norm,
                "super_polynomial": meas.super_polynomial,
            } for part, meas in measures.items()}})

    csv_path = out_dir / "decay.csv"
    _write_csv(csv_path, ("N", "t", "norm_total", "norm_mean_phase",
                          "norm_sp", "norm_stilde", "l", "m"), rows)

    uniformity = {}
    for part in ("sp", "stilde"):
        consts = [f["parts"][part]["attained_constant"] for f in fits]
        finite = [c for c in consts if np.isfinite(c) and c > 0]
        uniformity[part] = (max(finite) / min(finite)) if finite else None
    fit_path = out_dir / "decay_fit.json"
    _write_json(fit_path, {
        "schema_version": _SCHEMA_VERSIONS["decay_fit"],
        "l": args.l, "m": args.m, "seed": args.seed,
        "fit_window": "[10, N^2/10] (whole series when underpopulated)",
        "fits": fits,
        "constant_spread": uniformity,
    })
    manifest.counts["time_samples"] = int(times.size)
    manifest.add_output(out_dir, csv_path)
    manifest.add_output(out_dir, fit_path)
    manifest.write(out_dir)
    for f in fits:
        sp = f["parts"]["sp"]
        st = f["parts"]["stilde"]
        print(f"N={f['N']}: sp slope {sp['fitted_exponent']:+.3f} "
              f"(claimed {sp['claimed_exponent']:+.2f}), "
              f"stilde slope {st['fitted_exponent']:+.3f} "
              f"(claimed {st['claimed_exponent']:+.2f})")
    return EXIT_OK


# ---------------------------------------------------------------------------
# sum bounds

def cmd_sum_bounds(args, argv):
    if args.d <= 0.0:
        raise _CliError(EXIT_USAGE, f"--d must be positive, got {args.d}")
    try:
        r_values = [float(tok) for tok in args.r.split(",") if tok.strip()]
    except ValueError:
        raise _CliError(EXIT_USAGE, f"--r expects numbers, got {args.r!r}")
    if not r_values or any(r < 0 for r in r_values):
        raise _CliError(EXIT_USAGE, "--r entries must be >= 0")
    n_values = _parse_int_list(args.N, "--N")
    out_dir = _ensure_dir(args.out_dir)
    manifest = _Manifest("sum-bounds", argv, {
        "d": args.d, "r": r_values, "N": n_values, "tmax": args.tmax,
        "out_dir": str(out_dir)})

    times = np.unique(np.concatenate(
        [[0.0], np.geomspace(1e-2, args.tmax, 240)]))
    rows = []
    for n in n_values:
        for r in r_values:
            sums = semigroup.lattice_sum(n, r, times, d=args.d)
            ratios = sums * (1.0 + times) ** (r + 0.5)
            for t, s, ratio in zip(times, sums, ratios):
                rows.append((str(n), _fmt(r), _fmt(t), _fmt(s), _fmt(ratio)))
    csv_path = out_dir / "sums.csv"
    _write_csv(csv_path, ("N", "r", "t", "sum", "envelope_ratio"), rows)

    report_rows = semigroup.sum_bound_report(n_values, r_values, times,
                                             d=args.d)
    global_c = max(row.attained_constant for row in report_rows)
    probes = {}
    for n in n_values:
        probe = semigroup.crossover_probe(n, d=args.d, r=0)
        probes[str(n)] = {"t_star": probe.t_star,
                          "late_rate": probe.late_rate,
                          "predicted_rate": probe.predicted_rate}
    summary_path = out_dir / "sum_summary.json"
    _write_json(summary_path, {
        "schema_version": _SCHEMA_VERSIONS["sum_summary"],
        "d": args.d,
        "per_pair": [{"N": row.n_period, "r": row.r,
                      "C_min": row.attained_constant,
                      "sup_time": row.sup_time} for row in report_rows],
        "C_global": global_c,
        "crossover": probes,
    })
    manifest.counts["time_samples"] = int(times.size)
    manifest.add_output(out_dir, csv_path)
    manifest.add_output(out_dir, summary_path)
    manifest.write(out_dir)
    print(f"global C = {global_c:.6g} over N in {n_values}, r in {r_values}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# simulate

def _load_config(path):
    try:
        with open(path, encoding="utf-8") as fh:
            return json.load(fh)
    except OSError as exc:
        raise _CliError(EXIT_IO, f"cannot read config {path}: {exc}")
    except json.JSONDecodeError as exc:
        raise _CliError(EXIT_IO, f"config {path} is not valid JSON: {exc}")


def _validated_simulation_config(raw, profile_flag, extract_flag):
    """Fill defaults and validate the experiment configuration document."""
    cfg = dict(raw)
    pert = dict(cfg.get("perturbation") or {})
    extr = dict(cfg.get("extraction") or {})
    snap = dict(cfg.get("snapshot") or {})

    def bad(msg):
        raise _CliError(EXIT_VALIDATION, f"config: {msg}")

    known_top = {"model", "profile", "N", "m_x", "dt", "t_max", "scheme", "K",
                 "snapshot", "perturbation", "extraction", "output_dir"}
    for key in cfg:
        if key not in known_top:
            bad(f"unknown key {key!r}")
    for section, known in (("perturbation", {"shape", "amplitude", "seed",
                                             "band", "normalize"}),
                           ("extraction", {"mode", "cutoff", "chi", "tol"}),
                           ("snapshot", {"dense_until", "stride", "ratio"})):
        for key in dict(cfg.get(section) or {}):
            if key not in known:
                bad(f"unknown key {key!r} in {section!r}")

    profile_path = profile_flag or cfg.get("profile")
    if not profile_path:
        bad("no profile path (config key 'profile' or --profile)")
    out_dir = cfg.get("output_dir")
    if not out_dir:
        bad("missing key 'output_dir'")

    resolved = {
        "model": cfg.get("model"),
        "profile": str(profile_path),
        "N": cfg.get("N"),
        "m_x": cfg.get("m_x"),
        "dt": cfg.get("dt", 0.01),
        "t_max": cfg.get("t_max"),
        "scheme": cfg.get("scheme", "imex-cn"),
        "K": cfg.get("K", 3),
        "snapshot": {"dense_until": snap.get("dense_until", 10.0),
                     "stride": snap.get("stride", 0.25),
                     "ratio": snap.get("ratio", 1.15)},
        "perturbation": {"shape": pert.get("shape", "fourier"),
                         "amplitude": pert.get("amplitude", 1e-2),
                         "seed": pert.get("seed", 0),
                         "band": pert.get("band"),
                         "normalize": pert.get("normalize", "l1_sobolev")},
        "extraction": {"mode": extract_flag or extr.get("mode", "projection"),
                       "cutoff": extr.get("cutoff"),
                       "chi": extr.get("chi", [0.5, 1.0]),
                       "tol": extr.get("tol", 1e-8)},
        "output_dir": str(out_dir),
    }

    if not isinstance(resolved["N"], int) or resolved["N"] < 1:
        bad("'N' must be a positive integer")
    if resolved["m_x"] is not None and (not isinstance(resolved["m_x"], int)
                                        or resolved["m_x"] < 3):
        bad("'m_x' must be an integer >= 3")
    if not (isinstance(resolved["dt"], (int, float)) and resolved["dt"] > 0):
        bad("'dt' must be positive")
    if not (isinstance(resolved["t_max"], (int, float))
            and resolved["t_max"] > 0):
        bad("'t_max' must be positive")
    if resolved["t_max"] <= 10.0:
        bad("'t_max' must exceed 10 so the phase limit has a fit window")
    if resolved["scheme"] not in evolve._SCHEMES:
        bad(f"unknown scheme {resolved['scheme']!r} "
            f"(have {sorted(evolve._SCHEMES)})")
    if not isinstance(resolved["K"], int) or resolved["K"] < 1:
        bad("'K' must be an integer >= 1")
    p = resolved["perturbation"]
    if p["shape"] not in ("fourier", "bump"):
        bad(f"perturbation shape must be 'fourier' or 'bump', got {p['shape']!r}")
    if not (isinstance(p["amplitude"], (int, float)) and p["amplitude"] >= 0):
        bad("perturbation amplitude must be >= 0")
    if not isinstance(p["seed"], int):
        bad("perturbation seed must be an integer")
    e = resolved["extraction"]
    if e["mode"] not in ("projection", "duhamel", "both"):
        bad(f"extraction mode must be projection/duhamel/both, got {e['mode']!r}")
    chi = e["chi"]
    if (not isinstance(chi, (list, tuple)) or len(chi) != 2
            or not chi[0] < chi[1]):
        bad("extraction chi must be an increasing pair [lo, hi]")
    s = resolved["snapshot"]
    if not (s["stride"] > 0 and s["ratio"] > 1.0 and s["dense_until"] >= 0):
        bad("snapshot spec needs stride > 0, ratio > 1, dense_until >= 0")
    return resolved


def _slope_or_none(times, values, t_lo=10.0, t_hi=None):
    try:
        return evolve.envelope_slope(times, values, t_lo=t_lo, t_hi=t_hi)
    except ValueError:
        return None


def cmd_simulate(args, argv):
    raw_cfg = _load_config(args.config)
    cfg = _validated_simulation_config(raw_cfg, args.profile, args.extract)
    prof = _load_profile_checked(cfg["profile"])
    if cfg["model"] is not None and cfg["model"].lower() not in (
            prof.model.id, "realgl" if prof.model.id == "rgl" else prof.model.id):
        raise _CliError(EXIT_VALIDATION,
                        f"config model {cfg['model']!r} does not match the "
                        f"profile's model {prof.model.id!r}")

    dt_limit = evolve.stable_dt_limit(prof)
    if cfg["dt"] > dt_limit:
        raise _CliError(EXIT_VALIDATION,
                        f"dt = {cfg['dt']} exceeds the explicit-term stability "
                        f"estimate 0.5/rho(Df/k) = {dt_limit:.4g}")

    out_dir = _ensure_dir(cfg["output_dir"])
    manifest = _Manifest("simulate", argv, cfg)
    manifest.add_input(cfg["profile"])
    manifest.add_input(args.config)

    n_period = cfg["N"]
    stability = bloch.verify_diffusive_stability(prof)
    if not stability.verdict:
        raise _CliError(EXIT_VALIDATION,
                        "profile fails the spectral stability check; "
                        f"failures: {stability.failures}")
    if cfg["extraction"]["cutoff"] is not None:
        cutoff = semigroup.CutoffSpec(float(cfg["extraction"]["cutoff"]))
    else:
        cutoff = semigroup.default_cutoff(prof, stability=stability)
    engine = semigroup.SemigroupEngine(prof, n_period, m_x=cfg["m_x"],
                                       cutoff=cutoff, stability=stability)

    snap = cfg["snapshot"]
    snapshot_times = evolve.default_snapshot_times(
        cfg["t_max"], dense_until=snap["dense_until"],
        dense_spacing=snap["stride"], geometric_ratio=snap["ratio"])
    pert = cfg["perturbation"]
    try:
        result = evolve.run_experiment(
            prof, n_period, engine, t_max=cfg["t_max"], dt=cfg["dt"],
            scheme=cfg["scheme"], seed=pert["seed"],
            amplitude=pert["amplitude"], band=pert["band"],
            kind=pert["shape"], normalize=pert["normalize"], k_sob=cfg["K"],
            snapshot_times=snapshot_times,
            chi_interval=tuple(cfg["extraction"]["chi"]))
    except BlowUpError as exc:
        print(f"blow-up: {exc}", file=sys.stderr)
        manifest.counts["blow_up_time"] = exc.t
        manifest.write(out_dir)
        return EXIT_BLOWUP

    times = result.times
    T = times.size
    k_sob = cfg["K"]

    # per-snapshot extraction; failures are recorded, not fatal
    frames = []
    warp_ok = np.ones(T, dtype=bool)
    for i in range(T):
        try:
            frames.append(evolve.modulation_frame(result, i))
        except PhaseWarpError:
            frames.append(None)
            warp_ok[i] = False
    n_failed = int((~warp_ok).sum())

    psi_vals = np.full((T, result.m_x * n_period), np.nan)
    norm_cols = {name: np.full(T, np.nan) for name in
                 ("v_h", "psi_x_h", "psi_t_h", "v_l2", "psi_x_l2", "psi_t_l2")}
    for i, frame in enumerate(frames):
        if frame is None:
            continue
        psi_vals[i] = frame.psi.values[:, 0]
        psi_x = grids.derivative(frame.psi)
        norm_cols["v_h"][i] = grids.norm_h(frame.v, k_sob)
        norm_cols["psi_x_h"][i] = grids.norm_h(psi_x, k_sob + 1)
        norm_cols["v_l2"][i] = grids.norm_l2(frame.v)
        norm_cols["psi_x_l2"][i] = grids.norm_l2(psi_x)
    gamma = result.gamma
    gamma_t = evolve.time_derivative(times, gamma) if T > 1 else np.zeros(T)
    if T > 1:
        psi_t_vals = evolve.time_derivative(times, np.nan_to_num(psi_vals))
        for i in range(T):
            if warp_ok[i]:
                gf = grids.GridFunction(n_period, psi_t_vals[i][:, None])
                norm_cols["psi_t_h"][i] = grids.norm_h(gf, k_sob)
                norm_cols["psi_t_l2"][i] = grids.norm_l2(gf)

    trace_path = out_dir / "trace.csv"
    _write_csv(
        trace_path,
        ("t", "gamma", "gamma_t", "norm_v_h", "norm_psi_x_h", "norm_psi_t_h",
         "norm_v_l2", "norm_psi_x_l2", "norm_psi_t_l2", "warp_ok"),
        [(_fmt(times[i]), _fmt(gamma[i]), _fmt(gamma_t[i]),
          _fmt(norm_cols["v_h"][i]), _fmt(norm_cols["psi_x_h"][i]),
          _fmt(norm_cols["psi_t_h"][i]), _fmt(norm_cols["v_l2"][i]),
          _fmt(norm_cols["psi_x_l2"][i]), _fmt(norm_cols["psi_t_l2"][i]),
          str(int(warp_ok[i]))) for i in range(T)])
    manifest.add_output(out_dir, trace_path)

    snap_dir = _ensure_dir(out_dir / "snapshots")
    for i in range(T):
        path = snap_dir / f"snap_{i:04d}.bin"
        evolve.write_snapshot(path, result.snapshots[i], times[i])
        manifest.add_output(out_dir, path)

    # diagnostics on the clean prefix of the trace
    report = {
        "schema_version": _SCHEMA_VERSIONS["experiment_report"],
        "n_snapshots": T,
        "extraction_failures": n_failed,
        "scheme": cfg["scheme"],
        "E0": pert["amplitude"],
    }
    usable = warp_ok.all()
    delta_n = bloch.subharmonic_spectrum(prof, n_period).delta
    report["delta_N"] = delta_n

    phase = evolve.phase_convergence(result) if T > 3 else None
    if phase is not None:
        anchor_tol = 10.0 * pert["amplitude"]
        denom = max(abs(phase.anchor), 1e-300)
        rel = abs(phase.gamma_inf - phase.anchor) / denom
        report["phase"] = {
            "gamma_inf": phase.gamma_inf,
            "gamma_inf_fit": phase.gamma_inf_fit,
            "tail_power": None if np.isnan(phase.tail_power)
            else phase.tail_power,
            "anchor": phase.anchor,
            "sigma_inf": phase.sigma_inf,
            "best_shift": phase.best_shift,
            "shift_misfit": phase.shift_misfit,
            "unshifted_misfit": phase.unshifted_misfit,
            "anchor_rel_err": rel,
            "tolerance": anchor_tol,
            "pass": bool(rel <= anchor_tol) if pert["amplitude"] > 0
            else bool(abs(phase.gamma_inf - phase.anchor) < 1e-12),
        }

    if usable and T > 3:
        trace_data = evolve.ModulationTraceData(
            k_sob=k_sob, times=times, gamma=gamma, gamma_t=gamma_t,
            psi_vals=psi_vals,
            psi_t_vals=psi_t_vals if T > 1 else np.zeros_like(psi_vals),
            v_vals=np.stack([f.v.values for f in frames]),
            v_h=norm_cols["v_h"], psi_x_h=norm_cols["psi_x_h"],
            psi_t_h=norm_cols["psi_t_h"], v_l2=norm_cols["v_l2"],
            psi_x_l2=norm_cols["psi_x_l2"], psi_t_l2=norm_cols["psi_t_l2"])
        zeta = evolve.zeta_diagnostic(result, k_sob=k_sob, trace=trace_data)
        i10 = int(np.searchsorted(times, 10.0))
        zeta10 = float(zeta.zeta[min(i10, T - 1)])
        zeta_end = float(zeta.zeta[-1])
        report["zeta"] = {
            "zeta_10": zeta10, "zeta_end": zeta_end,
            "bound_factor": 4.0,
            "pass": bool(zeta_end <= 4.0 * zeta10 + 1e-300),
        }
        damping = evolve.damping_check(result, k_sob=k_sob, delta_n=delta_n,
                                       trace=trace_data)
        report["damping"] = {
            "best_theta": damping.best_theta,
            "best_constant": damping.best_constant,
            "violations": damping.violations,
            "theta_half_gap": delta_n / 2.0,
            "pass": bool(np.isfinite(damping.best_constant)
                         and damping.violations == 0),
        }

        gamma_inf = phase.gamma_inf if phase is not None else gamma[-1]
        shifted = evolve.translated_profile_data(prof, n_period, result.m_x,
                                                 gamma_inf / n_period)
        h1 = np.array([grids.norm_h(grids.GridFunction(
            n_period, result.snapshots[i].values - shifted.values), 1)
            for i in range(T)])
        knee = None
        try:
            knee = evolve.crossover_fit(times, h1)
        except (ValueError, np.linalg.LinAlgError):
            pass
        if knee is not None:
            lo, hi = 0.5 * delta_n, 1.1 * delta_n
            report["crossover"] = {
                "t_knee": knee.t_knee, "power": knee.power,
                "rate": knee.rate, "window": [lo, hi],
                "pass": bool(lo <= knee.rate <= hi),
            }
        t_knee = knee.t_knee if knee is not None else None
        slope_v = _slope_or_none(times, norm_cols["v_h"], t_hi=t_knee)
        slope_g = _slope_or_none(times, np.abs(gamma_t))
        report["fits"] = {
            "v_h_slope_pre_knee": slope_v,
            "v_h_threshold": -0.6,
            "v_h_pass": None if slope_v is None else bool(slope_v <= -0.6),
            "gamma_t_slope": slope_g,
            "gamma_t_threshold": -1.2,
            "gamma_t_pass": None if slope_g is None else bool(slope_g <= -1.2),
        }

    duhamel_exit = None
    if cfg["extraction"]["mode"] in ("duhamel", "both"):
        try:
            du = evolve.extract_modulation_duhamel(
                result, tol=cfg["extraction"]["tol"])
        except ExtractionDivergenceError as exc:
            print(f"extraction divergence: {exc}", file=sys.stderr)
            manifest.counts["duhamel_sweeps"] = exc.iterations
            duhamel_exit = EXIT_DIVERGENCE
            du = None
        if du is not None:
            du_path = out_dir / "trace_duhamel.csv"
            psi_l2 = np.sqrt(np.sum(du.psi_vals ** 2, axis=1) / result.m_x)
            v_l2 = np.sqrt(np.sum(du.v_vals ** 2, axis=(1, 2)) / result.m_x)
            _write_csv(du_path, ("t", "gamma", "norm_psi_l2", "norm_v_l2"),
                       [(_fmt(times[i]), _fmt(du.gamma[i]), _fmt(psi_l2[i]),
                         _fmt(v_l2[i])) for i in range(T)])
            manifest.add_output(out_dir, du_path)
            manifest.counts["duhamel_sweeps"] = du.iterations
            report["duhamel"] = {
                "iterations": du.iterations,
                "update_norms": list(du.update_norms),
                "tol": cfg["extraction"]["tol"],
                "v2_defect": du.v2_defect,
            }
            if cfg["extraction"]["mode"] == "both" and usable:
                proj_psi = np.nan_to_num(psi_vals)
                dg = float(np.max(np.abs(du.gamma - gamma)))
                dpsi = float(np.max(np.sqrt(np.sum(
                    (du.psi_vals - proj_psi) ** 2, axis=1) / result.m_x)))
                denom = (float(np.max(np.abs(gamma)))
                         + float(np.max(np.sqrt(np.sum(proj_psi ** 2, axis=1)
                                                / result.m_x))))
                agreement = (dg + dpsi) / max(denom, 1e-300)
                report["route_agreement"] = {
                    "relative": agreement, "tolerance": 1e-3,
                    "pass": bool(agreement <= 1e-3),
                }

    report_path = out_dir / "report.json"
    _write_json(report_path, report)
    manifest.add_output(out_dir, report_path)
    manifest.counts["time_steps"] = result.n_steps
    manifest.counts["snapshots"] = T
    manifest.write(out_dir)

    flags = {key: val.get("pass") for key, val in report.items()
             if isinstance(val, dict) and "pass" in val}
    print(f"simulated {cfg['t_max']:g} time units ({result.n_steps} steps), "
          f"{T} snapshots -> {out_dir}")
    print("checks: " + ", ".join(f"{k}={'n/a' if v is None else v}"
                                 for k, v in sorted(flags.items())))
    if duhamel_exit is not None:
        return duhamel_exit
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser

def _build_parser():
    parser = _Parser(prog="wavetrain",
                     description="Periodic wave trains of reaction-diffusion "
                                 "systems: profiles, spectra, and nonlinear "
                                 "modulation experiments.")
    parser.add_argument("--version", action="version",
                        version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND")

    p = sub.add_parser("profile", help="solve a wave-train profile",
                       parents=[], add_help=True)
    p.add_argument("--model", required=True, help="model id (rgl, nagumo, ...)")
    p.add_argument("--param", action="append", metavar="KEY=VAL",
                   help="model/guess parameter (repeatable)")
    p.add_argument("--modes", type=int, default=32, help="Fourier truncation")
    p.add_argument("--guess", default="analytic",
                   help="'analytic' or 'file:PATH'")
    p.add_argument("--solve-for", choices=("c", "k"), default="c",
                   dest="solve_for")
    p.add_argument("--tol", type=float, default=1e-10)
    p.add_argument("--out", default="profile.json")
    p.set_defaults(func=cmd_profile)

    p = sub.add_parser("spectrum", help="Bloch spectrum and stability verdict")
    p.add_argument("--profile", required=True)
    p.add_argument("--scan", type=int, default=256)
    p.add_argument("--xi-max", type=float, default=0.25, dest="xi_max")
    p.add_argument("--out-dir", default=".", dest="out_dir")
    p.set_defaults(func=cmd_spectrum)

    p = sub.add_parser("gap", help="subharmonic spectral gaps delta_N")
    p.add_argument("--profile", required=True)
    p.add_argument("--N", required=True, help="single N or comma list")
    p.add_argument("--out-dir", default=None, dest="out_dir")
    p.set_defaults(func=cmd_gap)

    p = sub.add_parser("linear-decay",
                       help="decay of semigroup parts for random data")
    p.add_argument("--profile", required=True)
    p.add_argument("--N", required=True, help="comma list of periods")
    p.add_argument("--tmax", type=float, default=500.0)
    p.add_argument("--samples", type=int, default=60)
    p.add_argument("--l", type=int, default=0, help="spatial derivative order")
    p.add_argument("--m", type=int, default=0, help="temporal derivative order")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out-dir", default=".", dest="out_dir")
    p.set_defaults(func=cmd_linear_decay)

    p = sub.add_parser("sum-bounds",
                       help="polynomial bounds for lattice heat sums")
    p.add_argument("--d", type=float, required=True)
    p.add_argument("--r", default="0,1,2", help="comma list of weights")
    p.add_argument("--N", default="4,8,16,32,64", help="comma list of periods")
    p.add_argument("--tmax", type=float, default=1e4)
    p.add_argument("--out-dir", default=".", dest="out_dir")
    p.set_defaults(func=cmd_sum_bounds)

    p = sub.add_parser("simulate", help="nonlinear experiment with extraction")
    p.add_argument("--profile", default=None,
                   help="profile file (defaults to the config's)")
    p.add_argument("--config", required=True, help="experiment config JSON")
    p.add_argument("--extract", choices=("projection", "duhamel", "both"),
                   default=None, help="override the config extraction mode")
    p.set_defaults(func=cmd_simulate)

    return parser


def main(argv=None):
    argv = sys.argv[1:] if argv is None else list(argv)
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
        if getattr(args, "func", None) is None:
            parser.error("a command is required")
        return args.func(args, argv)
    except _CliError as exc:
        print(str(exc), file=sys.stderr)
        return exc.code
    except (ModelParameterError, AdmissibilityError) as exc:
        print(f"validation error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except BlowUpError as exc:
        print(f"blow-up: {exc}", file=sys.stderr)
        return EXIT_BLOWUP
    except ExtractionDivergenceError as exc:
        print(f"extraction divergence: {exc}", file=sys.stderr)
        return EXIT_DIVERGENCE


if __name__ == "__main__":
    sys.exit(main())
