"""Command-line interface: files, exit codes, and determinism."""

import json
import os

import numpy as np
import pytest

from wavetrain.cli import main

GAP_1 = 1.515684575117475
GAP_4 = 0.094520930738


@pytest.fixture(scope="module")
def profile_file(tmp_path_factory):
    path = tmp_path_factory.mktemp("prof") / "q03.json"
    code = main(["profile", "--model", "rgl", "--param", "q=0.3",
                 "--out", str(path)])
    assert code == 0
    return path


def read_json(path):
    with open(path) as fh:
        return json.load(fh)


def test_profile_writes_a_manifest(profile_file):
    manifest = profile_file.parent / "manifest.json"
    assert manifest.exists()
    data = read_json(manifest)
    assert data["command"] == "profile"
    assert str(profile_file.name) in " ".join(data["argv"])
    assert "schema_version" in data


def test_profile_file_round_trips(profile_file):
    from wavetrain.profiles import load_profile
    prof = load_profile(profile_file)
    assert prof.k == pytest.approx(0.3 / (2 * np.pi), rel=1e-12)
    assert prof.amplitude() == pytest.approx(np.sqrt(0.91), abs=1e-8)


def test_profile_unknown_model_is_a_usage_error(tmp_path):
    code = main(["profile", "--model", "nosuch", "--out",
                 str(tmp_path / "x.json")])
    assert code == 64


def test_profile_bad_param_syntax_is_a_usage_error(tmp_path):
    code = main(["profile", "--model", "rgl", "--param", "q", "--out",
                 str(tmp_path / "x.json")])
    assert code == 64


def test_profile_inadmissible_wavenumber_is_a_validation_error(tmp_path, capsys):
    code = main(["profile", "--model", "rgl", "--param", "q=1.5",
                 "--out", str(tmp_path / "x.json")])
    assert code == 65
    assert "q" in capsys.readouterr().err


def test_spectrum_outputs(profile_file, tmp_path, capsys):
    out = tmp_path / "spec"
    code = main(["spectrum", "--profile", str(profile_file), "--scan", "64",
                 "--out-dir", str(out)])
    assert code == 0
    report = read_json(out / "stability_report.json")
    assert report["verdict"] is True
    assert report["d"] == pytest.approx(0.0383, rel=1e-2)
    assert report["conditions"]["quadratic_bound"] is True
    header = (out / "spectrum.csv").read_text().splitlines()[0]
    assert header.startswith("xi,")
    assert "branch" in header


def test_spectrum_scan_too_small_is_a_usage_error(profile_file, tmp_path):
    code = main(["spectrum", "--profile", str(profile_file), "--scan", "4",
                 "--out-dir", str(tmp_path / "s")])
    assert code == 64


def test_missing_profile_file_is_an_input_error(tmp_path):
    code = main(["spectrum", "--profile", str(tmp_path / "absent.json"),
                 "--out-dir", str(tmp_path / "s")])
    assert code == 66


def test_gap_table_on_stdout(profile_file, capsys):
    code = main(["gap", "--profile", str(profile_file), "--N", "1,4"])
    assert code == 0
    lines = capsys.readouterr().out.strip().splitlines()
    assert lines[0].startswith("N,")
    table = {int(row.split(",")[0]): float(row.split(",")[1])
             for row in lines[1:]}
    assert table[1] == pytest.approx(GAP_1, rel=1e-6)
    assert table[4] == pytest.approx(GAP_4, rel=1e-6)


def test_gap_files_when_out_dir_given(profile_file, tmp_path):
    out = tmp_path / "gaps"
    code = main(["gap", "--profile", str(profile_file), "--N", "2,4",
                 "--out-dir", str(out)])
    assert code == 0
    assert (out / "gaps.csv").exists()
    report = read_json(out / "gap_report.json")
    assert {rec["N"] for rec in report["records"]} == {2, 4}


def test_linear_decay_run(profile_file, tmp_path):
    out = tmp_path / "dec"
    code = main(["linear-decay", "--profile", str(profile_file), "--N", "8",
                 "--tmax", "60", "--samples", "20", "--out-dir", str(out)])
    assert code == 0
    header = (out / "decay.csv").read_text().splitlines()[0]
    for col in ("t", "norm_sp", "norm_stilde"):
        assert col in header
    fit = read_json(out / "decay_fit.json")
    assert [rec["N"] for rec in fit["fits"]] == [8]


def test_linear_decay_short_horizon_is_a_validation_error(profile_file,
                                                          tmp_path, capsys):
    code = main(["linear-decay", "--profile", str(profile_file), "--N", "8",
                 "--tmax", "5", "--out-dir", str(tmp_path / "d")])
    assert code == 65
    assert "tmax" in capsys.readouterr().err


def test_sum_bounds_run(tmp_path):
    out = tmp_path / "sums"
    code = main(["sum-bounds", "--d", "1.0", "--r", "0,1", "--N", "4,8",
                 "--tmax", "1e3", "--out-dir", str(out)])
    assert code == 0
    summary = read_json(out / "sum_summary.json")
    assert summary["C_global"] > 0
    assert len(summary["per_pair"]) == 4


def test_sum_bounds_rejects_nonpositive_d(tmp_path):
    code = main(["sum-bounds", "--d", "-2", "--out-dir", str(tmp_path / "s")])
    assert code == 64


def write_config(path, profile_file, out_dir, **overrides):
    config = {
        "model": "rgl",
        "profile": str(profile_file),
        "N": 4,
        "dt": 0.01,
        "t_max": 12.0,
        "scheme": "imex",
        "K": 3,
        "perturbation": {"shape": "fourier", "amplitude": 1e-4, "seed": 5},
        "extraction": {"mode": "projection"},
        "output_dir": str(out_dir),
    }
    config.update(overrides)
    path.write_text(json.dumps(config))
    return path


def test_simulate_run_and_outputs(profile_file, tmp_path):
    out = tmp_path / "sim"
    cfg = write_config(tmp_path / "cfg.json", profile_file, out)
    code = main(["simulate", "--config", str(cfg)])
    assert code == 0
    report = read_json(out / "report.json")
    assert report["E0"] == 1e-4
    assert "phase" in report and "zeta" in report and "delta_N" in report
    trace_lines = (out / "trace.csv").read_text().splitlines()
    assert trace_lines[0].startswith("t,gamma,gamma_t")
    snaps = sorted((out / "snapshots").iterdir())
    assert snaps and snaps[0].name.startswith("snap_")
    manifest = read_json(out / "manifest.json")
    assert sorted(manifest["outputs"])== manifest["outputs"]


def test_simulate_is_deterministic(profile_file, tmp_path):
    outs = []
    for tag in ("a", "b"):
        out = tmp_path / f"sim_{tag}"
        cfg = write_config(tmp_path / f"cfg_{tag}.json", profile_file, out)
        assert main(["simulate", "--config", str(cfg)]) == 0
        outs.append(out)
    for name in ("trace.csv", "report.json"):
        assert (outs[0] / name).read_bytes() == (outs[1] / name).read_bytes()
    snaps0 = sorted(os.listdir(outs[0] / "snapshots"))
    assert snaps0 == sorted(os.listdir(outs[1] / "snapshots"))
    for snap in snaps0:
        assert ((outs[0] / "snapshots" / snap).read_bytes()
                == (outs[1] / "snapshots" / snap).read_bytes())


def test_simulate_rejects_large_dt(profile_file, tmp_path, capsys):
    cfg = write_config(tmp_path / "cfg.json", profile_file, tmp_path / "o",
                       dt=0.2)
    code = main(["simulate", "--config", str(cfg)])
    assert code == 65
    assert "dt" in capsys.readouterr().err


def test_simulate_rejects_short_horizon(profile_file, tmp_path):
    cfg = write_config(tmp_path / "cfg.json", profile_file, tmp_path / "o",
                       t_max=8.0)
    assert main(["simulate", "--config", str(cfg)]) == 65


def test_simulate_rejects_unknown_config_keys(profile_file, tmp_path, capsys):
    cfg = write_config(tmp_path / "cfg.json", profile_file, tmp_path / "o",
                       typo_key=1)
    assert main(["simulate", "--config", str(cfg)]) == 65
    assert "typo_key" in capsys.readouterr().err


def test_simulate_blow_up_exit_code(profile_file, tmp_path):
    out = tmp_path / "boom"
    cfg = write_config(tmp_path / "cfg.json", profile_file, out)
    config = json.loads(cfg.read_text())
    config["perturbation"]["amplitude"] = 80.0
    config["perturbation"]["normalize"] = "sup"
    cfg.write_text(json.dumps(config))
    code = main(["simulate", "--config", str(cfg)])
    assert code == 70
    manifest = read_json(out / "manifest.json")
    assert manifest["step_counts"]["blow_up_time"] is not None


def test_simulate_divergent_extraction_exit_code(profile_file, tmp_path):
    out = tmp_path / "div"
    cfg = write_config(tmp_path / "cfg.json", profile_file, out)
    config = json.loads(cfg.read_text())
    config["perturbation"]["amplitude"] = 0.4
    config["perturbation"]["normalize"] = "sup"
    config["extraction"] = {"mode": "duhamel"}
    cfg.write_text(json.dumps(config))
    code = main(["simulate", "--config", str(cfg)])
    assert code == 71
    # the projection artifacts are still on disk
    assert (out / "trace.csv").exists()


def test_simulate_zero_amplitude_run(profile_file, tmp_path):
    out = tmp_path / "zero"
    cfg = write_config(tmp_path / "cfg.json", profile_file, out)
    config = json.loads(cfg.read_text())
    config["perturbation"]["amplitude"] = 0.0
    cfg.write_text(json.dumps(config))
    assert main(["simulate", "--config", str(cfg)]) == 0
    report = read_json(out / "report.json")
    assert report["phase"]["pass"] is True


def test_unreadable_config_is_an_input_error(tmp_path):
    code = main(["simulate", "--config", str(tmp_path / "missing.json")])
    assert code == 66


def test_version_flag(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["--version"])
    assert exc.value.code == 0
    assert "wavetrain" in capsys.readouterr().out
