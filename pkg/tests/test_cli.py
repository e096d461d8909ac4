import json
import math
from pathlib import Path

import pandas as pd
import pytest

from nvsim import main

SEQUENCES = Path(__file__).resolve().parent.parent / "sequences"


def _run(*argv):
    return main([str(a) for a in argv])


def _spectrum(path, *extra):
    return _run("spectrum", "--fmin", 2.5, "--fmax", 2.7, "--points", 5, "--shots", 40, "--out", path, *extra)


def test_spectrum_writes_csv_and_manifest(tmp_path):
    out = tmp_path / "spectrum.csv"
    assert _spectrum(out) == 0
    table = pd.read_csv(out)
    assert list(table.columns) == ["frequency_MHz", "flip_fraction", "stderr", "n_shots", "expected"]
    assert len(table) == 5
    assert (table["n_shots"] == 40).all()
    manifest = json.loads((tmp_path / "spectrum.manifest.json").read_text())
    assert manifest["command"] == "spectrum"
    assert manifest["n_shots"] == 40
    assert manifest["args"]["fmin"] == pytest.approx(2.5e6)


def test_quantities_with_units_on_the_command_line(tmp_path):
    out = tmp_path / "s.csv"
    assert _run("spectrum", "--fmin", "2500kHz", "--fmax", "2.7MHz", "--points", 3, "--shots", 10,
                "--duration", "20us", "--out", out) == 0
    assert pd.read_csv(out)["frequency_MHz"].tolist() == pytest.approx([2.5, 2.6, 2.7])


def test_zero_shots_is_a_usage_error(tmp_path):
    assert _spectrum(tmp_path / "s.csv", "--shots", 0) == 2


def test_inverted_range_is_a_usage_error(tmp_path):
    assert _run("spectrum", "--fmin", 3, "--fmax", 2, "--out", tmp_path / "s.csv") == 2


def test_argparse_errors_exit_with_two():
    with pytest.raises(SystemExit) as info:
        main(["spectrum", "--points", "many"])
    assert info.value.code == 2
    with pytest.raises(SystemExit) as info:
        main(["kinetics", "--power", "3 parsecs"])
    assert info.value.code == 2


def test_bad_config_is_a_usage_error(tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text('{"readout": {"fidelity": 2.0}}', encoding="utf-8")
    assert _run("--config", cfg, "rabi", "--points", 3, "--shots", 5, "--out", tmp_path / "r.csv") == 2


def test_parse_error_reports_line_and_column(tmp_path, capsys):
    seq = tmp_path / "broken.seq"
    seq.write_text('seq "b"\ninit nuclear m_I=1/2\nwait duration=3furlongs\nreadout\nend\n', encoding="utf-8")
    assert _run("run", seq, "--out", tmp_path / "b.csv") == 2
    assert "3:16:" in capsys.readouterr().err


def test_missing_program_file(tmp_path):
    assert _run("run", tmp_path / "absent.seq", "--out", tmp_path / "a.csv") == 2


def test_model_errors_exit_with_one(tmp_path, capsys):
    seq = tmp_path / "n14.seq"
    seq.write_text('seq "x"\ninit nuclear m_I=1\nreadout\nend\n', encoding="utf-8")
    assert _run("run", seq, "--shots", 5, "--out", tmp_path / "x.csv") == 1
    assert "m_I=1" in capsys.readouterr().err


def test_rabi(tmp_path):
    out = tmp_path / "rabi.csv"
    assert _run("rabi", "--points", 5, "--shots", 30, "--initial", "bright", "--out", out) == 0
    table = pd.read_csv(out)
    assert table["duration_s"].iloc[-1] == pytest.approx(80e-6)
    assert table["expected"].iloc[0] == pytest.approx(1 - 0.98 ** 2)


def test_map2d_writes_matrix_and_populations(tmp_path):
    out = tmp_path / "map.csv"
    assert _run("map2d", "--red-max", "1ms", "--red-points", 3, "--shots", 20, "--out", out) == 0
    matrix = pd.read_csv(out)
    assert list(matrix.columns) == ["red_length_s", "1.652640", "2.589360"]
    assert len(matrix) == 3
    assert (tmp_path / "map.stderr.csv").exists()
    populations = pd.read_csv(tmp_path / "map.populations.csv")
    assert {"p_bright", "p_dark", "remainder"} <= set(populations.columns)


def test_run_expands_a_two_dimensional_program(tmp_path):
    out = tmp_path / "red_map.csv"
    assert _run("run", SEQUENCES / "red_map.seq", "--shots", 10, "--out", out) == 0
    table = pd.read_csv(out)
    assert len(table) == 24
    assert list(table.columns[:2]) == ["t_red_s", "f_rf_Hz"]
    assert (table["n_bright"] + table["n_dark"] == 10).all()
    matrix = pd.read_csv(tmp_path / "red_map.matrix.csv")
    assert matrix.shape == (12, 3)


def test_kinetics_reproduces_the_red_decay(tmp_path):
    out = tmp_path / "kin.csv"
    assert _run("kinetics", "--laser", "red", "--tau-target", "120us", "--points", 11, "--out", out) == 0
    table = pd.read_csv(out)
    for t, p in zip(table["time_s"], table["p_bright"]):
        assert p == pytest.approx(math.exp(-t / 120e-6), rel=1e-9)
    result = json.loads((tmp_path / "kin.result.json").read_text())
    assert result["lifetime_s"] == pytest.approx(120e-6)


def test_kinetics_counts_column(tmp_path):
    out = tmp_path / "kin.csv"
    assert _run("kinetics", "--bin-time", "1ms", "--points", 5, "--out", out) == 0
    assert "counts" in pd.read_csv(out).columns


def test_powerdep_then_fit_recovers_the_rate_law(tmp_path):
    rates = tmp_path / "powerdep.csv"
    assert _run("powerdep", "--laser", "red", "--out", rates) == 0
    assert list(pd.read_csv(rates).columns) == ["power_mW", "rate_MHz"]
    assert _run("fit", "saturable", rates, "--out", tmp_path / "fit.csv") == 0
    result = json.loads((tmp_path / "fit.result.json").read_text())
    assert result["estimates"]["k"] == pytest.approx(1 / 60, rel=0.01)
    assert result["estimates"]["P_sat"] == pytest.approx(1.0, rel=0.01)
    assert result["low_power_slope"] == pytest.approx(2.0, abs=0.02)
    curve = pd.read_csv(tmp_path / "fit.csv")
    assert list(curve.columns) == ["x", "y", "fit", "residual"]


def test_powerdep_without_transfer_is_a_usage_error(tmp_path):
    assert _run("powerdep", "--laser", "red", "--transition", "dark-to-bright", "--out", tmp_path / "p.csv") == 2


def test_fit_named_columns_and_init(tmp_path):
    data = tmp_path / "decay.csv"
    t = [i * 20e-6 for i in range(31)]
    pd.DataFrame({"time_s": t, "p_bright": [math.exp(-x / 120e-6) for x in t]}).to_csv(data, index=False)
    assert _run("fit", "exp", data, "--x", "time_s", "--y", "p_bright", "--init", '{"tau": 1e-4}',
                "--out", tmp_path / "f.csv") == 0
    result = json.loads((tmp_path / "f.result.json").read_text())
    assert result["estimates"]["tau"] == pytest.approx(120e-6, rel=1e-3)
    assert result["x_column"] == "time_s"


def test_fit_usage_errors(tmp_path):
    assert _run("fit", "exp", tmp_path / "absent.csv", "--out", tmp_path / "f.csv") == 2
    data = tmp_path / "d.csv"
    pd.DataFrame({"x": [0, 1, 2, 3], "y": [1.0, 0.5, 0.25, 0.125]}).to_csv(data, index=False)
    assert _run("fit", "exp", data, "--y", "nope", "--out", tmp_path / "f.csv") == 2
    assert _run("fit", "exp", data, "--init", "{tau", "--out", tmp_path / "f.csv") == 2


def test_fit_rejects_an_empty_csv(tmp_path, capsys):
    data = tmp_path / "empty.csv"
    data.write_text("")
    assert _run("fit", "exp", data, "--out", tmp_path / "f.csv") == 2
    assert "cannot read" in capsys.readouterr().err


def test_fit_rejects_non_numeric_columns(tmp_path, capsys):
    data = tmp_path / "bad.csv"
    data.write_text("x,y\na,b\nc,d\n")
    assert _run("fit", "exp", data, "--out", tmp_path / "f.csv") == 2
    assert "'x' is not numeric" in capsys.readouterr().err
    assert not (tmp_path / "f.csv").exists()


def test_shots(tmp_path):
    out = tmp_path / "shots.csv"
    assert _run("shots", "--population", 0.3, "--p-bloch", 0.5, "--points", 601, "--out", out) == 0
    row = pd.read_csv(out).iloc[0]
    assert row["shots_per_point"] > 0
    assert row["runtime_s"] == pytest.approx(row["shots_per_point"] * 601 / 500.0)


def test_shots_target_stderr_raises_the_budget(tmp_path):
    loose, tight = tmp_path / "loose.csv", tmp_path / "tight.csv"
    assert _run("shots", "--population", 0.3, "--out", loose) == 0
    assert _run("shots", "--population", 0.3, "--target-stderr", 1e-3, "--out", tight) == 0
    before, after = pd.read_csv(loose).iloc[0], pd.read_csv(tight).iloc[0]
    line = after["line"]
    assert after["shots_per_point"] == math.ceil(line * (1 - line) / 1e-3 ** 2)
    assert after["shots_per_point"] > before["shots_per_point"]
    assert after["stderr_at_line"] <= 1e-3
    assert _run("shots", "--target-stderr", 0, "--out", tight) == 2


def test_spectrum_lists_the_candidate_lines(tmp_path):
    out = tmp_path / "spectrum.csv"
    assert _spectrum(out) == 0
    lines = json.loads((tmp_path / "spectrum.result.json").read_text())["candidate_lines"]
    assert [round(line["frequency_MHz"], 3) for line in lines] == [1.653, 2.589]
    assert [line["manifold"] for line in lines if line["in_range"]] == ["bright"]


def test_report(tmp_path):
    out = tmp_path / "spectrum.csv"
    assert _spectrum(out) == 0
    assert _run("report", tmp_path / "spectrum.manifest.json") == 0
    assert (tmp_path / "spectrum.pdf").read_bytes().startswith(b"%PDF")


@pytest.mark.parametrize("argv", [
    ("spectrum", "--fmin", 2.55, "--fmax", 2.65, "--points", 4, "--shots", 30, "--seed", 3),
    ("rabi", "--points", 4, "--shots", 30),
    ("map2d", "--red-points", 2, "--shots", 15),
    ("run", SEQUENCES / "rabi.seq", "--shots", 5),
    ("kinetics", "--bin-time", "1ms", "--points", 6),
    ("powerdep", "--points", 6),
    ("shots",),
])
def test_rerun_is_byte_identical(tmp_path, argv):
    first = tmp_path / "first.csv"
    assert _run(*argv, "--out", first) == 0
    again = tmp_path / "again.csv"
    assert _run("rerun", tmp_path / "first.manifest.json", "--out", again) == 0
    assert again.read_bytes() == first.read_bytes()
    assert json.loads((tmp_path / "again.manifest.json").read_text())["command"] == argv[0]


def test_spectrum_csv_is_the_same_with_worker_processes(tmp_path):
    serial, parallel = tmp_path / "serial.csv", tmp_path / "parallel.csv"
    assert _spectrum(serial) == 0
    assert _spectrum(parallel, "--workers", 2) == 0
    assert parallel.read_bytes() == serial.read_bytes()
    assert _spectrum(tmp_path / "none.csv", "--workers", 0) == 2


def test_rerun_ignores_the_environment_config(tmp_path, monkeypatch):
    first = tmp_path / "first.csv"
    assert _run("rabi", "--points", 3, "--shots", 20, "--out", first) == 0
    cfg = tmp_path / "other.json"
    cfg.write_text('{"simulation": {"seed": 1}}', encoding="utf-8")
    monkeypatch.setenv("NVSIM_CONFIG", str(cfg))
    again = tmp_path / "again.csv"
    assert _run("rerun", tmp_path / "first.manifest.json", "--out", again) == 0
    assert again.read_bytes() == first.read_bytes()
