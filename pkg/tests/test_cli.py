import csv
import json

import pytest

from valleyfill.cli import main

CSVS = ("total_load.csv", "voltages.csv", "profiles.csv", "duals.csv", "iterations.csv")


def read(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


def test_run_centralized_tiny(tmp_path, capsys):
    assert main(["run", "--scenario", "tiny", "--solver", "centralized", "--out", str(tmp_path)]) == 0
    report = json.loads((tmp_path / "report.json").read_text())
    assert max(report["solve"]["kkt"].values()) <= 1e-8
    assert report["problem"]["n"] == 2
    assert "certificate" in report and "varrho" in report["certificate"]
    assert "converged" in capsys.readouterr().out


def test_run_paper_shapes(tmp_path):
    assert main(["run", "--scenario", "paper", "--iters", "25", "--out", str(tmp_path)]) == 0
    total = read(tmp_path / "total_load.csv")
    assert len(total) - 1 == 52 and len(total[0]) == 26
    assert total[0][:2] == ["baseline", "iter_1"]
    volts = read(tmp_path / "voltages.csv")
    assert volts[0] == ["step", "time", "node", "v_lindistflow", "v_distflow"]
    assert len(volts) - 1 == 52 * 12 and volts[1][1] == "19:00"
    profiles = read(tmp_path / "profiles.csv")
    assert len(profiles) - 1 == 700 and len(profiles[0]) == 2 + 52
    assert len(read(tmp_path / "duals.csv")) - 1 == 25 * 52 * 12
    assert len(read(tmp_path / "iterations.csv")) - 1 == 25


def test_same_seed_same_bytes(tmp_path):
    args = ["run", "--scenario", "tiny", "--solver", "simnet", "--loss-prob", "0.2", "--seed", "4"]
    assert main(args + ["--out", str(tmp_path / "a")]) == 0
    assert main(args + ["--out", str(tmp_path / "b")]) == 0
    for name in CSVS:
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


@pytest.mark.slow
def test_paper_fleet_reproducible_from_seed(tmp_path):
    args = ["run", "--scenario", "paper", "--iters", "3", "--seed", "99"]
    assert main(args + ["--out", str(tmp_path / "a")]) == 0
    assert main(args + ["--out", str(tmp_path / "b")]) == 0
    for name in CSVS:
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_overrides_reach_the_solver(tmp_path):
    out = tmp_path / "o"
    assert main(["run", "--scenario", "tiny", "--alpha", "0.01", "--iters", "3", "--rho", "2", "--out", str(out)]) == 0
    report = json.loads((out / "report.json").read_text())
    assert report["config"]["alpha"] == 0.01 and report["config"]["max_iters"] == 3
    assert report["problem"]["rho"] == 2.0
    assert report["solve"]["iterations"] == 3


def test_compare_gap_file(tmp_path, capsys):
    assert main(["compare", "--scenario", "tiny", "--out", str(tmp_path)]) == 0
    rows = read(tmp_path / "gap.csv")
    assert rows[0] == ["iter", "spds_gap", "rpds_gap"]
    assert all(len(r) == 3 for r in rows)
    spds_gap, rpds_gap = float(rows[-1][1]), float(rows[-1][2])
    assert abs(rpds_gap) > 10 * abs(spds_gap)
    report = json.loads((tmp_path / "report.json").read_text())
    assert abs(spds_gap) <= 1e-4 * report["optimum"]


def test_compare_without_regulariser_terminal_gaps_agree(tmp_path):
    assert main(["compare", "--scenario", "tiny", "--rpds-reg", "0", "--out", str(tmp_path)]) == 0
    last = read(tmp_path / "gap.csv")[-1]
    assert abs(float(last[1]) - float(last[2])) <= 1e-8


def test_certify_exit_codes(capsys):
    assert main(["certify", "--scenario", "paper"]) == 2
    out = capsys.readouterr().out
    assert "varrho" in out and "FAILS" in out
    code = main(["certify", "--scenario", "tiny", "--tau-u", "0.999999", "--tau-lambda", "0.999999"])
    assert code == 2


def test_certify_passes_for_certified_tuple(tmp_path, capsys):
    case = tmp_path / "c.toml"
    case.write_text(CERTIFIED_CASE)
    args = ["certify", "--scenario", str(case)]
    assert main(args) == 0
    first = capsys.readouterr().out
    assert main(args) == 0
    assert capsys.readouterr().out == first


def test_missing_case_file_is_an_error(capsys):
    assert main(["run", "--scenario", "/no/such/case.toml"]) == 1
    assert "error" in capsys.readouterr().err


def test_infeasible_baseline_is_an_error(tmp_path, capsys):
    assert main(["run", "--scenario", "tiny", "--nu-lower", "0.99", "--out", str(tmp_path)]) == 1
    assert "voltage floor" in capsys.readouterr().err


def test_figures_and_plot(tmp_path):
    out = tmp_path / "f"
    assert main(["run", "--scenario", "tiny", "--iters", "20", "--out", str(out), "--figures"]) == 0
    for name in ("total_load.png", "voltages.png", "duals.png"):
        assert (out / name).stat().st_size > 0
    (out / "total_load.png").unlink()
    assert main(["plot", "--out", str(out)]) == 0
    assert (out / "total_load.png").exists()
    assert main(["plot", "--out", str(tmp_path / "empty")]) == 1


def test_log_level_from_environment(tmp_path, monkeypatch, capsys):
    monkeypatch.setenv("VALLEYFILL_LOG", "INFO")
    import logging

    logging.getLogger().handlers.clear()
    assert main(["certify", "--scenario", "tiny"]) in (0, 2)
    assert "case tiny" in capsys.readouterr().err


CERTIFIED_CASE = """
[base]
kva = 0.06
kv = 0.4
units = "pu"

[[line]]
from = 0
to = 1
r = 0.1
x = 0.05

[[line]]
from = 1
to = 2
r = 0.2
x = 0.1

[problem]
rho = 1.0
nu_lower = 0.648

[spds]
alpha = 7e-3
beta = 5e-3
tau_u = 0.985
tau_lambda = 0.985
d_lambda = 1e3
max_iters = 3000
tol = 1e-12

[scenario.horizon]
start = "00:00"
steps = 3
dt_hours = 1.0

[[scenario.ev]]
id = 0
node = 2
max_power_kw = 0.1
battery_kwh = 1.0
soc_initial = 0.30
soc_desired = 0.45

[baseline]
p = [[0.0, 0.0, 0.0], [0.003, 0.0018, 0.009]]
q = [[0.0, 0.0, 0.0], [0.0, 0.0, 0.0]]
"""
