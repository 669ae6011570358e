"""End-to-end command tests: exit codes, schema-valid reports, determinism."""

from __future__ import annotations

import json
import math

import pytest

from telemean.cli import main
from telemean.reports import validate_report


def run_json(args, tmp_path, name="report.json"):
    out = tmp_path / name
    code = main([*args, "--out", str(out)])
    return code, (json.loads(out.read_text(encoding="utf-8")) if out.exists() else None)


def test_serial_report_is_schema_valid_and_deterministic(tmp_path):
    args = [
        "estimate-serial", "--gen", "uniform:mu=0.004,n=64",
        "--theta", "0.1", "--alpha", "100", "--seed", "7",
    ]
    code, payload = run_json(args, tmp_path)
    assert code == 0
    validate_report(payload)
    assert abs(payload["mu_e"] - 0.004) <= 2 * payload["half_width"]
    first = (tmp_path / "report.json").read_bytes()
    code, _ = run_json(args, tmp_path)
    assert code == 0
    assert (tmp_path / "report.json").read_bytes() == first


def test_serial_zero_dataset_estimates_zero(tmp_path):
    code, payload = run_json(
        ["estimate-serial", "--gen", "zeros:n=16", "--theta", "0.2",
         "--alpha", "50", "--seed", "1"],
        tmp_path,
    )
    assert code == 0
    assert abs(payload["mu_e"]) <= payload["half_width"]


def test_serial_csv_format(tmp_path, capsys):
    code = main([
        "estimate-serial", "--gen", "zeros:n=16", "--theta", "0.2",
        "--alpha", "10", "--seed", "1", "--format", "csv",
    ])
    assert code == 0
    lines = capsys.readouterr().out.splitlines()
    assert lines[0] == "field,value"
    assert any(line.startswith("mu_e,") for line in lines)


def test_missing_theta_is_validation_error(tmp_path):
    code = main(["estimate-serial", "--gen", "zeros:n=16", "--alpha", "10"])
    assert code == 2


def test_bad_gen_spec_is_validation_error():
    code = main(["estimate-serial", "--gen", "uniform:mu=2.0", "--theta", "0.1"])
    assert code == 2


def test_data_and_gen_are_mutually_exclusive(tmp_path):
    with pytest.raises(SystemExit) as excinfo:
        main(["estimate-serial", "--data", "x.csv", "--gen", "zeros", "--theta", "0.1"])
    assert excinfo.value.code == 2


def test_unwrap_violation_exits_runtime_cap():
    # derived r assumes |mu| <= theta^2; a large constant mean overshoots pi
    code = main(["estimate-serial", "--gen", "constant:c=0.3,n=16", "--theta", "0.1"])
    assert code == 3


def test_dataset_file_roundtrip(tmp_path):
    data = tmp_path / "values.csv"
    data.write_text("".join(f"{v}\n" for v in (0.1, -0.1, 0.3, -0.3)), encoding="utf-8")
    code, payload = run_json(
        ["estimate-serial", "--data", str(data), "--theta", "0.2",
         "--r", "2", "--alpha", "50", "--seed", "4"],
        tmp_path,
    )
    assert code == 0
    assert payload["r"] == 2


def test_non_power_of_two_file_needs_truncate(tmp_path):
    data = tmp_path / "values.csv"
    data.write_text("0.1\n0.2\n0.3\n", encoding="utf-8")
    code = main(["estimate-serial", "--data", str(data), "--theta", "0.2", "--r", "1"])
    assert code == 2
    with pytest.warns(UserWarning, match="truncated"):
        code, payload = run_json(
            ["estimate-serial", "--data", str(data), "--truncate", "--theta", "0.2",
             "--r", "1", "--alpha", "20", "--seed", "0"],
            tmp_path,
        )
    assert code == 0
    validate_report(payload)


def test_schedule_reproduces_tiny_mean_fixture(tmp_path):
    code, payload = run_json(
        ["estimate-serial", "--gen", "uniform:mu=2e-8,n=256", "--schedule",
         "--ideal", "--seed", "11"],
        tmp_path,
    )
    assert code == 0
    validate_report(payload)
    schedule = payload["schedule"]
    assert schedule["reductions"] == 18
    assert abs(schedule["theta"] - 3.35e-4) / 3.35e-4 < 0.01
    assert not schedule["floored"]
    assert len(schedule["history"]) == 19


def test_epr_two_particle_fixture_recovers_phase(tmp_path):
    code, payload = run_json(
        ["estimate-epr", "--gen", "list:1;1", "--theta", "0.3", "--ideal",
         "--seed", "0"],
        tmp_path,
    )
    assert code == 0
    validate_report(payload)
    assert payload["recovered_phase"] == pytest.approx(0.09, abs=1e-12)
    assert payload["mu_e"] == pytest.approx(1.0, abs=1e-12)
    assert payload["method"] == "epr"


def test_epr_trace_has_one_bit_per_remote_particle(tmp_path):
    trace_path = tmp_path / "epr.trace"
    code, payload = run_json(
        ["estimate-epr", "--gen", "uniform:mu=0.1,n=8", "--theta", "0.3",
         "--alpha", "40", "--seed", "5", "--trace", str(trace_path)],
        tmp_path,
    )
    assert code == 0
    events = [json.loads(line) for line in trace_path.read_text().splitlines()]
    bits = [e for e in events if e["event"] == "bit"]
    measures = [e for e in events if e["event"] == "measure"]
    assert len(bits) == 40 * 7
    assert len(measures) == 40
    for k in range(40):
        assert sum(1 for e in bits if e["round"] == k) == 7


def test_distributed_eta1_matches_serial_cli(tmp_path):
    common = ["--gen", "uniform:mu=0.004,n=16", "--theta", "0.2",
              "--alpha", "80", "--seed", "21"]
    code, serial = run_json(["estimate-serial", *common], tmp_path, "serial.json")
    assert code == 0
    code, dist = run_json(
        ["estimate-distributed", "--eta", "1", *common], tmp_path, "dist.json"
    )
    assert code == 0
    assert dist["mu_e"] == serial["mu_e"]
    assert dist["elementary_step_count"] == serial["elementary_step_count"]
    assert dist["restarts"] == serial["restarts"]
    assert dist["eta"] == 1


def test_distributed_trace_counts_and_determinism(tmp_path):
    trace_a = tmp_path / "a.trace"
    trace_b = tmp_path / "b.trace"
    args = ["estimate-distributed", "--gen", "uniform:mu=0.001,n=8",
            "--theta", "0.15", "--eta", "3", "--r", "20", "--alpha", "30",
            "--seed", "9"]
    code, _ = run_json([*args, "--trace", str(trace_a)], tmp_path)
    assert code == 0
    code, _ = run_json([*args, "--trace", str(trace_b)], tmp_path)
    assert code == 0
    assert trace_a.read_bytes() == trace_b.read_bytes()
    events = [json.loads(line) for line in trace_a.read_text().splitlines()]
    for k in range(30):
        bits = [e for e in events if e["round"] == k and e["event"] == "bit"]
        assert len(bits) >= 2  # eta-1 per successful attempt
        assert [e["from"] for e in bits[-2:]] == [1, 2]


def test_distributed_eta_bound_exit_and_force(tmp_path):
    # zero-mean, nonzero-variance data: p_fail ~ 1.2e-3, cap 8 at r=50
    args = ["estimate-distributed", "--gen", "list:0.6;-0.6;0.3;-0.3",
            "--theta", "0.5", "--eta", "12", "--r", "50", "--ideal", "--seed", "2"]
    code = main(args)
    assert code == 2
    code, payload = run_json([*args, "--force"], tmp_path)
    assert code == 0
    assert payload["eta"] == 12


def test_sweep_theta_slopes_and_schema(tmp_path):
    code, payload = run_json(
        ["sweep", "--gen", "uniform:mu=0.04,n=256",
         "--thetas", "0.2,0.1,0.05,0.025", "--seed", "9"],
        tmp_path,
    )
    assert code == 0
    validate_report(payload)
    assert payload["slopes"]["phase_error"] >= 2.5
    assert payload["slopes"]["failure_probability"] >= 3.5
    assert [p["theta"] for p in payload["points"]] == [0.2, 0.1, 0.05, 0.025]


def test_sweep_zeros_reports_exact(tmp_path):
    code, payload = run_json(
        ["sweep", "--gen", "zeros:n=16", "--thetas", "0.2,0.1,0.05", "--seed", "1"],
        tmp_path,
    )
    assert code == 0
    assert payload["slopes"] == {"phase_error": "exact", "failure_probability": "exact"}


def test_sweep_eta_phase_multiplication(tmp_path):
    code, payload = run_json(
        ["sweep", "--gen", "uniform:mu=0.01,n=16", "--etas", "1,2,4",
         "--theta", "0.2", "--seed", "9"],
        tmp_path,
    )
    assert code == 0
    validate_report(payload)
    signals = [p["signal_phase"] for p in payload["points"]]
    assert signals[1] == pytest.approx(2 * signals[0], rel=1e-9)
    assert signals[2] == pytest.approx(4 * signals[0], rel=1e-9)
    assert payload["slopes"]["signal_phase"] == pytest.approx(1.0, abs=1e-6)


def test_sweep_validation_errors(tmp_path):
    assert main(["sweep", "--gen", "zeros:n=16", "--thetas", "0.2,0.1"]) == 2
    assert main(["sweep", "--gen", "zeros:n=16"]) == 2
    assert main(["sweep", "--gen", "zeros:n=16", "--thetas", "0.2,0.1,0.05",
                 "--etas", "1,2,4"]) == 2
    assert main(["sweep", "--gen", "zeros:n=16", "--etas", "1,2,4"]) == 2  # no theta


def test_oracle_check_passes_and_negative_control(tmp_path):
    args = ["oracle-check", "--gen", "uniform:mu=0.1,n=64", "--theta", "0.25",
            "--seed", "2"]
    code, payload = run_json(args, tmp_path)
    assert code == 0
    validate_report(payload)
    assert payload["pass"]
    assert all(c["max_deviation"] <= 1e-10 for c in payload["checks"])
    code, corrupted = run_json([*args, "--corrupt-gamma-sign"], tmp_path, "bad.json")
    assert code == 1
    assert not corrupted["pass"]


def test_oracle_check_rejects_large_registers():
    code = main(["oracle-check", "--gen", "uniform:mu=0.1,n=512", "--theta", "0.1"])
    assert code == 2


def test_baseline_exhaustive_exact_mean(tmp_path):
    code, payload = run_json(
        ["baseline", "--gen", "uniform:mu=0.25,n=64", "--samples", "64",
         "--exhaustive", "--seed", "3"],
        tmp_path,
    )
    assert code == 0
    validate_report(payload)
    assert payload["estimate"] == pytest.approx(0.25, abs=1e-12)
    assert payload["exhaustive"] is True


def test_report_renders_png_and_csv(tmp_path):
    code, _ = run_json(
        ["sweep", "--gen", "uniform:mu=0.04,n=64", "--thetas", "0.2,0.1,0.05",
         "--seed", "9"],
        tmp_path, "table.json",
    )
    assert code == 0
    out_dir = tmp_path / "figs"
    code = main(["report", "--table", str(tmp_path / "table.json"),
                 "--out-dir", str(out_dir)])
    assert code == 0
    png = out_dir / "table.png"
    assert png.read_bytes()[:8] == b"\x89PNG\r\n\x1a\n"
    table_csv = (out_dir / "table.csv").read_text(encoding="utf-8")
    assert table_csv.splitlines()[0].startswith("elementary_step_count,")


def test_report_rejects_non_sweep_table(tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text('{"hello": 1}', encoding="utf-8")
    assert main(["report", "--table", str(bad)]) == 2
    assert main(["report", "--table", str(tmp_path / "missing.json")]) == 2


def test_stdout_emission_without_out_flag(capsys):
    code = main(["baseline", "--gen", "constant:c=0.5,n=4", "--samples", "3",
                 "--seed", "0"])
    assert code == 0
    payload = json.loads(capsys.readouterr().out)
    assert payload["estimate"] == 0.5
