"""Unit tests for the scenario-runner command line."""

import json

import numpy as np
import pytest

from entalign.align import AlignmentTrace
from entalign.cli import (
    EXIT_CONFIG,
    EXIT_OK,
    EXIT_WITNESS,
    ConfigError,
    ScenarioConfig,
    load_config,
    main,
)


def test_witness_command_exit_codes(capsys):
    assert main(["witness", "--v11", "0.957", "--v22", "0.942"]) == EXIT_OK
    assert capsys.readouterr().out.strip() == "entangled_certified"
    assert main(["witness", "--v11", "0.5", "--v22", "0.4"]) == EXIT_WITNESS
    assert capsys.readouterr().out.strip() == "not_certified"


def test_align_analytic_csv(tmp_path):
    out = tmp_path / "trace.csv"
    rc = main(["align", "--oracle", "analytic", "--seed", "3",
               "--t-corr", "0.999", "--t-uncorr", "0.01",
               "--out", str(out)])
    assert rc == EXIT_OK
    trace = AlignmentTrace.from_csv(out.read_text())
    assert trace.status == "converged"
    last = trace.rows[-1]
    assert last.v11 >= 0.999
    assert abs(last.v12) <= 0.01


def test_align_json_output(tmp_path):
    out = tmp_path / "trace.json"
    rc = main(["align", "--oracle", "analytic", "--seed", "5",
               "--t-corr", "0.999", "--t-uncorr", "0.01",
               "--format", "json", "--out", str(out)])
    assert rc == EXIT_OK
    payload = json.loads(out.read_text())
    assert payload["status"] == "converged"
    assert payload["config"]["seed"] == 5
    assert payload["rows"][-1]["v11"] >= 0.999


def test_align_deterministic_given_seed(tmp_path):
    a = tmp_path / "a.csv"
    b = tmp_path / "b.csv"
    args = ["align", "--seed", "11", "--batch-size", "5000",
            "--budget", "100000"]
    main(args + ["--out", str(a)])
    main(args + ["--out", str(b)])
    assert a.read_text() == b.read_text()


def test_align_budget_exit_code(tmp_path):
    rc = main(["align", "--seed", "1", "--budget", "5000",
               "--batch-size", "1000", "--t-corr", "0.9999",
               "--out", str(tmp_path / "t.csv")])
    assert rc != EXIT_OK


def test_error_curve_command(tmp_path):
    out = tmp_path / "curve.csv"
    rc = main(["error-curve", "--v", "0,0.5", "--n", "100,1000",
               "--trials", "2000", "--seed", "1", "--out", str(out)])
    assert rc == EXIT_OK
    lines = out.read_text().strip().splitlines()
    assert lines[0] == "v,n,sigma_formula,sigma_mc"
    assert len(lines) == 5
    for line in lines[1:]:
        _, _, sf, sm = line.split(",")
        assert float(sm) == pytest.approx(float(sf), rel=0.2)


def test_config_file_and_flag_precedence(tmp_path):
    ini = tmp_path / "scenario.ini"
    ini.write_text("[optimizer]\noracle = analytic\nmode = sequential\n"
                   "[targets]\nt_corr = 0.999\nt_uncorr = 0.01\n"
                   "[channels]\nseed = 7\n")
    cfg = load_config(str(ini))
    assert cfg.oracle == "analytic"
    assert cfg.mode == "sequential"
    assert cfg.seed == 7
    out = tmp_path / "t.csv"
    rc = main(["align", "--config", str(ini), "--seed", "9", "--out", str(out)])
    assert rc == EXIT_OK
    assert "seed = 9" in out.read_text()  # flag beats the file


def test_config_rejects_unknown_entries(tmp_path):
    bad = tmp_path / "bad.ini"
    bad.write_text("[optimizer]\nwarp = 9\n")
    with pytest.raises(ConfigError):
        load_config(str(bad))
    missing = tmp_path / "missing.ini"
    with pytest.raises(ConfigError):
        load_config(str(missing))
    assert main(["align", "--config", str(bad)]) == EXIT_CONFIG


def test_stabilize_command(tmp_path):
    out = tmp_path / "trace.csv"
    report = tmp_path / "report.json"
    rc = main(["stabilize", "--seed", "2", "--duration", "5",
               "--fraction", "0.1", "--out", str(out),
               "--report-out", str(report)])
    assert rc == EXIT_OK
    payload = json.loads(report.read_text())
    assert payload["disclosed_count"] > 0
    assert payload["pairs_key"] > 0
    assert payload["qber_11"] is not None and payload["qber_11"] < 0.05


def test_usage_error_exit_code():
    assert main(["align", "--oracle", "psychic"]) == EXIT_CONFIG
    assert main([]) == EXIT_CONFIG


def test_scenario_config_roundtrip_defaults():
    cfg = ScenarioConfig()
    opt = cfg.optimizer_config()
    assert opt.mode == "simultaneous"
    assert opt.oracle == "monte_carlo"
    targets = cfg.targets()
    assert targets.sign == 1
    drift = cfg.drift()
    assert drift.angular_rate == 0.0
