import csv
import json
from pathlib import Path

import numpy as np
import pytest

from aggrefeed.cli import main

CONFIGS = Path(__file__).resolve().parents[1] / "configs"
FAST = ["--set", "sim.horizon=20", "--set", "sim.sample_period=1.0"]


def run(argv, capsys=None):
    code = main([str(a) for a in argv])
    return code


def read_summary(path):
    return json.loads((Path(path) / "summary.json").read_text())


def test_run_quadratic(tmp_path, capsys):
    out = tmp_path / "q"
    assert run(["run", CONFIGS / "quadratic.toml", "--out", out]) == 0
    summary = read_summary(out)
    assert summary["converged"]
    assert summary["relative_distance_to_minimizer"] < 1e-6
    for name in ("trajectory.csv", "scenario.csv", "manifest.json", "errors.svg"):
        assert (out / name).exists()
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["config"]["gains"]["alpha1"] == 0.5
    assert manifest["code_version"]
    assert manifest["final_metrics"]["e_opt_final"] == summary["e_opt_final"]
    assert not list(out.glob(".tmp-*"))


def test_run_surveillance_outputs(tmp_path):
    out = tmp_path / "s"
    code = run(["run", CONFIGS / "surveillance.toml", "--out", out, "--set", "analysis.certificate=true", *FAST])
    assert code == 0
    for name in ("errors.svg", "configuration.svg", "monitor.svg"):
        assert (out / name).read_text().lstrip().startswith("<?xml")
    with open(out / "trajectory.csv") as fh:
        header = next(csv.reader(fh))
    assert header[0] == "t" and "lyapunov_value" in header and "e_opt" in header


def test_require_convergence(tmp_path):
    argv = ["run", CONFIGS / "quadratic.toml", "--out", tmp_path / "short", "--set", "sim.horizon=2"]
    assert run(argv) == 0
    assert run([*argv, "--require-convergence"]) == 3


def test_divergence_exit_code(tmp_path):
    out = tmp_path / "div"
    code = run(["run", CONFIGS / "surveillance_unicycle.toml", "--out", out, "--set", "gains.alpha1=7",
                "--set", "gains.alpha2=7", "--set", "sim.horizon=40"])
    assert code == 2
    summary = read_summary(out)
    assert summary["status"] == "diverged"
    assert not summary["converged"]
    assert (out / "trajectory.csv").exists()


@pytest.mark.parametrize("override", ["gains.alpha3=1", "sim.integrator=euler", "scenario=ring", "nokey"])
def test_invalid_config(tmp_path, override):
    assert run(["run", CONFIGS / "quadratic.toml", "--out", tmp_path / "x", "--set", override]) == 1


def test_missing_config(tmp_path):
    assert run(["run", tmp_path / "nope.toml"]) == 1


def test_check_valid(capsys):
    assert run(["check", CONFIGS / "surveillance.toml"]) == 0
    out = capsys.readouterr().out
    assert "FAIL" not in out and "lyapunov certificate" in out


def write_config(tmp_path, graph_payload, n_agents):
    (tmp_path / "g.json").write_text(json.dumps(graph_payload))
    cfg = tmp_path / "cfg.toml"
    cfg.write_text(f'scenario = "quadratic"\n[graph]\nfile = "g.json"\n[quadratic]\nn_agents = {n_agents}\n')
    return cfg


def test_check_one_directional_edge(tmp_path, capsys):
    cfg = write_config(tmp_path, {"n": 2, "edges": [[0, 1, 1.0]]}, 2)
    assert run(["check", cfg]) == 1
    captured = capsys.readouterr()
    assert "weight-balanced" in captured.out and "FAIL" in captured.out


def test_check_single_agent(capsys):
    assert run(["check", CONFIGS / "quadratic.toml", "--set", "quadratic.n_agents=1"]) == 1
    out = capsys.readouterr().out
    assert "consensus basis" in out and "at least 2" in out


def test_run_rejects_invalid_graph(tmp_path):
    cfg = write_config(tmp_path, {"n": 2, "edges": [[0, 1, 1.0]]}, 2)
    assert run(["run", cfg, "--out", tmp_path / "o"]) == 1


def sweep_rows(path):
    with open(path) as fh:
        return list(csv.DictReader(fh))


def test_sweep_alpha2(tmp_path, capsys):
    out = tmp_path / "sw"
    code = run(["sweep", CONFIGS / "quadratic.toml", "gains.alpha2", "0.05", "0.2", "--out", out, "--jobs", "2"])
    assert code == 0
    rows = sweep_rows(out / "sweep.csv")
    assert [r["value"] for r in rows] == ["0.05", "0.2"]
    assert rows[0]["converged"] == "True"
    assert {"e_opt_final", "e_wz_final", "cost_final"} <= set(rows[0])


def test_sweep_single_value_matches_run(tmp_path):
    assert run(["sweep", CONFIGS / "quadratic.toml", "gains.alpha2", "0.05", "--out", tmp_path / "sw"]) == 0
    assert run(["run", CONFIGS / "quadratic.toml", "--out", tmp_path / "r"]) == 0
    row = sweep_rows(tmp_path / "sw" / "sweep.csv")[0]
    assert float(row["e_opt_final"]) == read_summary(tmp_path / "r")["e_opt_final"]


def test_sweep_seeds_deterministic(tmp_path):
    argv = ["sweep", CONFIGS / "quadratic.toml", "seed", "0", "1", "2", *FAST, "--integrator", "rk4",
            "--set", "sim.step_size=0.01"]
    assert run([*argv, "--out", tmp_path / "a"]) == 0
    assert run([*argv, "--out", tmp_path / "b", "--jobs", "1"]) == 0
    assert sweep_rows(tmp_path / "a" / "sweep.csv") == sweep_rows(tmp_path / "b" / "sweep.csv")


def test_sweep_records_failures(tmp_path):
    code = run(["sweep", CONFIGS / "quadratic.toml", "gains.alpha2", "0.05", "-1", "--out", tmp_path / "sw", *FAST])
    assert code == 0
    rows = sweep_rows(tmp_path / "sw" / "sweep.csv")
    assert rows[1]["status"] == "invalid" and rows[0]["status"] == "ok"


def test_plot_rerenders(tmp_path):
    out = tmp_path / "p"
    assert run(["run", CONFIGS / "surveillance.toml", "--out", out, *FAST]) == 0
    (out / "errors.svg").unlink()
    (out / "configuration.svg").unlink()
    assert run(["plot", out]) == 0
    assert (out / "errors.svg").exists() and (out / "configuration.svg").exists()


def test_plot_missing_dir(tmp_path):
    assert run(["plot", tmp_path / "absent"]) == 1


def test_manifest_rerun_bitwise(tmp_path):
    first = tmp_path / "first"
    argv = ["run", CONFIGS / "surveillance.toml", "--integrator", "rk4", "--seed", "3",
            "--set", "sim.step_size=0.01", "--set", "sim.horizon=5", "--set", "sim.sample_period=0.5"]
    assert run([*argv, "--out", first]) == 0
    assert run(["run", first / "manifest.json", "--out", tmp_path / "second"]) == 0
    a = (first / "trajectory.csv").read_bytes()
    b = (tmp_path / "second" / "trajectory.csv").read_bytes()
    assert a == b


def test_default_output_root(tmp_path, monkeypatch):
    monkeypatch.setenv("AGGREFEED_OUT", str(tmp_path / "root"))
    assert run(["run", CONFIGS / "quadratic.toml", "--set", "sim.horizon=1"]) == 0
    assert (tmp_path / "root" / "quadratic-seed0" / "manifest.json").exists()


@pytest.mark.parametrize("name", ["surveillance_convex.toml", "surveillance_disturbed.toml",
                                  "surveillance_unicycle.toml"])
def test_shipped_configs_load(name):
    from aggrefeed.config import load_config

    cfg = load_config(CONFIGS / name)
    assert cfg["scenario"] == "surveillance"


def test_convex_config_disables_altitude():
    from aggrefeed.config import load_config

    assert load_config(CONFIGS / "surveillance_convex.toml")["surveillance"]["gamma_alt"] == 0.0
    assert np.isclose(load_config(CONFIGS / "surveillance_disturbed.toml")["disturbance"]["amplitude"], 0.5)
