"""
Command line entry point.

    aggrefeed run CONFIG [--set path=value ...] [--seed S] [--out DIR] [--integrator rk45|rk4]
                         [--require-convergence]
    aggrefeed check CONFIG [--set ...]
    aggrefeed sweep CONFIG PARAM VALUE [VALUE ...] [--jobs J]
    aggrefeed plot RUN_DIR

Exit codes: 0 success, 1 validation error, 2 integration failure,
3 non-convergence (only with ``--require-convergence``).
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
import tempfile
import time
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__
from .analysis import lyapunov_certificate, monitor
from .config import SCHEMA_VERSION, ConfigError, apply_override, load_config, scenario_config, sim_config
from .controller import NetworkState, StackedDynamics, pi_w, pi_z
from .graph import GraphError, build_consensus_basis, check_strongly_connected, check_weight_balanced, load_graph
from .model import finite_diff_check, grad_reduced
from .plots import plot_configuration, plot_errors, plot_monitor, write_scenario_csv
from .scenarios import quadratic_benchmark, surveillance_scenario
from .sim import IntegrationError, integrate

log = logging.getLogger("aggrefeed")

EXIT_OK, EXIT_VALIDATION, EXIT_INTEGRATION, EXIT_NONCONVERGED = 0, 1, 2, 3
DECAY_RATIO = 1e-2
SWEEP_RATIO = 1e-3
MANIFEST_VERSION = 1


def build_scenario(cfg: dict):
    graph = load_graph(cfg["graph"]["file"]) if cfg["graph"]["file"] else None
    sc_cfg = scenario_config(cfg)
    if cfg["scenario"] == "surveillance":
        return surveillance_scenario(sc_cfg, seed=cfg["seed"], graph=graph)
    return quadratic_benchmark(sc_cfg, seed=cfg["seed"], graph=graph)


def default_out_root() -> Path:
    return Path(os.environ.get("AGGREFEED_OUT", "runs"))


def _atomic_write_json(path: Path, payload) -> None:
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=".tmp-", suffix=".json")
    with os.fdopen(fd, "w") as fh:
        json.dump(payload, fh, indent=2, default=_json_default)
    os.replace(tmp, path)


def _json_default(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def summarize(traj, scenario=None) -> dict:
    e_opt, e_wz = traj.e_opt, traj.e_wz
    out = {
        "status": traj.status,
        "t_final": float(traj.times[-1]),
        "e_opt_initial": float(e_opt[0]),
        "e_opt_final": float(e_opt[-1]),
        "e_wz_initial": float(e_wz[0]),
        "e_wz_final": float(e_wz[-1]),
        "e_opt_ratio": float(e_opt[-1] / e_opt[0]) if e_opt[0] > 0 else 0.0,
        "e_wz_ratio": float(e_wz[-1] / e_wz[0]) if e_wz[0] > 0 else 0.0,
        "cost_final": float(traj.metric("cost")[-1]),
        "stationarity_final": float(traj.metric("stationarity")[-1]),
        "max_cons_w": float(traj.conservation[:, 0].max()),
        "max_cons_z": float(traj.conservation[:, 1].max()),
    }
    out["converged"] = bool(
        traj.status == "ok" and out["e_opt_ratio"] < DECAY_RATIO and out["e_wz_ratio"] < DECAY_RATIO
    )
    if scenario is not None and scenario.solution is not None:
        gap = float(np.linalg.norm(traj.u[-1] - scenario.solution))
        out["distance_to_minimizer"] = gap
        out["relative_distance_to_minimizer"] = gap / max(1.0, float(np.linalg.norm(scenario.solution)))
    return out


def execute(cfg: dict, out_dir: Path, make_plots: bool = True) -> tuple[int, dict]:
    """Run one configured simulation and write its outputs to ``out_dir``."""
    start = time.perf_counter()
    out_dir.mkdir(parents=True, exist_ok=True)
    scenario = build_scenario(cfg)
    scenario.model.graph.validate()
    sim = sim_config(cfg)
    initial = NetworkState.initial(scenario.model, scenario.x0, scenario.u0)
    code = EXIT_OK
    try:
        traj = integrate(scenario.model, initial, sim)
    except IntegrationError as exc:
        traj = exc.partial
        code = EXIT_INTEGRATION
        log.error("integration failed: %s", exc)
    if cfg["analysis"]["certificate"] and scenario.model.n_agents > 1 and len(traj.times):
        cert = lyapunov_certificate(scenario.model.graph, scenario.model.agg_dim,
                                    cfg["analysis"]["q1"], cfg["analysis"]["q2"])
        series = monitor(scenario.model, traj, cert)
        traj.extra.update(series.columns())

    paths = {"trajectory": out_dir / "trajectory.csv", "scenario": out_dir / "scenario.csv",
             "summary": out_dir / "summary.json", "manifest": out_dir / "manifest.json"}
    traj.to_csv(paths["trajectory"])
    write_scenario_csv(paths["scenario"], scenario)
    summary = summarize(traj, scenario)
    summary["message"] = traj.message
    if make_plots:
        paths["errors_plot"] = out_dir / "errors.svg"
        plot_errors(traj, paths["errors_plot"], title=f"{cfg['scenario']} (seed {cfg['seed']})")
        if scenario.terrain is not None:
            paths["configuration_plot"] = out_dir / "configuration.svg"
            plot_configuration(traj, paths["scenario"], paths["configuration_plot"])
        if "lyapunov_value" in traj.extra:
            paths["monitor_plot"] = out_dir / "monitor.svg"
            plot_monitor(traj, paths["monitor_plot"])
    _atomic_write_json(paths["summary"], summary)
    manifest = {
        "manifest_version": MANIFEST_VERSION,
        "schema_version": SCHEMA_VERSION,
        "scenario": cfg["scenario"],
        "seed": cfg["seed"],
        "code_version": __version__,
        "config": cfg,
        "outputs": {k: str(v) for k, v in paths.items()},
        "wall_clock_s": time.perf_counter() - start,
        "final_metrics": summary,
    }
    _atomic_write_json(paths["manifest"], manifest)
    return code, summary


def _load(args) -> dict:
    cfg = load_config(args.config, args.set or (), seed=args.seed)
    if getattr(args, "integrator", None):
        cfg["sim"]["integrator"] = args.integrator
    return cfg


def cmd_run(args) -> int:
    try:
        cfg = _load(args)
        out = Path(args.out) if args.out else default_out_root() / f"{cfg['scenario']}-seed{cfg['seed']}"
        code, summary = execute(cfg, out)
    except (ConfigError, GraphError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    print(json.dumps(summary, indent=2))
    print(f"outputs written to {out}")
    if code != EXIT_OK:
        return code
    if args.require_convergence and not summary["converged"]:
        print("run did not converge", file=sys.stderr)
        return EXIT_NONCONVERGED
    return EXIT_OK


def run_checks(cfg: dict) -> list[tuple[str, bool, str]]:
    """Graph validity, derivative oracles, equilibrium residual and Lyapunov certificate."""
    results = []
    scenario = build_scenario(cfg)
    model = scenario.model
    graph = model.graph
    balanced, imbalance = check_weight_balanced(graph)
    results.append(("weight-balanced", balanced, f"max |d_in - d_out| = {imbalance:.2e}"))
    results.append(("strongly connected", check_strongly_connected(graph), f"N = {graph.n_agents}"))

    report = finite_diff_check(model, samples=10, seed=cfg["seed"])
    worst = max(report.max_errors, key=report.max_errors.get)
    results.append(("finite differences", report.passed, f"worst {worst} = {report.max_errors[worst]:.2e}"))

    # at (h(u), u, pi_w, pi_z) the loop must reduce to (0, -alpha1 grad F, 0, 0) for any u
    gains = sim_config(cfg).gains
    rng = np.random.default_rng(cfg["seed"])
    lo, hi = model.sample_box
    points = [rng.uniform(lo, hi, model.m) for _ in range(5)]
    if scenario.solution is not None:
        points.append(scenario.solution)
    residual = 0.0
    try:
        dyn = StackedDynamics(model, gains)
        for u in points:
            x = model.steady_state(u)
            rhs = dyn(NetworkState(x, u, pi_w(model, x), pi_z(model, x))).flat()
            n_comp = 2 * model.n_agents * model.agg_dim
            expected = np.concatenate([np.zeros(model.n), -gains.alpha1 * grad_reduced(model, u), np.zeros(n_comp)])
            residual = max(residual, float(np.linalg.norm(rhs - expected) / max(1.0, np.linalg.norm(expected))))
        results.append(("equilibrium residual", residual <= 1e-9, f"max relative residual {residual:.2e}"))
    except (ValueError, GraphError) as exc:
        results.append(("equilibrium residual", False, str(exc)))

    try:
        basis = build_consensus_basis(graph.n_agents, model.agg_dim)
        results.append(("consensus basis", True, f"R is {basis.r_matrix.shape[0]}x{basis.r_matrix.shape[1]}"))
    except GraphError as exc:
        results.append(("consensus basis", False, str(exc)))
    try:
        cert =lyapunov_certificate(graph, model.agg_dim, cfg["analysis"]["q1"], cfg["analysis"]["q2"])
        res = max(cert.residuals())
        lo_eig, _ = cert.eig_bounds()
        results.append(("lyapunov certificate", res <= 1e-9 and lo_eig > 0, f"residual {res:.2e}, min eig(P) {lo_eig:.2e}"))
    except (GraphError, ValueError) as exc:
        results.append(("lyapunov certificate", False, str(exc)))
    return results


def cmd_check(args) -> int:
    try:
        cfg = _load(args)
        results = run_checks(cfg)
    except (ConfigError, GraphError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    width = max(len(name) for name, _, _ in results)
    for name, ok, detail in results:
        print(f"{name:<{width}}  {'PASS' if ok else 'FAIL'}  {detail}")
    failed = [name for name, ok, _ in results if not ok]
    if failed:
        print(f"failed: {', '.join(failed)}", file=sys.stderr)
        return EXIT_VALIDATION
    return EXIT_OK


def _sweep_one(cfg: dict, param: str, value: str, out_root: Path) -> dict:
    run_cfg = json.loads(json.dumps(cfg))
    apply_override(run_cfg, f"{param}={value}")
    row = {"param": param, "value": value}
    try:
        code, summary = execute(run_cfg, out_root / f"{param}={value}", make_plots=False)
    except (ConfigError, GraphError, ValueError) as exc:
        row.update(status="invalid", message=str(exc), converged=False)
        return row
    row.update(
        status=summary["status"],
        e_opt_initial=summary["e_opt_initial"],
        e_opt_final=summary["e_opt_final"],
        e_wz_final=summary["e_wz_final"],
        cost_final=summary["cost_final"],
        t_final=summary["t_final"],
        converged=bool(summary["status"] == "ok" and summary["e_opt_final"] < SWEEP_RATIO * summary["e_opt_initial"]),
        message=summary.get("message", ""),
    )
    return row


SWEEP_COLUMNS = ["param", "value", "status", "converged", "e_opt_initial", "e_opt_final", "e_wz_final",
                 "cost_final", "t_final", "message"]


def run_sweep(cfg: dict, param: str, values, out_root: Path, jobs: int = 1) -> list[dict]:
    out_root.mkdir(parents=True, exist_ok=True)
    with ThreadPoolExecutor(max_workers=max(1, jobs)) as pool:
        rows = list(pool.map(lambda v: _sweep_one(cfg, param, str(v), out_root), values))
    with open(out_root / "sweep.csv", "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=SWEEP_COLUMNS, extrasaction="ignore")
        writer.writeheader()
        for row in rows:
            writer.writerow({k: (f"{v:.17g}" if isinstance(v, float) else v) for k, v in row.items()})
    return rows


def cmd_sweep(args) -> int:
    try:
        cfg = _load(args)
        if args.param != "seed":
            apply_override(json.loads(json.dumps(cfg)), f"{args.param}={args.values[0]}")
    except (ConfigError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    out = Path(args.out) if args.out else default_out_root() / f"sweep-{args.param}"
    rows = run_sweep(cfg, args.param, args.values, out, jobs=args.jobs)
    for row in rows:
        verdict = "converged" if row["converged"] else ("invalid" if row["status"] == "invalid" else "not converged")
        final = row.get("e_opt_final", float("nan"))
        print(f"{args.param}={row['value']:<10} {row['status']:<9} e_opt(T)={final:.3e}  {verdict}")
    print(f"summary written to {out / 'sweep.csv'}")
    return EXIT_OK


def cmd_plot(args) -> int:
    from .plots import render_run

    try:
        for path in render_run(args.run_dir):
            print(path)
    except (OSError, KeyError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    return EXIT_OK


def make_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="aggrefeed", description="Distributed aggregative feedback optimization.")
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, integrator=True):
        p.add_argument("config", help="TOML/JSON config or a run manifest")
        p.add_argument("--set", action="append", metavar="PATH=VALUE", help="override a config value")
        p.add_argument("--seed", type=int)
        if integrator:
            p.add_argument("--integrator", choices=("rk45", "rk4"))

    p = sub.add_parser("run", help="simulate one configuration")
    common(p)
    p.add_argument("--out")
    p.add_argument("--require-convergence", action="store_true")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("check", help="validate graph, derivatives, equilibrium and certificate")
    common(p, integrator=False)
    p.set_defaults(func=cmd_check)

    p = sub.add_parser("sweep", help="one simulation per parameter value")
    common(p)
    p.add_argument("param", help="dotted config path, e.g. gains.alpha2, or seed")
    p.add_argument("values", nargs="+")
    p.add_argument("--out")
    p.add_argument("--jobs", type=int, default=os.cpu_count() or 1)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("plot", help="re-render SVG plots from a run directory")
    p.add_argument("run_dir")
    p.set_defaults(func=cmd_plot)
    return parser


def main(argv=None) -> int:
    args = make_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
