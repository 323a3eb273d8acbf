"""Static SVG renderings of run outputs. Every plot reads only the CSV files of a run."""

from __future__ import annotations

import csv
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .analysis import MONITOR_COLUMNS  # noqa: E402
from .scenarios import Terrain, altitude_grid  # noqa: E402
from .sim import TrajectoryLog  # noqa: E402


def write_scenario_csv(path, scenario) -> None:
    """Geometry needed to redraw the surveillance field: one row per object."""
    model = scenario.model
    rows = [("meta", 0, model.n_agents, model.agents[0].state_dim, "", "")]
    params = scenario.params
    if scenario.terrain is not None:
        t = scenario.terrain
        rows.append(("terrain", 0, t.a1, t.rho, "", ""))
        for g, (mu, a, s) in enumerate(zip(t.centers, t.amps, t.widths)):
            rows.append(("crevasse", g, mu[0], mu[1], a, s))
    for i, pos in enumerate(params.get("intruders", [])):
        rows.append(("intruder", i, pos[0], pos[1], "", ""))
    if scenario.solution is not None:
        d = model.agg_dim
        for i, pos in enumerate(np.asarray(scenario.solution).reshape(-1, d)):
            rows.append(("optimum", i, pos[0], pos[1] if d > 1 else "", "", ""))
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["kind", "index", "p1", "p2", "p3", "p4"])
        for row in rows:
            writer.writerow([v if isinstance(v, str) else f"{v:.17g}" for v in row])


def read_scenario_csv(path) -> dict:
    out = {"intruder": [], "crevasse": [], "optimum": [], "terrain": None, "meta": None}
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            vals = [float(row[k]) if row[k] else np.nan for k in ("p1", "p2", "p3", "p4")]
            kind = row["kind"]
            if kind in ("terrain", "meta"):
                out[kind] = vals
            else:
                out[kind].append(vals)
    return out


def plot_errors(log: TrajectoryLog, path, title: str = "") -> None:
    fig, axes = plt.subplots(1, 2, figsize=(10, 3.8))
    for ax, series, label in ((axes[0], log.e_opt, r"$e_{opt}$"), (axes[1], log.e_wz, r"$e_{wz}$")):
        ax.semilogy(log.times, np.maximum(series, 1e-300), lw=1.4)
        ax.set_xlabel("time [s]")
        ax.set_ylabel(label)
        ax.grid(True, which="both", alpha=0.3)
    if title:
        fig.suptitle(title)
    fig.tight_layout()
    fig.savefig(path, format="svg")
    plt.close(fig)


def plot_configuration(log: TrajectoryLog, scenario_csv, path) -> None:
    """Initial and final robot positions (and intruders) over the altitude map."""
    geo = read_scenario_csv(scenario_csv)
    n_agents, state_dim = int(geo["meta"][0]), int(geo["meta"][1])
    xs = log.x.reshape(len(log.times), n_agents, state_dim)[:, :, :2]
    intruders = np.array(geo["intruder"])[:, :2] if geo["intruder"] else np.zeros((0, 2))
    pts = np.vstack([xs[0], xs[-1], intruders])
    lo = min(0.0, pts.min()) - 5
    hi = max(100.0, pts.max()) + 5
    fig, axes = plt.subplots(1, 2, figsize=(11, 5), sharex=True, sharey=True)
    if geo["terrain"] is not None:
        cre = np.array(geo["crevasse"]) if geo["crevasse"] else np.zeros((0, 4))
        terrain = Terrain(geo["terrain"][0], geo["terrain"][1], cre[:, 2], cre[:, :2], cre[:, 3])
        grid = np.linspace(lo, hi, 200)
        alt = altitude_grid(terrain, grid, grid)
    for ax, k, name in ((axes[0], 0, "initial"), (axes[1], -1, "final")):
        if geo["terrain"] is not None:
            im = ax.imshow(alt, origin="lower", extent=(lo, hi, lo, hi), cmap="viridis", interpolation="bilinear")
        if len(intruders):
            ax.scatter(intruders[:, 0], intruders[:, 1], marker="x", c="red", s=60, label="intruders")
        ax.scatter(xs[k, :, 0], xs[k, :, 1], marker="o", c="white", edgecolors="k", s=50, label="robots")
        ax.set_title(f"{name} configuration (t = {log.times[k]:g} s)")
        ax.set_xlim(lo, hi)
        ax.set_ylim(lo, hi)
        ax.set_aspect("equal")
    axes[0].legend(loc="upper right", fontsize=8)
    if geo["terrain"] is not None:
        fig.colorbar(im, ax=axes, shrink=0.8, label="altitude")
    fig.savefig(path, format="svg")
    plt.close(fig)


def plot_monitor(log: TrajectoryLog, path) -> None:
    keys = [k for k in MONITOR_COLUMNS if k in log.extra]
    if not keys:
        return
    fig, axes = plt.subplots(1, len(keys), figsize=(3.6 * len(keys), 3.4))
    for ax, key in zip(np.atleast_1d(axes), keys):
        series = log.extra[key]
        if np.all(series > 0):
            ax.semilogy(log.times, series)
        else:
            ax.plot(log.times, series)
        ax.set_title(key)
        ax.set_xlabel("time [s]")
        ax.grid(True, alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, format="svg")
    plt.close(fig)


def render_run(run_dir) -> list[Path]:
    """Regenerate every SVG of a run directory from its CSV files."""
    run_dir = Path(run_dir)
    log = TrajectoryLog.from_csv(run_dir / "trajectory.csv")
    written = [run_dir / "errors.svg"]
    plot_errors(log, written[0])
    scen = run_dir / "scenario.csv"
    if scen.exists() and read_scenario_csv(scen)["terrain"] is not None:
        written.append(run_dir / "configuration.svg")
        plot_configuration(log, scen, written[-1])
    if any(k in log.extra for k in MONITOR_COLUMNS):
        written.append(run_dir / "monitor.svg")
        plot_monitor(log, written[-1])
    return written
