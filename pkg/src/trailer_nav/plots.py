"""Static SVG figures for a finished run."""
from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
matplotlib.rcParams["svg.fonttype"] = "none"  # keep text searchable
matplotlib.rcParams["svg.hashsalt"] = "trailer-nav"
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402
from matplotlib.patches import Polygon as PatchPolygon  # noqa: E402

from .vehicle import footprint_world  # noqa: E402

WORLD_FILE = "world.svg"
SERIES_FILE = "timeseries.svg"


def _draw_body(ax, state, params, color, alpha=1.0):
    for verts in footprint_world(state, params):
        ax.add_patch(PatchPolygon(verts, closed=True, fill=False, ec=color, lw=0.8, alpha=alpha))


def plot_world(result, scenario, path) -> Path:
    """Obstacles, rollout fan of the first step, trajectory trace and footprint snapshots."""
    fig, ax = plt.subplots(figsize=(7, 7))
    x0, x1, y0, y1 = scenario.world.bounds
    for ob in scenario.world.obstacles:
        ax.add_patch(PatchPolygon(ob.world_vertices, closed=True, fc="0.6", ec="0.3", lw=0.5))
    if result.rollout_snapshot is not None:
        for traj in result.rollout_snapshot:
            ax.plot(traj[:, 0], traj[:, 1], color="tab:orange", lw=0.4, alpha=0.4)
    states = [r.state for r in result.trajectory]
    if result.final_state is not None and len(states) > 1:
        states.append(result.final_state)
    if len(states) > 1:
        xy = np.array([[s.x, s.y] for s in states])
        ax.plot(xy[:, 0], xy[:, 1], color="tab:blue", lw=1.2, label="trajectory")
    stride = max(1, len(states) // 12)
    for s in states[::stride]:
        _draw_body(ax, s, scenario.vehicle, "tab:blue", 0.5)
    _draw_body(ax, states[-1], scenario.vehicle, "tab:green")
    ax.plot(scenario.start[0], scenario.start[1], "ks", ms=5, label="start")
    ax.plot(scenario.goal[0], scenario.goal[1], "r*", ms=10, label="goal")
    ax.set_xlim(x0, x1)
    ax.set_ylim(y0, y1)
    ax.set_aspect("equal")
    ax.set_xlabel("x [m]")
    ax.set_ylabel("y [m]")
    ax.legend(loc="upper right", fontsize=8)
    path = Path(path)
    fig.savefig(path)
    plt.close(fig)
    return path


def plot_series(result, path) -> Path:
    """Speed, steering, articulation and clearance over time, with the clearance minimum marked."""
    steps = np.array([r.step for r in result.trajectory])
    v = np.array([r.state.v for r in result.trajectory])
    psi = np.array([r.state.psi for r in result.trajectory])
    phi = np.array([r.state.phi for r in result.trajectory])
    d = np.array([r.min_dist for r in result.trajectory])
    fig, axes = plt.subplots(4, 1, figsize=(7, 8), sharex=True)
    for ax, y, label in zip(axes, (v, psi, phi, d), ("v [m/s]", "psi [rad]", "phi [rad]", "min_dist [m]")):
        ax.plot(steps, y, lw=1.0, marker="." if len(steps) == 1 else None)
        ax.set_ylabel(label)
        ax.grid(alpha=0.3)
    k = int(np.argmin(d))
    axes[3].plot(steps[k], d[k], "rv")
    axes[3].annotate(f"min {d[k]:.4f} m", (steps[k], d[k]), textcoords="offset points", xytext=(5, 5),
                     fontsize=8, gid="min-clearance")
    axes[3].set_xlabel("step")
    path = Path(path)
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)
    return path


def render_plots(result, scenario, out_dir) -> list[Path]:
    if not result.trajectory:
        raise ValueError("cannot plot an empty trajectory")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    return [plot_world(result, scenario, out / WORLD_FILE), plot_series(result, out / SERIES_FILE)]
