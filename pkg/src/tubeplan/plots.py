"""Figure rendering for plans and traces.

All figures go to SVG files next to the delimited outputs; matplotlib's
hash salt and date metadata are pinned so identical runs produce identical
bytes.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib
matplotlib.use("Agg")
import matplotlib.pyplot as plt
from matplotlib.patches import Ellipse, Polygon, Rectangle

import numpy as np

from .collision import Polytope
from .planner import Scenario, Solution
from .tebmap import augment_vehicle

plt.rcParams["svg.hashsalt"] = "tubeplan"

_COLORS = ["tab:red", "tab:blue", "tab:purple", "tab:green", "tab:orange"]


def _draw_box(ax, box, **kw):
    (x_lo, x_hi), (z_lo, z_hi) = box
    ax.add_patch(Rectangle((x_lo, z_lo), x_hi - x_lo, z_hi - z_lo, **kw))


def _draw_environment(ax, scenario: Scenario):
    _draw_box(ax, scenario.region, fill=False, edgecolor="black", linewidth=1.2)
    _draw_box(ax, scenario.goal, fill=False, edgecolor="tab:blue",
              linewidth=1.2, linestyle="--")
    for poly in scenario.obstacles:
        ax.add_patch(Polygon(poly.vertices, closed=True, facecolor="tab:blue",
                             edgecolor="navy", alpha=0.85))
    ax.plot(*scenario.reference, marker="*", color="goldenrod", markersize=10,
            zorder=5)


def _draw_footprints(ax, scenario: Scenario, solution: Solution, stride: int,
                     color: str, vehicle: int):
    p = solution.positions(vehicle)
    shape = scenario.vehicles[vehicle].shape
    for k in range(0, scenario.N + 1, stride):
        aug = augment_vehicle(shape, float(solution.radii[vehicle, k]))
        axes, V = aug.principal
        angle = np.degrees(np.arctan2(V[1, 0], V[0, 0]))
        ax.add_patch(Ellipse(p[k], 2 * axes[0], 2 * axes[1], angle=angle,
                             fill=False, edgecolor=color, alpha=0.5,
                             linewidth=0.8))


def plot_plan(scenario: Scenario, solutions, path, labels=None,
              stride: int | None = None) -> Path:
    """Trajectories plus augmented footprints for one or more solutions."""
    path = Path(path)
    if isinstance(solutions, Solution):
        solutions = [solutions]
    stride = stride or max(1, scenario.N // 10)
    fig, ax = plt.subplots(figsize=(6, 6))
    _draw_environment(ax, scenario)
    for s_idx, sol in enumerate(solutions):
        for i in range(scenario.M):
            color = _COLORS[(i + s_idx * scenario.M) % len(_COLORS)]
            p = sol.positions(i)
            label = None
            if labels is not None and i == 0:
                label = labels[s_idx]
            elif labels is None and s_idx == 0:
                label = f"vehicle {i + 1}"
            ax.plot(p[:, 0], p[:, 1], color=color, linewidth=1.4, label=label)
            ax.plot(*p[0], marker="o", color=color, markersize=4)
            _draw_footprints(ax, scenario, sol, stride, color, i)
    ax.set_xlabel("x [m]")
    ax.set_ylabel("z [m]")
    ax.set_aspect("equal")
    ax.legend(loc="best", fontsize=8)
    pad = 0.05
    (x_lo, x_hi), (z_lo, z_hi) = scenario.region
    ax.set_xlim(x_lo - pad, x_hi + pad)
    ax.set_ylim(z_lo - pad, z_hi + pad)
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)
    return path


def plot_traces(scenario: Scenario, traces, path) -> Path:
    """Error norm against the applicable bound radius over time."""
    path = Path(path)
    fig, ax = plt.subplots(figsize=(7, 4))
    for idx, tr in enumerate(traces):
        color = _COLORS[tr.vehicle % len(_COLORS)]
        ax.plot(tr.times, tr.errors, color=color, alpha=0.4, linewidth=0.7)
        if idx < len(scenario.vehicles):
            ax.plot(tr.times, tr.teb, color=color, linewidth=1.6, linestyle="--")
    ax.set_xlabel("t [s]")
    ax.set_ylabel("tracking error [m]")
    ax.set_ylim(bottom=0.0)
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)
    return path


def plot_radius_profiles(times, profiles: dict, path) -> Path:
    """Error-bound radius against time for one or more wave models."""
    path = Path(path)
    fig, ax = plt.subplots(figsize=(7, 4))
    for label, radii in profiles.items():
        ax.plot(times, radii, label=label, linewidth=1.4)
    ax.set_xlabel("t [s]")
    ax.set_ylabel("bound radius [m]")
    ax.set_ylim(bottom=0.0)
    ax.legend(fontsize=8)
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)
    return path
