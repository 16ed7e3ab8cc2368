"""Figure rendering for the report/export paths.

Every export writes a delimited file first; these helpers render the matching
matplotlib figure next to it.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np


def render_population_figure(mean, std, out_path, title="Population gaze yaw"):
    """Mean yaw trace with a one-standard-deviation band."""
    mean = np.asarray(mean)
    std = np.asarray(std)
    t = np.arange(len(mean)) / 10.0
    fig, ax = plt.subplots(figsize=(10, 4))
    ax.plot(t, mean, color="tab:blue", lw=1.2, label="mean yaw")
    ax.fill_between(
        t, mean - std, mean + std, color="tab:gray", alpha=0.4, label="+- 1 std"
    )
    ax.set_xlabel("time [s]")
    ax.set_ylabel("yaw [deg]")
    ax.set_title(title)
    ax.legend(loc="upper right")
    fig.tight_layout()
    fig.savefig(out_path, dpi=120)
    plt.close(fig)


def render_command_figure(t_s, yaw_deg, switched, out_path, title="Gaze commands"):
    """Commanded gaze angle over time; switches marked."""
    t_s = np.asarray(t_s)
    yaw = np.asarray(yaw_deg)
    switched = np.asarray(switched, dtype=bool)
    fig, ax = plt.subplots(figsize=(10, 4))
    ax.step(t_s, yaw, where="post", color="tab:green", lw=1.2, label="commanded yaw")
    if switched.any():
        ax.scatter(
            t_s[switched], yaw[switched], color="tab:red", s=12, zorder=3,
            label="switch",
        )
    ax.set_xlabel("time [s]")
    ax.set_ylabel("yaw [deg]")
    ax.set_title(title)
    ax.legend(loc="upper right")
    fig.tight_layout()
    fig.savefig(out_path, dpi=120)
    plt.close(fig)
