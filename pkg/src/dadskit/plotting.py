"""SVG figures written next to the CSV tables.

Everything renders through the non-interactive Agg backend and is saved with a
fixed ``svg.hashsalt`` so repeated runs produce byte-identical files.
"""

from __future__ import annotations

import io
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .persistence import atomic_write_text  # noqa: E402

RC = {
    "svg.hashsalt": "dadskit",
    "svg.fonttype": "none",
    "font.size": 9,
    "axes.titlesize": 10,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "figure.dpi": 100,
}


def _save(fig, path: str | Path) -> Path:
    path = Path(path)
    buf = io.StringIO()
    fig.savefig(buf, format="svg", bbox_inches="tight", metadata={"Date": None})
    plt.close(fig)
    atomic_write_text(path, buf.getvalue())
    return path


def _skill_colours(skills: np.ndarray) -> np.ndarray:
    """Colour 2-D skills by angle, other skill spaces by index."""
    skills = np.atleast_2d(skills)
    if skills.shape[1] >= 2:
        hue = (np.arctan2(skills[:, 1], skills[:, 0]) + np.pi) / (2 * np.pi)
    else:
        hue = np.linspace(0, 1, len(skills), endpoint=False)
    return plt.get_cmap("hsv")(hue)


def plot_traces(positions: np.ndarray, skills: np.ndarray, path, title: str = "skill rollouts", goal=None) -> Path:
    """x-y traces, positions shaped (n, H+1, 2)."""
    with plt.rc_context(RC):
        fig, ax = plt.subplots(figsize=(4.5, 4.5))
        for p, c in zip(positions, _skill_colours(skills)):
            ax.plot(p[:, 0], p[:, 1], color=c, lw=1.0)
            ax.plot(p[-1, 0], p[-1, 1], "o", color=c, ms=3)
        ax.plot(0, 0, "k+", ms=8)
        if goal is not None:
            ax.plot(goal[0], goal[1], "k*", ms=10)
        ax.set_aspect("equal", adjustable="datalim")
        ax.set_xlabel("x")
        ax.set_ylabel("y")
        ax.set_title(title)
        return _save(fig, path)


def plot_orientation(headings: np.ndarray, path) -> Path:
    """Heatmap of final-displacement heading over a square skill grid."""
    n = headings.shape[0]
    with plt.rc_context(RC):
        fig, ax = plt.subplots(figsize=(4.5, 4))
        im = ax.imshow(
            np.degrees(headings).T, origin="lower", extent=(-1, 1, -1, 1), cmap="twilight", vmin=-180, vmax=180
        )
        fig.colorbar(im, ax=ax, label="heading (deg)")
        ax.set_xlabel("z1")
        ax.set_ylabel("z2")
        ax.set_title(f"orientation map ({n}x{n})")
        return _save(fig, path)


def plot_curves(curves: dict[str, np.ndarray], path, ylabel: str, title: str, logy: bool = False) -> Path:
    """One line per named curve against step index (1-based)."""
    with plt.rc_context(RC):
        fig, ax = plt.subplots(figsize=(5, 3.2))
        for name, y in curves.items():
            y = np.asarray(y, dtype=float)
            ax.plot(np.arange(1, len(y) + 1), y, label=name, lw=1.2)
        if logy:
            ax.set_yscale("log")
        ax.set_xlabel("step")
        ax.set_ylabel(ylabel)
        ax.set_title(title)
        if len(curves) > 1:
            ax.legend(frameon=False)
        return _save(fig, path)


def plot_metrics(rows: list[dict], path) -> Path:
    """Training curves from ``metrics.csv`` rows."""
    it = np.array([r["iteration"] for r in rows])
    panels = [
        ("mean_intrinsic_reward", "intrinsic reward"),
        ("dynamics_loss_after", "dynamics NLL"),
        ("critic_loss", "critic loss"),
    ]
    with plt.rc_context(RC):
        fig, axes = plt.subplots(1, len(panels), figsize=(10, 2.8))
        for ax, (key, label) in zip(axes, panels):
            ax.plot(it, [r[key] for r in rows], lw=1.0)
            ax.set_xlabel("iteration")
            ax.set_title(label)
        fig.tight_layout()
        return _save(fig, path)


def plot_deltas(deltas: dict[str, list], path) -> Path:
    """Per-goal Δ for one or more methods."""
    with plt.rc_context(RC):
        fig, ax = plt.subplots(figsize=(5, 3))
        width = 0.8 / max(len(deltas), 1)
        for j, (name, d) in enumerate(deltas.items()):
            x = np.arange(len(d)) + j * width
            ax.bar(x, d, width=width, label=f"{name} (mean {np.mean(d):.3f})")
        ax.set_xlabel("goal")
        ax.set_ylabel("normalized distance")
        ax.legend(frameon=False)
        return _save(fig, path)
