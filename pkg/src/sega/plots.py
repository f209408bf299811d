"""Figure rendering for sample scatters and strength-sweep curves."""
from __future__ import annotations

import os

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .metrics import SweepReport
from .mixture import MixtureScene, argmax_component

__all__ = ["save_sample_scatter", "save_sweep_curve"]

# stable ids inside SVG output so reruns produce comparable files
matplotlib.rcParams["svg.hashsalt"] = "sega"


def _atomic_savefig(fig, path: str) -> None:
    suffix = os.path.splitext(path)[1].lstrip(".") or "svg"
    tmp = f"{path}.tmp.{os.getpid()}"
    fig.savefig(tmp, format=suffix, metadata={"Date": None})
    os.replace(tmp, path)


def save_sample_scatter(path: str, samples: list[np.ndarray], scene: MixtureScene) -> None:
    """Scatter of final samples colored by argmax component, means annotated.

    Scenes with more than two dimensions are shown on their first two axes.
    """
    points = np.stack(samples)
    if points.shape[1] == 1:
        points = np.column_stack([points[:, 0], np.zeros(len(points))])
    labels = np.array([argmax_component(scene, x) for x in samples])

    fig, ax = plt.subplots(figsize=(6, 6))
    cmap = plt.get_cmap("tab10")
    for k, component in enumerate(scene.components):
        chosen = points[labels == k]
        name = "+".join(sorted(component.tags))
        if len(chosen):
            ax.scatter(chosen[:, 0], chosen[:, 1], s=12, color=cmap(k % 10), label=name)
        mean = component.mean
        mx = mean[0]
        my = mean[1] if mean.shape[0] > 1 else 0.0
        ax.scatter([mx], [my], marker="x", s=90, color=cmap(k % 10))
        ax.annotate(name, (mx, my), textcoords="offset points", xytext=(6, 6), fontsize=8)
    ax.set_xlabel("x[0]")
    ax.set_ylabel("x[1]")
    ax.set_title("final samples by dominant component")
    ax.legend(loc="best", fontsize=8)
    fig.tight_layout()
    _atomic_savefig(fig, path)
    plt.close(fig)


def save_sweep_curve(path: str, report: SweepReport) -> None:
    """Mean target posterior versus edit strength, with standard-error bars."""
    scales = [p.edit_scale for p in report.points]
    means = [p.mean_posterior for p in report.points]
    errors = [p.standard_error for p in report.points]

    fig, ax = plt.subplots(figsize=(6, 4))
    ax.errorbar(scales, means, yerr=errors, marker="o", capsize=3)
    ax.set_xlabel("edit strength s_e")
    ax.set_ylabel(f"mean posterior of {report.target}")
    ax.set_ylim(-0.02, 1.02)
    ax.set_title(f"strength sweep (spearman {report.spearman:+.3f})")
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    _atomic_savefig(fig, path)
    plt.close(fig)
