"""Delimited reports and their companion figures.

Sweep grids are written as one CSV row per cell (task, axis value, mean MSE,
std, seeds) plus a JSON summary, and rendered as a heatmap (ratio/norm sweeps)
or a bar chart (factorization ablation) next to the delimited output. The
inference report path can likewise render per-slice loss traces.
"""

from __future__ import annotations

import csv

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .synthbench import SweepReport


def write_sweep_csv(report: SweepReport, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["task", report.axis_name, "mean_mse", "std_mse", "num_seeds", "vacuous"])
        for c in report.cells:
            writer.writerow(
                [c.task, c.axis_value, repr(c.mean_mse), repr(c.std_mse), c.num_seeds, int(c.vacuous)]
            )


def save_sweep_figure(report: SweepReport, path) -> None:
    """Render the sweep grid: heatmap for ratio/norm sweeps, bars for the ablation."""
    if report.kind == "ablation":
        _ablation_bars(report, path)
    else:
        _grid_heatmap(report, path)


def _grid_heatmap(report: SweepReport, path) -> None:
    tasks, axis, grid = report.cell_grid()
    fig, ax = plt.subplots(figsize=(1.6 + 1.1 * len(tasks), 1.2 + 0.7 * len(axis)))
    im = ax.imshow(grid.T, aspect="auto", cmap="viridis", origin="lower")
    ax.set_xticks(range(len(tasks)), tasks, rotation=30, ha="right")
    ax.set_yticks(range(len(axis)), [str(v) for v in axis])
    ax.set_xlabel("task")
    ax.set_ylabel(report.axis_name)
    for i in range(len(tasks)):
        for j in range(len(axis)):
            if np.isfinite(grid[i, j]):
                ax.text(i, j, f"{grid[i, j]:.3g}", ha="center", va="center", fontsize=8,
                        color="white" if grid[i, j] < np.nanmax(grid) / 2 else "black")
    fig.colorbar(im, ax=ax, label="mean MSE")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def _ablation_bars(report: SweepReport, path) -> None:
    tasks, methods, grid = report.cell_grid()
    stds = np.zeros_like(grid)
    for c in report.cells:
        stds[tasks.index(c.task), methods.index(c.axis_value)] = c.std_mse
    width = 0.8 / len(tasks)
    fig, ax = plt.subplots(figsize=(1.8 + 1.2 * len(methods), 3.6))
    xs = np.arange(len(methods))
    for t, task in enumerate(tasks):
        ax.bar(xs + t * width, grid[t], width, yerr=stds[t], capsize=3, label=task)
    ax.set_xticks(xs + width * (len(tasks) - 1) / 2, [str(m) for m in methods])
    ax.set_ylabel("mean MSE")
    ax.set_xlabel("factor composition")
    if len(tasks) > 1:
        ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def save_loss_trace_figure(slice_reports, path) -> None:
    """Training loss per iteration for every trained slice of one inference run."""
    fig, ax = plt.subplots(figsize=(6, 3.6))
    any_trace = False
    for rep in slice_reports:
        if rep.train_report is not None and rep.train_report.loss_trace:
            ax.plot(rep.train_report.loss_trace, label=f"slice {rep.index}")
            any_trace = True
    ax.set_xlabel("iteration")
    ax.set_ylabel("training loss")
    if any_trace:
        ax.set_yscale("log")
        if len([r for r in slice_reports if r.train_report]) <= 12:
            ax.legend(fontsize=8)
    else:
        ax.text(0.5, 0.5, "no trained slices", ha="center", va="center", transform=ax.transAxes)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
