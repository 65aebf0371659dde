"""
Static PNG figures drawn from the CSV files a run leaves in its output
directory, so a figure can always be regenerated without re-solving.
"""

from __future__ import annotations

import csv
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402


def _read_csv(path):
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    return rows[0], rows[1:]


def _save(fig, path):
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def plot_total_load(out_dir, iterations=(1, 5, 10)):
    header, rows = _read_csv(Path(out_dir) / "total_load.csv")
    data = np.array(rows, dtype=float)
    fig, ax = plt.subplots(figsize=(8, 4))
    steps = np.arange(data.shape[0])
    ax.plot(steps, data[:, 0], "k--", lw=1.2, label="baseline")
    n_iter = data.shape[1] - 1
    for it in iterations:
        if it < n_iter:
            ax.plot(steps, data[:, it], lw=0.8, alpha=0.6, label=f"iteration {it}")
    ax.plot(steps, data[:, -1], lw=2.0, label=f"iteration {n_iter}")
    ax.set_xlabel("step")
    ax.set_ylabel("total load (kW)")
    ax.legend(frameon=False, fontsize=8)
    return _save(fig, Path(out_dir) / "total_load.png")


def plot_voltages(out_dir, nu_lower=None):
    header, rows = _read_csv(Path(out_dir) / "voltages.csv")
    step = np.array([int(r[0]) for r in rows])
    node = np.array([int(r[2]) for r in rows])
    v_lin = np.array([float(r[3]) for r in rows])
    v_dist = np.array([float(r[4]) for r in rows])
    K, h = step.max() + 1, node.max()
    lin = np.full((h, K), np.nan)
    dist = np.full((h, K), np.nan)
    lin[node - 1, step] = v_lin
    dist[node - 1, step] = v_dist
    worst = int(np.nanargmin(lin.min(axis=1)))
    fig, ax = plt.subplots(figsize=(8, 4))
    for k in range(h):
        ax.plot(lin[k], color="0.75", lw=0.7)
    ax.plot(lin[worst], "C0", lw=1.8, label=f"node {worst + 1}, linearised")
    ax.plot(dist[worst], "C3", lw=1.2, ls="--", label=f"node {worst + 1}, full power flow")
    if nu_lower is not None:
        ax.axhline(nu_lower, color="k", lw=0.8, ls=":", label="lower limit")
    ax.set_xlabel("step")
    ax.set_ylabel("|V| (p.u.)")
    ax.legend(frameon=False, fontsize=8)
    return _save(fig, Path(out_dir) / "voltages.png")


def plot_duals(out_dir):
    header, rows = _read_csv(Path(out_dir) / "duals.csv")
    it = np.array([int(r[0]) for r in rows])
    node = np.array([int(r[2]) for r in rows])
    lam = np.array([float(r[3]) for r in rows])
    n_it, h = it.max(), node.max()
    per_node = np.zeros((n_it, h))
    np.add.at(per_node, (it - 1, node - 1), lam)
    fig, ax = plt.subplots(figsize=(8, 4))
    for k in range(h):
        if np.any(per_node[:, k] > 0):
            ax.plot(np.arange(1, n_it + 1), per_node[:, k], lw=1.2, label=f"node {k + 1}")
    ax.set_xlabel("iteration")
    ax.set_ylabel("sum of multipliers over steps")
    if ax.get_legend_handles_labels()[0]:
        ax.legend(frameon=False, fontsize=8)
    return _save(fig, Path(out_dir) / "duals.png")


def plot_gap(out_dir):
    header, rows = _read_csv(Path(out_dir) / "gap.csv")
    data = np.array(rows, dtype=float)
    fig, ax = plt.subplots(figsize=(6, 4))
    floor = np.finfo(float).tiny
    for j, name in enumerate(header[1:], start=1):
        ax.semilogy(data[:, 0], np.maximum(np.abs(data[:, j]), floor), lw=1.5, label=name)
    ax.set_xlabel("iteration")
    ax.set_ylabel("|objective - optimum|")
    ax.legend(frameon=False)
    return _save(fig, Path(out_dir) / "gap.png")


def render_all(out_dir, nu_lower=None) -> list[Path]:
    """Draw every figure whose source CSV exists in ``out_dir``."""
    out_dir = Path(out_dir)
    made = []
    if (out_dir / "total_load.csv").exists():
        made.append(plot_total_load(out_dir))
    if (out_dir / "voltages.csv").exists():
        made.append(plot_voltages(out_dir, nu_lower))
    if (out_dir / "duals.csv").exists():
        made.append(plot_duals(out_dir))
    if (out_dir / "gap.csv").exists():
        made.append(plot_gap(out_dir))
    return made
