"""Artifact writers: delimited traces, JSON summaries, PGM grids, figures.

Every run directory gets machine-readable CSV/JSON next to rendered PNG
figures (Agg backend; nothing here needs a display).  Floats in CSVs are
written with repr so re-parsing is bit-exact.
"""

from __future__ import annotations

import csv
import json
import os

import matplotlib
matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np


def ensure_dir(path):
    os.makedirs(path, exist_ok=True)
    return path


def write_json(path, doc):
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2, default=_jsonable)
    return path


def _jsonable(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating,)):
        return float(obj)
    raise TypeError(f"not JSON serialisable: {type(obj)}")


def write_trace_csv(path, trace, channels=("positions", "velocities",
                                           "lengths", "control")):
    """Flatten recorded channels to one row per step."""
    present = [c for c in channels if getattr(trace, c, None) is not None]
    header = ["t"]
    for c in present:
        arr = getattr(trace, c)
        if arr.ndim == 3:  # (T, N, 2)
            for i in range(arr.shape[1]):
                header += [f"{c[0]}{i}x", f"{c[0]}{i}y"]
        else:              # (T, S)
            header += [f"{c}_{j}" for j in range(arr.shape[1])]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in range(len(trace.times)):
            cells = [repr(float(trace.times[row]))]
            for c in present:
                cells += [repr(float(v)) for v in getattr(trace, c)[row].reshape(-1)]
            writer.writerow(cells)
    return path


def write_rows_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in rows:
            writer.writerow([repr(v) if isinstance(v, float) else v for v in row])
    return path


def write_pgm(path, grid, levels=255):
    """ASCII PGM of an integer grid (label maps: label*25, invalid white)."""
    grid = np.asarray(grid)
    img = np.where(grid < 0, levels, grid * 25).astype(int)
    with open(path, "w") as fh:
        fh.write(f"P2\n{img.shape[1]} {img.shape[0]}\n{levels}\n")
        for row in img:
            fh.write(" ".join(str(v) for v in row) + "\n")
    return path


# ---------------------------------------------------------------- figures

def _save(fig, path):
    fig.savefig(path, dpi=120, bbox_inches="tight")
    plt.close(fig)
    return path


def figure_loss(path, loss_history, title="training loss"):
    fig, ax = plt.subplots(figsize=(5, 3))
    ax.plot(loss_history, lw=1)
    ax.set_yscale("log")
    ax.set_xlabel("update")
    ax.set_ylabel("loss")
    ax.set_title(title)
    return _save(fig, path)


def figure_trajectory(path, cmp_xy, target=None, title="CMP trajectory"):
    fig, ax = plt.subplots(figsize=(4, 4))
    ax.plot(cmp_xy[:, 0], cmp_xy[:, 1], lw=0.8, label="actual")
    if target is not None:
        ax.plot(target[:, 0], target[:, 1], "--", lw=0.8, label="target")
    ax.set_aspect("equal")
    ax.legend(fontsize=8)
    ax.set_title(title)
    return _save(fig, path)


def figure_label_map(path, label_map):
    fig, ax = plt.subplots(figsize=(4, 4))
    masked = np.ma.masked_less(label_map.labels, 0)
    im = ax.imshow(masked, origin="lower", cmap="tab10", vmin=0, vmax=9,
                   extent=[label_map.grid_x[0], label_map.grid_x[-1],
                           label_map.grid_y[0], label_map.grid_y[-1]])
    fig.colorbar(im, ax=ax, ticks=range(10))
    ax.set_title(f"mass {label_map.mass_id}, source {label_map.source_label}, "
                 f"size {label_map.size:.2f}")
    ax.set_xlabel("dx")
    ax.set_ylabel("dy")
    return _save(fig, path)


def figure_perturb(path, reports, labels=None):
    fig, ax = plt.subplots(figsize=(5, 3))
    for i, rep in enumerate(np.atleast_1d(reports)):
        name = labels[i] if labels else rep.rule
        ax.plot(rep.sigmas, rep.rates, marker="o", ms=3, label=name)
    ax.set_xlabel("perturbation std")
    ax.set_ylabel("return rate")
    ax.set_ylim(-0.05, 1.05)
    ax.legend(fontsize=8)
    return _save(fig, path)


def figure_bifurcation(path, result, coord="x"):
    fig, ax = plt.subplots(figsize=(6, 3))
    extrema = result.extrema_x if coord == "x" else result.extrema_y
    for f, ex in zip(result.forces, extrema):
        if len(ex):
            ax.plot(np.full(len(ex), f), ex, ".", ms=1.5, color="tab:blue")
    ax.set_xlabel("wind force")
    ax.set_ylabel(f"CMP {coord} local maxima")
    return _save(fig, path)


def figure_ipc(path, profile, title="capacity profile"):
    sums = profile.by_degree()
    degrees = sorted(sums)
    fig, ax = plt.subplots(figsize=(4, 3))
    ax.bar([str(d) for d in degrees], [sums[d] for d in degrees],
           color=["tab:blue", "tab:orange", "tab:green", "tab:red"][:len(degrees)])
    ax.set_xlabel("polynomial degree")
    ax.set_ylabel("capacity")
    ax.set_title(f"{title} (total {profile.total:.3f}, rank {profile.rank})")
    return _save(fig, path)


def figure_speed(path, times, speeds, target=None, events=None):
    fig, ax = plt.subplots(figsize=(6, 3))
    ax.plot(times, speeds, lw=0.8, label="speed")
    if target is not None:
        ax.plot(times, target, "--", lw=0.8, label="target")
    if events:
        for t_ev in events:
            ax.axvline(t_ev, color="orange", alpha=0.4)
    ax.set_xlabel("time [s]")
    ax.set_ylabel("mean x speed")
    ax.legend(fontsize=8)
    return _save(fig, path)


def figure_series(path, targets, outputs, washout=0):
    fig, ax = plt.subplots(figsize=(6, 3))
    ax.plot(targets, lw=0.8, label="target")
    ax.plot(outputs, lw=0.8, label="output")
    if washout:
        ax.axvspan(0, washout, color="gray", alpha=0.15)
    ax.set_xlabel("task step")
    ax.legend(fontsize=8)
    return _save(fig, path)
