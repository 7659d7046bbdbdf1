"""Figure rendering for CLI reports.

Every function writes a PNG next to the delimited outputs. Rendering is
deterministic (fixed sizes, no timestamps) so report artifacts can be hashed.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np
from matplotlib.collections import LineCollection

_DPI = 110


def flow_figure(records: np.ndarray, image_size, path, sampled=None, title="flow field"):
    """Quiver of the full field with the sampled subset highlighted."""
    records = np.asarray(records, dtype=float).reshape(-1, 4)
    w, h = image_size
    fig, ax = plt.subplots(figsize=(6, 6 * h / max(w, 1)))
    if len(records):
        ax.quiver(records[:, 0], records[:, 1], records[:, 2], records[:, 3],
                  angles="xy", scale_units="xy", scale=1.0,
                  color="0.75", width=0.0025)
    if sampled is not None and len(sampled.vectors):
        v = sampled.vectors
        ax.quiver(v[:, 0], v[:, 1], v[:, 2], v[:, 3],
                  angles="xy", scale_units="xy", scale=1.0,
                  color="crimson", width=0.004)
    ax.set_xlim(-0.5, w - 0.5)
    ax.set_ylim(h - 0.5, -0.5)  # image convention: y grows downward
    ax.set_aspect("equal")
    ax.set_title(title)
    fig.savefig(path, dpi=_DPI, bbox_inches="tight")
    plt.close(fig)


def energy_figure(arap_energies, srarap_energies, path, converged=None):
    steps = np.arange(1, len(arap_energies) + 1)
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.plot(steps, arap_energies, "o-", label="rigidity energy")
    ax.plot(steps, srarap_energies, "s--", label="+ rotation smoothness")
    if converged is not None:
        bad = [s for s, ok in zip(steps, converged) if not ok]
        if bad:
            ax.plot(bad, [arap_energies[s - 1] for s in bad], "rx",
                    markersize=10, label="not converged")
    ax.set_xlabel("progressive step")
    ax.set_ylabel("energy")
    ax.legend()
    fig.savefig(path, dpi=_DPI, bbox_inches="tight")
    plt.close(fig)


def wireframe_figure(mesh, proj_before, proj_after, path, title="deformation"):
    fig, ax = plt.subplots(figsize=(6, 6 * proj_before.height / max(proj_before.width, 1)))
    edges = mesh.edges()
    for proj, color, label in ((proj_before, "0.7", "before"),
                               (proj_after, "tab:blue", "after")):
        segs = np.stack([proj.points[edges[:, 0]], proj.points[edges[:, 1]]], axis=1)
        ax.add_collection(LineCollection(segs, colors=color, linewidths=0.5, label=label))
    ax.set_xlim(-0.5, proj_before.width - 0.5)
    ax.set_ylim(proj_before.height - 0.5, -0.5)
    ax.set_aspect("equal")
    ax.set_title(title)
    fig.savefig(path, dpi=_DPI, bbox_inches="tight")
    plt.close(fig)


def drag_figure(trace, path):
    """Loss curve and handle trajectory of a drag run."""
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(10, 4))
    flat = [v for alt in trace.losses for v in alt]
    if flat:
        ax1.plot(flat)
    ax1.set_xlabel("supervision iteration")
    ax1.set_ylabel("motion loss")
    for i in range(trace.handle_path[0].shape[0]):
        xs = [p[i, 0] for p in trace.handle_path]
        ys = [p[i, 1] for p in trace.handle_path]
        ax2.plot(xs, ys, "o-", markersize=3)
        ax2.plot(xs[0], ys[0], "g^", markersize=9)
        ax2.plot(xs[-1], ys[-1], "r*", markersize=12)
    ax2.invert_yaxis()
    ax2.set_aspect("equal")
    ax2.set_title(f"handle path (final MD {trace.mean_distance:.2f} px)")
    fig.savefig(path, dpi=_DPI, bbox_inches="tight")
    plt.close(fig)
