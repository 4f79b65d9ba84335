"""Figure rendering for the CLI report paths (always to files, never a GUI)."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import matplotlib.tri as mtri  # noqa: E402
import numpy as np  # noqa: E402

_EDGE_COLORS = {"dirichlet": "tab:blue", "neumann": "tab:green",
                "crack_plus": "tab:red", "crack_minus": "tab:orange"}


def _triangulation(mesh):
    return mtri.Triangulation(mesh.nodes[:, 0], mesh.nodes[:, 1],
                              mesh.triangles)


def save_mesh_figure(mesh, path):
    fig, ax = plt.subplots(figsize=(6, 6))
    ax.triplot(_triangulation(mesh), color="0.7", lw=0.5)
    seen = set()
    for a, b, tag in mesh.boundary_edges:
        xs = [mesh.nodes[a, 0], mesh.nodes[b, 0]]
        ys = [mesh.nodes[a, 1], mesh.nodes[b, 1]]
        label = tag if tag not in seen else None
        seen.add(tag)
        ax.plot(xs, ys, color=_EDGE_COLORS[tag], lw=1.6, label=label)
    if mesh.crack_tip is not None:
        ax.plot(*mesh.nodes[mesh.crack_tip], "k*", ms=10, label="tip")
    ax.set_aspect("equal")
    ax.legend(loc="upper right", fontsize=8)
    ax.set_title(f"{mesh.n_nodes} nodes, {mesh.n_triangles} triangles")
    fig.savefig(path, dpi=150, bbox_inches="tight")
    plt.close(fig)


def save_solution_figure(field, path, title="solution"):
    fig, ax = plt.subplots(figsize=(6.4, 5.2))
    tpc = ax.tripcolor(_triangulation(field.mesh), field.values,
                       shading="gouraud", cmap="viridis")
    fig.colorbar(tpc, ax=ax, shrink=0.9)
    ax.set_aspect("equal")
    ax.set_title(title)
    fig.savefig(path, dpi=150, bbox_inches="tight")
    plt.close(fig)


def save_convergence_figure(hs, series, path, target=None, ylabel="value"):
    """Log-log error plot when a target is known, otherwise value vs h."""
    fig, ax = plt.subplots(figsize=(5.6, 4.2))
    hs = np.asarray(hs, dtype=float)
    if target is not None:
        anchor = 0.0
        for label, vals in series.items():
            errs = np.maximum(np.abs(np.asarray(vals, float) - target), 1e-18)
            ax.loglog(hs, errs, "o-", label=label)
            anchor = max(anchor, errs[0])
        ax.loglog(hs, anchor * hs / hs[0], "k--", lw=0.8, label="first order")
        ax.set_ylabel(f"|{ylabel} - target|")
    else:
        for label, vals in series.items():
            ax.semilogx(hs, np.asarray(vals, float), "o-", label=label)
        ax.set_ylabel(ylabel)
    ax.set_xlabel("mesh size h")
    ax.grid(True, which="both", alpha=0.3)
    ax.legend(fontsize=8)
    fig.savefig(path, dpi=150, bbox_inches="tight")
    plt.close(fig)


def save_series_figure(x, y, path, xlabel, ylabel, ref=None, ref_label=None):
    fig, ax = plt.subplots(figsize=(5.6, 4.2))
    ax.plot(x, y, "o-")
    if ref is not None:
        ax.axhline(ref, color="k", ls="--", lw=0.8, label=ref_label)
        ax.legend(fontsize=8)
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    ax.grid(True, alpha=0.3)
    fig.savefig(path, dpi=150, bbox_inches="tight")
    plt.close(fig)


def save_discrepancy_figure(labels, gaps, tols, path):
    fig, ax = plt.subplots(figsize=(6.4, 4.2))
    pos = np.arange(len(labels))
    ax.bar(pos, np.maximum(gaps, 1e-18), color="tab:blue", label="|domain - FD|")
    ax.plot(pos, tols, "r_", ms=20, label="tolerance")
    ax.set_yscale("log")
    ax.set_xticks(pos)
    ax.set_xticklabels([l[:26] for l in labels], rotation=20, ha="right",
                       fontsize=7)
    ax.set_ylabel("discrepancy")
    ax.legend(fontsize=8)
    fig.savefig(path, dpi=150, bbox_inches="tight")
    plt.close(fig)
