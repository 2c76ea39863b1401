"""Figure rendering for the report paths.

Every figure is drawn from already-computed arrays with the Agg backend,
so rendering works headless and never feeds back into the numbers.  The
delimited tables stay the canonical record; figures are companions written
next to them.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

__all__ = [
    "contraction_figure",
    "convergence_figure",
    "residuals_figure",
    "solution_figure",
]

_DPI = 130


def convergence_figure(path: str, h, err, label: str) -> str:
    h = np.asarray(h, dtype=float)
    err = np.asarray(err, dtype=float)
    fig, ax = plt.subplots(figsize=(5.0, 3.6))
    ax.loglog(h, err, "o-", label=label)
    anchor = err[0] / h[0]
    ax.loglog(h, anchor * h, "--", color="gray", label="slope 1")
    ax.set_xlabel("h")
    ax.set_ylabel("L1 error at final time")
    ax.legend()
    ax.grid(True, which="both", alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=_DPI)
    plt.close(fig)
    return path


def residuals_figure(path: str, face_max, element_max) -> str:
    fig, ax = plt.subplots(figsize=(5.0, 3.6))
    slabs = np.arange(len(face_max))
    ax.semilogy(slabs, np.maximum(np.abs(face_max), 1e-18), label="|face| max")
    ax.semilogy(slabs, np.maximum(np.abs(element_max), 1e-18),
                label="|element| max")
    ax.set_xlabel("slab")
    ax.set_ylabel("entropy residual magnitude")
    ax.legend()
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=_DPI)
    plt.close(fig)
    return path


def contraction_figure(path: str, series) -> str:
    series = np.asarray(series, dtype=float)
    fig, ax = plt.subplots(figsize=(5.0, 3.6))
    ax.plot(np.arange(len(series)), series, "o-")
    ax.set_xlabel("slice")
    ax.set_ylabel("flux-weighted L1 distance")
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=_DPI)
    plt.close(fig)
    return path


def solution_figure(path: str, mesh, values_initial, values_final) -> str:
    fig, ax = plt.subplots(figsize=(5.4, 3.6))
    if mesh.n == 1:
        nodes0 = mesh.slabs[0].template.nodes_lo
        nodesT = mesh.slabs[-1].template.nodes_up
        ax.stairs(values_initial, nodes0, label="t = 0", alpha=0.7)
        ax.stairs(values_final, nodesT, label="t = T")
        ax.set_xlabel("x")
        ax.set_ylabel("u")
        ax.legend()
        ax.grid(True, alpha=0.3)
    else:
        tpl = mesh.slabs[-1].template
        nx, ny = len(tpl.xs) - 1, len(tpl.ys) - 1
        grid = np.asarray(values_final).reshape(ny, nx)
        im = ax.pcolormesh(tpl.xs, tpl.ys, grid, shading="flat")
        fig.colorbar(im, ax=ax, label="u at t = T")
        ax.set_xlabel("x")
        ax.set_ylabel("y")
        ax.set_aspect("equal")
    fig.tight_layout()
    fig.savefig(path, dpi=_DPI)
    plt.close(fig)
    return path
