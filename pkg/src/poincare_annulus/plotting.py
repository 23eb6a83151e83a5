"""SVG figures: the annulus construction, planar cycles and the sweep diagrams.

Figures are drawn on bare ``Figure`` objects with the Agg canvas so nothing
touches pyplot state. The SVG writer is pinned (hash salt, no date) so equal
inputs give byte-identical files.
"""
from __future__ import annotations

from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")
from matplotlib.figure import Figure  # noqa: E402

import numpy as np  # noqa: E402

from .annulus import Classification, NotCorrectEvidence  # noqa: E402
from .model import Params, scalar_fields  # noqa: E402
from .planar import LimitCycle  # noqa: E402

__all__ = ["plot_annulus", "plot_cycle", "plot_sweep", "plot_model_map", "save_svg"]

matplotlib.rcParams["svg.hashsalt"] = "poincare-annulus"
matplotlib.rcParams["svg.fonttype"] = "none"


def save_svg(fig: Figure, path: str | Path, description: str = "") -> Path:
    path = Path(path)
    meta = {"Date": None, "Creator": None}
    if description:
        meta["Description"] = description
    fig.savefig(path, format="svg", metadata=meta)
    return path


def _curves(ax, p: Params, s_lo: float = 0.0):
    sf = scalar_fields(p)
    d = sf.derived
    s = np.linspace(max(d.tau, s_lo), 1.0, 600)
    ax.plot(sf.m_star(s), s, color="k", lw=1.2, label="tangency curve")
    s_all = np.linspace(0.0, 1.0, 600)
    ax.plot(sf.S(1, s_all), s_all, color="tab:blue", lw=0.8, ls="--", label="isocline S1")
    ax.plot(sf.S(2, s_all), s_all, color="tab:green", lw=0.8, ls="--", label="isocline S2")


def plot_annulus(c: Classification, path: str | Path, description: str = "") -> Path:
    """Tangency curve, isoclines, segment A, both boundaries and the marker points."""
    fig = Figure(figsize=(6.0, 5.0))
    ax = fig.add_subplot()
    g = c.geometry
    p = g.params if g is not None else None
    if p is not None:
        _curves(ax, p)
        seg = g.segment.points(400)
        ax.plot(seg[:, 0], seg[:, 1], color="tab:red", lw=3, alpha=0.6, label="segment A")
        ax.plot(g.outer[:, 0], g.outer[:, 1], color="tab:purple", lw=1.0, label="outer boundary")
        if g.inner is not None:
            ax.plot(g.inner[:, 0], g.inner[:, 1], color="tab:orange", lw=1.0, label="inner boundary")
        if isinstance(c.inner, NotCorrectEvidence) and c.inner.orbit is not None:
            _, poly = c.inner.orbit.polyline()
            ax.plot(poly[:, 0], poly[:, 1], color="tab:orange", lw=0.6, alpha=0.7, label="inner orbit")
        marks = {"O1": g.segment.o1, "O2": g.segment.o2, "L1": g.L1, "L2": g.L2, "saddle": g.saddle}
        if g.M is not None:
            marks["M"] = g.M
        for name, (m, s) in marks.items():
            ax.plot([m], [s], "o", ms=4, color="k")
            ax.annotate(name, (m, s), textcoords="offset points", xytext=(4, 4), fontsize=8)
        ax.set_xlim(0.0, 1.05 * float(np.max(g.outer[:, 0])))
    ax.set_ylim(0.0, 1.02)
    ax.set_xlabel("m")
    ax.set_ylabel("s")
    ax.set_title(c.verdict)
    ax.legend(fontsize=7, loc="upper right")
    fig.tight_layout()
    return save_svg(fig, path, description)


def plot_cycle(cycle: LimitCycle, p: Params, path: str | Path, description: str = "") -> Path:
    fig = Figure(figsize=(5.0, 4.5))
    ax = fig.add_subplot()
    _curves(ax, p)
    poly = cycle.polyline
    ax.plot(poly[:, 0], poly[:, 1], color="tab:orange", lw=1.0, label=f"{cycle.stability} cycle")
    ax.plot([cycle.anchor[0]], [cycle.anchor[1]], "o", ms=4, color="k")
    ax.set_xlim(0.0, 1.1 * float(np.max(poly[:, 0])))
    ax.set_ylim(0.0, 1.02)
    ax.set_xlabel("m")
    ax.set_ylabel("s")
    ax.legend(fontsize=7, loc="upper right")
    fig.tight_layout()
    return save_svg(fig, path, description)


def plot_sweep(records: Sequence, path: str | Path, description: str = "") -> Path:
    """Bifurcation diagram: nu horizontal, post-transient xi vertical."""
    fig = Figure(figsize=(7.0, 4.5))
    ax = fig.add_subplot()
    for r in records:
        if len(r.xi):
            ax.plot(np.full(len(r.xi), r.nu), r.xi, ",", color="k")
        else:
            ax.axvline(r.nu, color="0.85", lw=0.5)
    ax.set_xlabel(r"$\nu$")
    ax.set_ylabel(r"$\xi$")
    ax.set_ylim(-0.02, 1.02)
    fig.tight_layout()
    return save_svg(fig, path, description)


def plot_model_map(results: Sequence, path: str | Path, description: str = "") -> Path:
    """Orbit diagram of the one-dimensional map, beta horizontal."""
    fig = Figure(figsize=(7.0, 4.5))
    ax = fig.add_subplot()
    for beta, orbit, _ in results:
        if len(orbit):
            ax.plot(np.full(len(orbit), beta), orbit, ",", color="k")
    ax.set_xlabel(r"$\beta$")
    ax.set_ylabel("v")
    fig.tight_layout()
    return save_svg(fig, path, description)
