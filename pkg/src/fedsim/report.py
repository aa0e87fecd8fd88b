"""SVG figures for sweeps and trajectories."""

from __future__ import annotations

import os
from typing import Mapping

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from .errors import InvalidInput  # noqa: E402
from .experiments import SweepResult  # noqa: E402
from .federation import Trajectory  # noqa: E402


def _save(fig, path: str | os.PathLike) -> None:
    # fixed metadata and id salt keep repeated renders byte-identical
    with matplotlib.rc_context({"svg.hashsalt": "fedsim"}):
        fig.savefig(path, format="svg", metadata={"Date": None, "Creator": None})
    plt.close(fig)


def sweep_svg(result: SweepResult, path: str | os.PathLike) -> None:
    """Iterations-to-accuracy against the number of (active) devices."""
    if not result.rows:
        raise InvalidInput("sweep result has no rows")
    partial = any(r.k_active != r.n_devices for r in result.rows)
    xs = [r.k_active if partial else r.n_devices for r in result.rows]
    pts = [(x, r.iters_to_eps) for x, r in zip(xs, result.rows) if r.iters_to_eps is not None]
    fig, ax = plt.subplots(figsize=(5, 3.5))
    if pts:
        ax.plot([p[0] for p in pts], [p[1] for p in pts], marker="o")
    ax.set_xlabel("active devices K" if partial else "devices N")
    ax.set_ylabel(f"iterations to eps={result.eps:g}")
    ax.set_xscale("log", base=2)
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    _save(fig, path)


def trajectory_svg(curves: Mapping[str, Trajectory], path: str | os.PathLike, fstar: float = 0.0) -> None:
    """``F(w_bar_t) - fstar`` against ``t`` on a log-scaled y axis, one line per label."""
    if not curves or all(len(tr) == 0 for tr in curves.values()):
        raise InvalidInput("nothing to plot")
    fig, ax = plt.subplots(figsize=(5, 3.5))
    for label, tr in curves.items():
        gap = [max(v - fstar, 1e-300) for v in tr.loss]
        ax.plot(tr.t, gap, label=label)
    ax.set_yscale("log")
    ax.set_xlabel("iteration t")
    ax.set_ylabel("F(w) - F*" if fstar else "F(w)")
    ax.grid(True, alpha=0.3)
    if len(curves) > 1:
        ax.legend()
    fig.tight_layout()
    _save(fig, path)
