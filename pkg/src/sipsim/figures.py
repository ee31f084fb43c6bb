"""Figure rendering for the report paths.

Every function takes data that is already in the report (no extra
simulation) and writes a PNG next to the delimited output. Rendering is
best effort: callers treat a figure failure as a warning, never as a run
failure. The Agg backend keeps this usable in headless environments.
"""

from __future__ import annotations

import math
from typing import Optional

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

__all__ = [
    "plot_trace_trajectory",
    "plot_cbm_paths",
    "plot_check_values",
    "plot_tau_comparison",
    "render_suite_figures",
]

_EDGE = "#1f6f8b"
_FILL = "#fca311"


def plot_trace_trajectory(records: list[dict], L: int, out_path) -> None:
    """Condensate pile positions against the trace clock.

    records: dicts with t_trace, positions, masses (the simulate stream).
    Pile positions are drawn as dots sized by mass; wrap-around is left
    unconnected, which is fine for a scatter.
    """
    fig, ax = plt.subplots(figsize=(7, 3.2))
    ts, xs, ms = [], [], []
    for rec in records:
        for x, m in zip(rec["positions"], rec["masses"]):
            ts.append(rec["t_trace"])
            xs.append(x)
            ms.append(m)
    if ts:
        sizes = 4.0 + 40.0 * np.array(ms, dtype=float) / max(ms)
        ax.scatter(ts, xs, s=sizes, c=_EDGE, alpha=0.6, linewidths=0)
    ax.set_xlabel("trace time")
    ax.set_ylabel("site")
    ax.set_ylim(-0.5, L - 0.5)
    ax.set_title("condensate piles")
    fig.tight_layout()
    fig.savefig(out_path, dpi=130)
    plt.close(fig)


def plot_cbm_paths(times: np.ndarray, lifts: np.ndarray, out_path) -> None:
    """Unwrapped cluster trajectories, one line per label."""
    fig, ax = plt.subplots(figsize=(7, 3.2))
    lifts = np.asarray(lifts)
    for j in range(lifts.shape[1]):
        ax.plot(times, lifts[:, j], lw=0.9)
    ax.set_xlabel("time")
    ax.set_ylabel("unwrapped position")
    ax.set_title("coalescing circle diffusions")
    fig.tight_layout()
    fig.savefig(out_path, dpi=130)
    plt.close(fig)


def plot_check_values(checks: list[dict], out_path, title: str = "checks") -> None:
    """Horizontal bar chart of check values against their thresholds.

    Only checks whose value and threshold are both positive scalars are
    drawn (trend or boolean checks have no sensible bar); the bar is the
    value/threshold ratio, so 1.0 is the pass boundary.
    """
    rows = []
    for ch in checks:
        val, thr = ch.get("value"), ch.get("threshold")
        if (
            isinstance(val, (int, float))
            and isinstance(thr, (int, float))
            and not isinstance(val, bool)
            and not isinstance(thr, bool)
            and thr > 0
            and val >= 0
        ):
            rows.append((ch["name"], val / thr, ch["pass"]))
    if not rows:
        return
    fig_h = 1.2 + 0.34 * len(rows)
    fig, ax = plt.subplots(figsize=(7.5, fig_h))
    ypos = np.arange(len(rows))[::-1]
    ratios = [r[1] for r in rows]
    colors = [_EDGE if r[2] else "#d62828" for r in rows]
    ax.barh(ypos, ratios, color=colors, height=0.62)
    ax.axvline(1.0, color="black", lw=1.0, ls="--")
    ax.set_yticks(ypos)
    ax.set_yticklabels([r[0] for r in rows], fontsize=8)
    ax.set_xlabel("value / threshold (dashed line = limit)")
    ax.set_title(title)
    upper = max(1.15, min(max(ratios) * 1.15, 20.0))
    ax.set_xlim(0, upper)
    fig.tight_layout()
    fig.savefig(out_path, dpi=130)
    plt.close(fig)


def _ecdf(sample: np.ndarray):
    x = np.sort(sample)
    y = np.arange(1, x.size + 1) / x.size
    return x, y


def plot_tau_comparison(
    tau_particle: np.ndarray,
    tau_continuum: np.ndarray,
    out_path,
    t_cap: Optional[float] = None,
) -> None:
    """Empirical CDFs of the first-meeting time, both ensembles."""
    fig, ax = plt.subplots(figsize=(6, 3.6))
    for sample, label, color in (
        (tau_particle, "particle system", _EDGE),
        (tau_continuum, "circle diffusions", _FILL),
    ):
        x, y = _ecdf(np.asarray(sample, dtype=float))
        ax.step(x, y, where="post", label=label, color=color, lw=1.2)
    if t_cap is not None:
        ax.axvline(t_cap, color="grey", lw=0.8, ls=":")
    ax.set_xlabel("first meeting time")
    ax.set_ylabel("empirical CDF")
    ax.legend(loc="lower right", fontsize=8)
    fig.tight_layout()
    fig.savefig(out_path, dpi=130)
    plt.close(fig)


def render_suite_figures(report: dict, out_dir) -> list:
    """Write the standard figures for a verification report.

    Returns the list of paths written. Unknown suites just get the check
    bar chart.
    """
    import pathlib

    out_dir = pathlib.Path(out_dir)
    written = []
    checks = report.get("checks", [])
    suite = report.get("suite", "report")
    if checks:
        p = out_dir / f"{suite}_checks.png"
        plot_check_values(checks, p, title=f"{suite} checks")
        if p.exists():
            written.append(p)
    hist = report.get("stat", {}).get("per_replica")
    if hist:
        p = out_dir / f"{suite}_replicas.png"
        fig, ax = plt.subplots(figsize=(6, 3.2))
        ax.hist(hist, bins=max(10, int(math.sqrt(len(hist)))), color=_EDGE)
        ax.set_xlabel("per-replica statistic")
        ax.set_ylabel("count")
        ax.set_title(f"{suite} replica distribution")
        fig.tight_layout()
        fig.savefig(p, dpi=130)
        plt.close(fig)
        written.append(p)
    return written
