"""Figure rendering for the report path.

Every figure is rendered from the same CSV-shaped data the report
writes, so plots are reproducible from the emitted files alone.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .trace import FEATURE_NAMES

METHOD_COLORS = {
    "hybrid": "tab:blue",
    "ig": "tab:blue",
    "shap": "tab:orange",
    "attention": "tab:green",
}

METHOD_LABELS = {
    "hybrid": "Attention + IG (k=5)",
    "ig": "IG",
    "shap": "SHAP (m=16)",
    "attention": "Attention only",
}


def render_featurewise(per_method: dict[str, dict[str, float]], path) -> None:
    """Grouped bars: per-feature local R^2, one group per KPM feature."""
    methods = list(per_method)
    x = np.arange(len(FEATURE_NAMES))
    width = 0.8 / max(1, len(methods))
    fig, ax = plt.subplots(figsize=(7, 4))
    for j, method in enumerate(methods):
        vals = [per_method[method].get(f, float("nan")) for f in FEATURE_NAMES]
        ax.bar(x + (j - (len(methods) - 1) / 2) * width, vals, width,
               label=METHOD_LABELS.get(method, method),
               color=METHOD_COLORS.get(method))
    ax.set_xticks(x, [f.upper() for f in FEATURE_NAMES])
    ax.set_ylabel("feature-wise local $R^2$")
    ax.axhline(0.0, color="gray", lw=0.5)
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def render_timewise(series_by_method: dict[str, list[tuple[int, float]]], path) -> None:
    """Sliding-window local R^2 over time, one line per method."""
    fig, ax = plt.subplots(figsize=(8, 4))
    for method, series in series_by_method.items():
        idx = [w for w, _ in series]
        vals = [v for _, v in series]
        ax.plot(idx, vals, lw=0.8, alpha=0.9,
                label=METHOD_LABELS.get(method, method),
                color=METHOD_COLORS.get(method))
    ax.set_xlabel("prediction window")
    ax.set_ylabel("local $R^2$")
    ax.set_ylim(bottom=max(-1.0, ax.get_ylim()[0]))
    ax.legend(loc="lower right")
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def render_latency(rows: list[tuple[str, float, float, float]], path,
                   budget_ms: float | None = None) -> None:
    """Stacked horizontal bars of t_inf / t_xai / t_comm per method (ms)."""
    labels = [r[0] for r in rows]
    t_inf = np.array([r[1] for r in rows])
    t_xai = np.array([r[2] for r in rows])
    t_comm = np.array([r[3] for r in rows])
    y = np.arange(len(rows))
    fig, ax = plt.subplots(figsize=(7, 1.0 + 0.6 * len(rows)))
    ax.barh(y, t_inf, label="$T_{inf}$", color="tab:gray")
    ax.barh(y, t_xai, left=t_inf, label="$T_{xai}$", color="tab:red")
    ax.barh(y, t_comm, left=t_inf + t_xai, label="$T_{comm}$", color="tab:cyan")
    if budget_ms is not None:
        ax.axvline(budget_ms, color="black", ls="--", lw=1, label="budget")
    ax.set_yticks(y, labels)
    ax.invert_yaxis()
    ax.set_xlabel("latency per cycle (ms)")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def render_trace(th: np.ndarray, path, n_steps: int = 200) -> None:
    """Throughput burst pattern, first n_steps samples."""
    fig, ax = plt.subplots(figsize=(8, 3))
    ax.plot(th[:n_steps], lw=0.9, color="tab:blue")
    ax.set_xlabel("timestep")
    ax.set_ylabel("throughput (Mbps)")
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
