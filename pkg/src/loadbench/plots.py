"""Report figures. Rendering is off the default path; the CSV/JSON outputs
carry the same curve data."""
from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

LABELS = {"nrmse": "NRMSE (%)", "nmae": "NMAE (%)", "nmbe": "NMBE (%)", "rps": "RPS (kWh)"}

STYLE = {
    "font.size": 10,
    "axes.labelsize": 10,
    "legend.fontsize": 8,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "svg.hashsalt": "loadbench",
}


def _save(fig, path: Path) -> Path:
    # fixed metadata keeps the bytes reproducible
    fig.savefig(path, dpi=120, metadata={"Software": None})
    plt.close(fig)
    return path


def plot_profile(profile: dict, metric: str, path: Path) -> Path:
    t = np.asarray(profile["thresholds"])
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(4.5, 3.0))
        ax.fill_between(t, profile["ci_lower"], profile["ci_upper"], step="post", alpha=0.25, lw=0)
        ax.step(t, profile["fraction"], where="post", lw=1.5)
        ax.set_xlabel(LABELS.get(metric, metric))
        ax.set_ylabel("fraction of buildings > threshold")
        ax.set_ylim(-0.02, 1.02)
        fig.tight_layout()
        return _save(fig, path)


def plot_strata(scores, metric: str, path: Path) -> Path:
    strata = sorted({s.dataset for s in scores})
    data = [[s.get(metric) for s in scores if s.dataset == d and s.get(metric) is not None] for d in strata]
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(1.2 + 1.1 * len(strata), 3.0))
        ax.boxplot(data, showfliers=True)
        ax.set_xticks(range(1, len(strata) + 1), strata, rotation=20, ha="right")
        ax.set_ylabel(LABELS.get(metric, metric))
        fig.tight_layout()
        return _save(fig, path)


def render_report_figures(doc: dict, scores, out_dir: Path) -> list[Path]:
    out_dir = Path(out_dir)
    paths = []
    for metric in sorted(doc["profiles"]):
        paths.append(plot_profile(doc["profiles"][metric], metric, out_dir / f"profile_{metric}.png"))
    if scores:
        for metric in ("nrmse", "rps"):
            if any(s.get(metric) is not None for s in scores):
                paths.append(plot_strata(scores, metric, out_dir / f"strata_{metric}.png"))
    return paths
