"""Report figures and columnar plot data.  Figures go to files only."""
from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .metrics import CONTACT_THRESHOLD  # noqa: E402


def contact_grip_samples(logs, threshold=CONTACT_THRESHOLD):
    """Grip-force samples above the contact threshold, grouped by force level."""
    out = {}
    for log in logs:
        g = np.array([s["f_grip"] for s in log.steps])
        out.setdefault(int(log.header["force_level"]), []).append(g[g > threshold])
    return {k: np.concatenate(v) if v else np.zeros(0) for k, v in sorted(out.items())}


def histogram(samples, edges):
    """Counts over ``edges``; samples beyond either end fall in the outermost bins."""
    edges = np.asarray(edges, dtype=float)
    clipped = np.clip(samples, edges[0], np.nextafter(edges[-1], edges[0]))
    counts, _ = np.histogram(clipped, bins=edges)
    return counts


def histogram_text(level, samples, edges):
    counts = histogram(samples, edges)
    mean = float(samples.mean()) if samples.size else float("nan")
    lines = [f"# level={level} samples={samples.size} mean={mean!r}",
             "# bin_lo bin_hi count"]
    for lo, hi, c in zip(edges[:-1], edges[1:], counts):
        lines.append(f"{float(lo)!r} {float(hi)!r} {int(c)}")
    return "\n".join(lines) + "\n"


def force_histograms_figure(samples_by_level, edges, path):
    fig, ax = plt.subplots(figsize=(6, 3.5))
    centers = 0.5 * (np.asarray(edges[:-1]) + np.asarray(edges[1:]))
    width = np.diff(edges)
    for level, samples in samples_by_level.items():
        counts = histogram(samples, edges)
        density = counts / max(1, counts.sum())
        ax.bar(centers, density, width=width, alpha=0.5, label=f"{level}%")
    ax.set_xlabel("grip force in contact [N]")
    ax.set_ylabel("fraction of samples")
    ax.legend(title="force level")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def metrics_figure(rows, path):
    """Average grip force per task, one bar group per force level."""
    tasks = sorted({r.task for r in rows})
    levels = sorted({r.level for r in rows}, reverse=True)
    fig, ax = plt.subplots(figsize=(7, 3.5))
    step = 0.8 / max(1, len(levels))
    for i, level in enumerate(levels):
        vals = []
        for t in tasks:
            r = next((r for r in rows if r.task == t and r.level == level), None)
            vals.append(r.ag if r is not None and r.ag is not None else 0.0)
        ax.bar(np.arange(len(tasks)) + i * step, vals, width=step, label=f"{level}%")
    ax.set_xticks(np.arange(len(tasks)) + 0.4 - step / 2)
    ax.set_xticklabels([t.replace("object_task", "t") for t in tasks])
    ax.set_ylabel("AG [N]")
    ax.legend(title="force level")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def ablation_figure(results, path):
    """Predicted vs measured grip force, one panel per ablation mode."""
    fig, axes = plt.subplots(1, len(results), figsize=(3.2 * len(results), 3), sharey=True,
                             squeeze=False)
    for ax, res in zip(axes[0], results):
        ax.plot(res.t, res.predicted, label="predicted")
        ax.plot(res.t, res.measured, label="measured")
        ax.set_title(f"{res.mode} ({res.target_level}%)")
        ax.set_xlabel("t [s]")
        if res.slip_event:
            ax.text(0.05, 0.9, "slip", transform=ax.transAxes, color="red")
    axes[0][0].set_ylabel("grip force [N]")
    axes[0][0].legend(loc="upper right")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
