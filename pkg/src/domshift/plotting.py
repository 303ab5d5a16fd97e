"""Report figures rendered to PNG with the non-interactive Agg backend."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .experiment import POLICIES, REGIMES, ExperimentReport  # noqa: E402

# fixed metadata keeps repeated renders byte-identical
_PNG_META = {"Software": None}
_COLORS = {"source-supervised": "#4c72b0", "ours-unsupervised": "#55a868",
           "ours-zero-shot": "#c44e52", "target-supervised": "#8172b2"}


def _save(fig, path: Path) -> Path:
    fig.savefig(path, dpi=100, metadata=_PNG_META)
    plt.close(fig)
    return path


def plot_loss_curves(report: ExperimentReport, path) -> Path:
    """Shifter L2 (left) and classifier validation accuracy (right) for the first seed."""
    run = report.runs[0]
    fig, (ax_l2, ax_acc) = plt.subplots(1, 2, figsize=(10, 4))
    for policy, style in zip(POLICIES, ("-", "--")):
        h = run.shifter_histories[policy]
        epochs = np.arange(1, len(h.train_l2) + 1)
        ax_l2.plot(epochs, h.train_l2, style, color="#4c72b0", label=f"{policy} train")
        if h.val_l2:
            ax_l2.plot(epochs, h.val_l2, style, color="#c44e52", label=f"{policy} val")
    ax_l2.set_yscale("log")
    ax_l2.set_xlabel("epoch")
    ax_l2.set_ylabel("mean squared error")
    ax_l2.set_title(f"shifter (seed {run.seed})")
    ax_l2.legend(fontsize=8)
    for regime in REGIMES:
        h = run.classifier_histories[regime]
        ax_acc.plot(np.arange(1, len(h.val_acc) + 1), h.val_acc, color=_COLORS[regime], label=regime)
    ax_acc.set_xlabel("epoch")
    ax_acc.set_ylabel("validation accuracy")
    ax_acc.set_ylim(0, 1)
    ax_acc.set_title(f"classifiers (seed {run.seed})")
    ax_acc.legend(fontsize=8, loc="lower right")
    fig.tight_layout()
    return _save(fig, Path(path))


def plot_accuracy_bars(report: ExperimentReport, path) -> Path:
    """Median clean and degraded test accuracy per regime; dots mark individual seeds."""
    med = report.median()
    x = np.arange(len(REGIMES))
    width = 0.38
    fig, ax = plt.subplots(figsize=(8, 4))
    for offset, col, label, color in ((-width / 2, 0, "clean test", "#4c72b0"),
                                      (width / 2, 1, "degraded test", "#c44e52")):
        ax.bar(x + offset, [100 * med[r][col] for r in REGIMES], width, label=label, color=color, alpha=0.85)
        for i, regime in enumerate(REGIMES):
            pts = [100 * run.accuracies[regime][col] for run in report.runs]
            ax.plot([x[i] + offset] * len(pts), pts, "k.", markersize=4)
    ax.set_xticks(x)
    ax.set_xticklabels(REGIMES, fontsize=8)
    ax.set_ylabel("accuracy (%)")
    ax.set_ylim(0, 100)
    ax.legend(fontsize=8, loc="lower right")
    ax.set_title("test accuracy, median over seeds " + ", ".join(str(s) for s in report.seeds))
    fig.tight_layout()
    return _save(fig, Path(path))


def plot_sample_grid(samples: dict, path) -> Path:
    """Rows of clean, simulated low-quality and shifted images."""
    rows = [k for k in ("clean", "degraded", "shifted") if k in samples]
    n = min(len(samples[k]) for k in rows)
    fig, axes = plt.subplots(len(rows), n, figsize=(1.2 * n, 1.3 * len(rows)), squeeze=False)
    for r, key in enumerate(rows):
        for c in range(n):
            ax = axes[r, c]
            ax.imshow(np.clip(samples[key][c].transpose(1, 2, 0), 0, 1), interpolation="nearest")
            ax.set_xticks([])
            ax.set_yticks([])
            if c == 0:
                ax.set_ylabel(key, fontsize=8)
    fig.tight_layout()
    return _save(fig, Path(path))


def render_report_figures(report: ExperimentReport, out_dir) -> list:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = [plot_loss_curves(report, out / "loss_curves.png"),
             plot_accuracy_bars(report, out / "accuracy.png")]
    if report.runs[0].samples:
        paths.append(plot_sample_grid(report.runs[0].samples, out / "samples.png"))
    return paths
