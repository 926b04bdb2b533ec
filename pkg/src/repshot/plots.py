"""Static figures for benchmark reports (needs matplotlib)."""
from __future__ import annotations

from pathlib import Path

import numpy as np

from .harness import ClassificationReport, RegressionReport, Strategy


def _pyplot():
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    return plt


def roc_curve(scores, labels, positive_class):
    """(fpr, tpr) points, thresholds swept from high to low; tied scores move together."""
    scores = np.asarray(scores, dtype=np.float64)
    pos = np.array([l == positive_class for l in labels])
    order = np.argsort(-scores, kind="stable")
    s, p = scores[order], pos[order]
    last = np.r_[np.diff(s) != 0, True]
    tp = np.cumsum(p)[last]
    fp = np.cumsum(~p)[last]
    n_pos, n_neg = max(p.sum(), 1), max((~p).sum(), 1)
    return np.r_[0.0, fp / n_neg], np.r_[0.0, tp / n_pos]


def plot_fold_mae(report: RegressionReport, path) -> Path:
    plt = _pyplot()
    strategies = list(report.fold_mae)
    fig, axes = plt.subplots(1, report.timepoints, figsize=(4 * report.timepoints, 3.2), squeeze=False)
    width = 0.8 / len(strategies)
    for t, ax in enumerate(axes[0]):
        for k, s in enumerate(strategies):
            vals = np.asarray(report.fold_mae[s])[:, t]
            ax.bar(np.arange(report.folds) + k * width, vals, width, label=Strategy(s).title)
        ax.set_title(f"t{t + 1}")
        ax.set_xlabel("fold")
        ax.set_xticks(np.arange(report.folds) + 0.4 - width / 2, [str(f) for f in range(report.folds)])
    axes[0][0].set_ylabel("MAE")
    axes[0][-1].legend(fontsize=7)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return Path(path)


def plot_roc(report: ClassificationReport, path) -> Path:
    plt = _pyplot()
    fig, ax = plt.subplots(figsize=(4, 4))
    for s, folds in report.test_scores.items():
        scores = [x for f in folds for x in f["scores"]]
        labels = [x for f in folds for x in f["labels"]]
        if not scores:
            continue
        fpr, tpr = roc_curve(scores, labels, report.positive_class)
        ax.plot(fpr, tpr, label=Strategy(s).title)
    ax.plot([0, 1], [0, 1], color="grey", linestyle=":", linewidth=0.8)
    ax.set_xlabel("false positive rate")
    ax.set_ylabel("true positive rate")
    ax.legend(fontsize=7, loc="lower right")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return Path(path)


def save_plots(report, out_dir) -> list[Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    if isinstance(report, RegressionReport):
        return [plot_fold_mae(report, out / "fold_mae.png")]
    return [plot_roc(report, out / "roc.png")]
