"""Figures written next to the delimited report files."""

from __future__ import annotations

import math

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

STYLE = {
    "font.size": 10,
    "axes.titlesize": 11,
    "axes.labelsize": 10,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "legend.frameon": False,
    "savefig.dpi": 150,
    "savefig.bbox": "tight",
}


def _figure(width=6.0, height=None):
    golden = (math.sqrt(5) - 1.0) / 2.0
    return plt.subplots(figsize=(width, height or width * golden))


def _save(fig, path):
    fig.savefig(path, metadata={"Software": None})
    plt.close(fig)
    return path


def plot_training_log(trainlog, path):
    """Train loss and validation recall per epoch; rounds are drawn back to back."""
    recs = trainlog.records
    with plt.rc_context(STYLE):
        fig, ax = _figure()
        x = list(range(len(recs)))
        ax.plot(x, [r.train_loss for r in recs], color="0.2", label="train loss")
        ax.set_xlabel("epoch (all rounds)")
        ax.set_ylabel("cross-entropy")
        ax2 = ax.twinx()
        ax2.plot(x, [r.val_r_at_1 for r in recs], color="tab:blue", label="val R@1")
        ax2.plot(x, [r.val_r_at_3 for r in recs], color="tab:blue", ls="--", label="val R@3")
        ax2.plot(x, [r.tf_probability for r in recs], color="tab:orange", ls=":", label="teacher forcing p")
        ax2.set_ylim(-0.02, 1.02)
        ax2.set_ylabel("recall / probability")
        ax2.spines["right"].set_visible(True)
        for i in range(1, len(recs)):
            if recs[i].round != recs[i - 1].round:
                ax.axvline(i - 0.5, color="0.7", lw=0.8)
        lines = ax.get_lines() + ax2.get_lines()
        ax.legend(lines, [ln.get_label() for ln in lines], loc="center right")
        return _save(fig, path)


def plot_ablation(rows, path):
    """Grouped R@1/R@3 bars, one group per ablation cell."""
    with plt.rc_context(STYLE):
        fig, ax = _figure(max(6.0, 0.9 * len(rows) + 2))
        labels = [r["label"] for r in rows]
        x = range(len(rows))
        width = 0.38
        ax.bar([i - width / 2 for i in x], [100 * r["r_at_1"] for r in rows], width, label="R@1", color="tab:blue")
        ax.bar([i + width / 2 for i in x], [100 * r["r_at_3"] for r in rows], width, label="R@3", color="tab:gray")
        ax.set_xticks(list(x))
        ax.set_xticklabels(labels, rotation=30, ha="right")
        ax.set_ylabel("recall (%)")
        ax.set_ylim(0, 105)
        ax.legend(loc="lower right")
        return _save(fig, path)


def plot_rank_histogram(report, path, max_rank=None):
    """Distribution of the ground-truth rank over evaluated steps."""
    ranks = [r for _, _, r in report.breakdown]
    top = max_rank or (max(ranks) if ranks else 1)
    counts = [sum(1 for r in ranks if r == k) for k in range(1, top + 1)]
    with plt.rc_context(STYLE):
        fig, ax = _figure(4.5)
        ax.bar(range(1, top + 1), counts, color="tab:blue")
        ax.set_xticks(range(1, top + 1))
        ax.set_xlabel("rank of ground-truth answer")
        ax.set_ylabel("steps")
        ax.set_title(report.summary(), fontsize=9)
        return _save(fig, path)
