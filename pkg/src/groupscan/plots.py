"""Render report figures to files (headless backend, PNG output).

Figures accompany the delimited outputs: detection overviews for a single
batch, ROC curves for labeled evaluations, and AUC-versus-order curves for
sweeps. Every function writes the file it names and returns the path.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402  (backend must be set first)
import numpy as np  # noqa: E402

from .data import DataBatch  # noqa: E402
from .evalkit import ExperimentResult, roc_auc  # noqa: E402
from .search import DetectionReport  # noqa: E402

_CLUSTER_COLORS = ("tab:red", "tab:orange", "tab:purple", "tab:brown")


def plot_auc_curves(result: ExperimentResult, path) -> str:
    """Mean AUC against maximum subset order, one line per method, one
    standard deviation shaded."""
    agg = result.aggregate_frame()
    fig, ax = plt.subplots(figsize=(6, 4))
    for method, cell in agg.groupby("method", sort=True):
        cell = cell.sort_values("k_max")
        k = cell["k_max"].to_numpy()
        mean = cell["auc_mean"].to_numpy()
        sd = cell["auc_sd"].to_numpy()
        ax.plot(k, mean, marker="o", label=method)
        ax.fill_between(k, mean - sd, mean + sd, alpha=0.15)
    ax.set_xlabel("maximum feature subset size")
    ax.set_ylabel("ROC AUC")
    ax.set_ylim(0.0, 1.05)
    ax.legend(loc="lower left", fontsize=8)
    ax.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return str(path)


def plot_roc(rankings: dict, truth, path) -> str:
    """ROC curves for one or more named rankings over the same truth mask."""
    truth = np.asarray(truth, dtype=bool)
    n_pos = int(truth.sum())
    n_neg = truth.size - n_pos
    fig, ax = plt.subplots(figsize=(5, 5))
    for name, ranked in sorted(rankings.items()):
        y = truth[np.asarray(ranked, dtype=int)]
        tpr = np.concatenate([[0.0], np.cumsum(y) / n_pos])
        fpr = np.concatenate([[0.0], np.cumsum(~y) / n_neg])
        ax.plot(fpr, tpr, label=f"{name} (AUC {roc_auc(ranked, truth):.3f})")
    ax.plot([0, 1], [0, 1], ls="--", c="gray", lw=0.8)
    ax.set_xlabel("false positive rate")
    ax.set_ylabel("true positive rate")
    ax.legend(loc="lower right", fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return str(path)


def plot_detection(batch: DataBatch, report: DetectionReport, path) -> str:
    """Detection overview for one batch: the batch projected onto the first
    cluster's leading feature pair (members of each detected cluster
    highlighted), next to each cluster's per-sample evidence profile."""
    fig, (left, right) = plt.subplots(1, 2, figsize=(10, 4))

    clusters = report.clusters
    if clusters:
        feats = clusters[0].features
        fx = feats[0]
        fy = feats[1] if len(feats) > 1 else _next_feature(fx, batch.n_features)
        left.scatter(batch.X[:, fx], batch.X[:, fy], s=6, c="lightgray",
                     label="batch")
        for rank, cluster in enumerate(clusters):
            members = np.asarray(cluster.samples, dtype=int)
            color = _CLUSTER_COLORS[rank % len(_CLUSTER_COLORS)]
            left.scatter(batch.X[members, fx], batch.X[members, fy], s=22,
                         c=color, label=f"cluster {rank + 1}")
        left.set_xlabel(batch.feature_names[fx])
        left.set_ylabel(batch.feature_names[fy])
        left.legend(fontsize=7, loc="best")

        for rank, cluster in enumerate(clusters):
            color = _CLUSTER_COLORS[rank % len(_CLUSTER_COLORS)]
            right.plot(sorted(cluster.log_pvalues), marker=".", c=color,
                       label=f"cluster {rank + 1} ({len(cluster.samples)})")
        right.set_xlabel("member (by evidence)")
        right.set_ylabel("log p-value")
        right.legend(fontsize=7, loc="best")
    else:
        left.text(0.5, 0.5, "no clusters detected", ha="center", va="center")
        left.set_axis_off()
        right.set_axis_off()

    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return str(path)


def _next_feature(fx: int, n_features: int) -> int:
    return (fx + 1) % n_features
