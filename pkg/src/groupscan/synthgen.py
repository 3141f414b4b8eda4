"""Synthetic batches with planted anomalous groups.

Normal samples are spherical standard Gaussian in D dimensions. Each planted
group matches the normal distribution on every feature except its own single
informative one, which is shifted by a fixed multiple of the normal standard
deviation at equal variance. A fixed fraction of the normal samples becomes
the training split (never containing anomalies); the remaining normals plus
all anomalies form the labeled test batch, shuffled so label order carries no
information.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .data import DataBatch

TRAIN_FRACTION = 0.2
NORMAL_LABEL = "normal"


@dataclass(frozen=True)
class SyntheticSpec:
    """Generator parameters; defaults follow the two-group benchmark design."""

    n_features: int = 10
    batch_size: int = 10_000
    cluster_fractions: tuple[float, ...] = (0.025, 0.025)
    informative_features: tuple[int, ...] = (2, 7)
    shift: float = 2.0
    seed: int = 0

    def __post_init__(self) -> None:
        if self.n_features < 1 or self.batch_size < 1:
            raise ValueError("n_features and batch_size must be positive")
        if len(self.cluster_fractions) != len(self.informative_features):
            raise ValueError("one informative feature per cluster is required")
        if len(set(self.informative_features)) != len(self.informative_features):
            raise ValueError("informative features must be distinct")
        if any(not 0 <= j < self.n_features for j in self.informative_features):
            raise ValueError("informative feature indices must lie in [0, n_features)")
        if any(f <= 0 for f in self.cluster_fractions):
            raise ValueError("cluster fractions must be positive")
        if sum(self.cluster_fractions) >= 1:
            raise ValueError("cluster fractions must sum to less than 1")

    @property
    def cluster_sizes(self) -> tuple[int, ...]:
        return tuple(round(self.batch_size * f) for f in self.cluster_fractions)

    def cluster_label(self, index: int) -> str:
        return f"cluster_{index + 1}"


def generate(spec: SyntheticSpec) -> tuple[DataBatch, DataBatch]:
    """Draw one batch; return (unlabeled train split, labeled test batch)."""
    rng = np.random.default_rng(spec.seed)
    sizes = spec.cluster_sizes
    n_normal = spec.batch_size - sum(sizes)

    normals = rng.standard_normal((n_normal, spec.n_features))
    groups = []
    for n_c, feature in zip(sizes, spec.informative_features):
        block = rng.standard_normal((n_c, spec.n_features))
        block[:, feature] += spec.shift
        groups.append(block)

    n_train = round(TRAIN_FRACTION * n_normal)
    train_rows = rng.permutation(n_normal)[:n_train]
    held = np.setdiff1d(np.arange(n_normal), train_rows)

    test_X = np.vstack([normals[held]] + groups)
    test_labels = np.concatenate(
        [np.repeat(NORMAL_LABEL, len(held))]
        + [np.repeat(spec.cluster_label(i), n) for i, n in enumerate(sizes)]
    )
    order = rng.permutation(len(test_X))

    names = tuple(f"p{i + 1}" for i in range(spec.n_features))
    train = DataBatch(X=normals[train_rows], feature_names=names)
    test = DataBatch(X=test_X[order], feature_names=names, labels=test_labels[order])
    return train, test


def is_anomalous(labels: np.ndarray) -> np.ndarray:
    """Boolean mask: every non-normal label marks a planted anomaly."""
    return np.asarray(labels) != NORMAL_LABEL
