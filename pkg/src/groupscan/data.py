"""Batch container and CSV input/output.

A batch is stored as a dense T x D float64 matrix. The CSV schema is shared by
the featurizer, the synthetic generator, training, and detection: one header
row, numeric feature columns, an optional ``label`` column (evaluation only)
and an optional ``flow_id`` column.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import pandas as pd

from .errors import DataQualityError

LABEL_COLUMN = "label"
ID_COLUMN = "flow_id"


@dataclass(frozen=True)
class DataBatch:
    """T x D feature matrix with optional per-row labels and row ids."""

    X: np.ndarray
    feature_names: tuple[str, ...]
    labels: np.ndarray | None = None
    ids: tuple[str, ...] | None = None

    def __post_init__(self) -> None:
        X = np.asarray(self.X, dtype=float)
        if X.ndim != 2:
            raise DataQualityError(f"feature matrix must be 2-D, got shape {X.shape}")
        object.__setattr__(self, "X", X)
        if len(self.feature_names) != X.shape[1]:
            raise DataQualityError(
                f"{len(self.feature_names)} feature names for {X.shape[1]} columns"
            )
        if self.labels is not None:
            labels = np.asarray(self.labels)
            if labels.shape != (X.shape[0],):
                raise DataQualityError("labels must align with rows")
            object.__setattr__(self, "labels", labels)
        if self.ids is not None and len(self.ids) != X.shape[0]:
            raise DataQualityError("ids must align with rows")

    @property
    def n_samples(self) -> int:
        return self.X.shape[0]

    @property
    def n_features(self) -> int:
        return self.X.shape[1]

    def require_finite(self) -> None:
        """Reject non-finite cells, naming the first offending row/column."""
        bad = ~np.isfinite(self.X)
        if bad.any():
            r, c = np.argwhere(bad)[0]
            raise DataQualityError(
                f"non-finite value at row {int(r)}, column '{self.feature_names[int(c)]}'"
            )

    def take(self, rows: np.ndarray) -> "DataBatch":
        rows = np.asarray(rows, dtype=int)
        return DataBatch(
            X=self.X[rows],
            feature_names=self.feature_names,
            labels=None if self.labels is None else self.labels[rows],
            ids=None if self.ids is None else tuple(self.ids[i] for i in rows),
        )


def load_csv(path) -> DataBatch:
    """Load a batch from CSV. All columns except `label`/`flow_id` are features."""
    try:
        frame = pd.read_csv(path)
    except (OSError, pd.errors.ParserError, pd.errors.EmptyDataError) as exc:
        raise DataQualityError(f"cannot read CSV {path}: {exc}") from exc
    labels = None
    ids = None
    if LABEL_COLUMN in frame.columns:
        labels = frame.pop(LABEL_COLUMN).to_numpy()
    if ID_COLUMN in frame.columns:
        ids = tuple(str(v) for v in frame.pop(ID_COLUMN))
    feature_names = tuple(str(c) for c in frame.columns)
    try:
        X = frame.to_numpy(dtype=float)
    except (TypeError, ValueError) as exc:
        raise DataQualityError(f"non-numeric feature column in {path}: {exc}") from exc
    return DataBatch(X=X, feature_names=feature_names, labels=labels, ids=ids)


def save_csv(batch: DataBatch, path) -> None:
    frame = pd.DataFrame(batch.X, columns=list(batch.feature_names))
    if batch.ids is not None:
        frame[ID_COLUMN] = list(batch.ids)
    if batch.labels is not None:
        frame[LABEL_COLUMN] = batch.labels
    frame.to_csv(path, index=False)
