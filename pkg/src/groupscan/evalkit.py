"""Ranking metrics and the multi-seed, multi-order experiment sweep.

Two metrics score a detector's total sample ranking against ground truth:
ROC area (trapezoidal sweep over the ranking) and precision among the first
k detections. The sweep regenerates data and retrains the null per seed,
runs every requested method at every maximum subset order, and collects one
record per (method, order, seed) cell; a failed cell stores its error and
the sweep continues. Aggregates are per-(method, order) means and standard
deviations over the seeds that succeeded.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, replace
from typing import Optional, Sequence, Union

import numpy as np
import pandas as pd

from .baselines import (
    BASELINE_TAGS,
    GMM_LIKELIHOOD,
    detect_with_baseline,
    gmm_likelihood_rank,
)
from .data import DataBatch
from .errors import GroupScanError
from .gmm import EMConfig
from .nullmodel import train_null
from .search import DetectionReport, SearchConfig, detect_all
from .synthgen import TRAIN_FRACTION, SyntheticSpec, generate, is_anomalous

logger = logging.getLogger(__name__)

PROPOSED = "proposed"
METHODS = (PROPOSED,) + BASELINE_TAGS


def roc_auc(ranked_samples, truth) -> float:
    """Area under the ROC curve swept over a total ranking (positives first
    is 1.0). `truth` is the per-sample anomaly mask in batch order; the
    ranking must visit every sample exactly once."""
    truth = np.asarray(truth, dtype=bool)
    ranked = np.asarray(ranked_samples, dtype=int)
    if ranked.shape != truth.shape or not np.array_equal(
            np.sort(ranked), np.arange(truth.size)):
        raise ValueError("ranking must be a permutation of the batch indices")
    y = truth[ranked]
    n_pos = int(y.sum())
    n_neg = y.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ValueError("ROC is undefined for single-class truth")
    tpr = np.concatenate([[0.0], np.cumsum(y) / n_pos])
    fpr = np.concatenate([[0.0], np.cumsum(~y) / n_neg])
    return float(np.trapezoid(tpr, fpr))


def top_k_precision(ranked_samples, truth, k: int = 100) -> float:
    """Fraction of true anomalies among the first k ranked samples. Rankings
    shorter than k are scored over their full length (and flagged)."""
    if k < 1:
        raise ValueError("k must be >= 1")
    truth = np.asarray(truth, dtype=bool)
    ranked = np.asarray(ranked_samples, dtype=int)
    if ranked.size < k:
        logger.warning("ranking has %d samples, scoring top-%d instead of top-%d",
                       ranked.size, ranked.size, k)
        k = ranked.size
    return float(truth[ranked[:k]].mean())


@dataclass(frozen=True)
class RunRecord:
    """One (method, max order, seed) cell of a sweep."""

    method: str
    k_max: int
    seed: int
    auc: Optional[float] = None
    top_k: Optional[float] = None
    first_cluster_purity: Optional[float] = None
    error: Optional[str] = None

    def __post_init__(self):
        for name in ("auc", "top_k", "first_cluster_purity"):
            v = getattr(self, name)
            if v is not None and not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1], got {v}")
        if self.error is None and self.auc is None:
            raise ValueError("a successful run must carry an AUC")


@dataclass(frozen=True)
class ExperimentResult:
    """Raw per-seed records plus aggregation over seeds."""

    records: tuple[RunRecord, ...]

    def records_frame(self) -> pd.DataFrame:
        return pd.DataFrame([vars(r) for r in self.records])

    def aggregate_frame(self) -> pd.DataFrame:
        """Per-(method, k_max): mean/sd of each metric over succeeded seeds."""
        rows = []
        frame = self.records_frame()
        for (method, k_max), cell in frame.groupby(["method", "k_max"], sort=True):
            ok = cell[cell["error"].isna()]
            row = {"method": method, "k_max": k_max,
                   "n_seeds": len(cell), "n_failed": len(cell) - len(ok)}
            for metric in ("auc", "top_k", "first_cluster_purity"):
                values = ok[metric].dropna()
                row[f"{metric}_mean"] = values.mean() if len(values) else np.nan
                row[f"{metric}_sd"] = values.std(ddof=0) if len(values) else np.nan
            rows.append(row)
        return pd.DataFrame(rows)

    def to_dict(self) -> dict:
        return {
            "records": self.records_frame().to_dict(orient="records"),
            "aggregate": self.aggregate_frame().to_dict(orient="records"),
        }

    def cell(self, method: str, k_max: int) -> pd.DataFrame:
        frame = self.records_frame()
        return frame[(frame["method"] == method) & (frame["k_max"] == k_max)]

    def mean_auc(self, method: str, k_max: int) -> float:
        ok = self.cell(method, k_max).dropna(subset=["auc"])
        return float(ok["auc"].mean())


def write_curve_data(result: ExperimentResult, directory) -> list[str]:
    """One whitespace-delimited .dat file per method: k_max, AUC mean/sd.
    Returns the file paths written."""
    import os

    agg = result.aggregate_frame()
    paths = []
    for method, cell in agg.groupby("method", sort=True):
        path = os.path.join(str(directory), f"auc_vs_order_{method}.dat")
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("# k_max auc_mean auc_sd\n")
            for _, row in cell.sort_values("k_max").iterrows():
                fh.write(f"{int(row.k_max)} {row.auc_mean:.6f} {row.auc_sd:.6f}\n")
        paths.append(path)
    return paths


def _resplit(dataset: DataBatch, seed: int) -> tuple[DataBatch, DataBatch]:
    """Random train/test split of a labeled batch: a fresh 20% of the normal
    samples trains the null, everything else is the test batch."""
    if dataset.labels is None:
        raise ValueError("resplitting needs labels to keep anomalies out of train")
    normal = np.flatnonzero(~is_anomalous(dataset.labels))
    if normal.size < 10:
        raise ValueError("too few normal samples to split")
    rng = np.random.default_rng(seed)
    order = rng.permutation(normal.size)
    n_train = round(TRAIN_FRACTION * normal.size)
    train_rows = normal[order[:n_train]]
    test_mask = np.ones(dataset.n_samples, dtype=bool)
    test_mask[train_rows] = False
    train = dataset.take(train_rows)
    return (
        DataBatch(X=train.X, feature_names=train.feature_names, ids=train.ids),
        dataset.take(np.flatnonzero(test_mask)),
    )


def _rank_with_method(method: str, model, train: DataBatch, test: DataBatch,
                      config: SearchConfig, em_config: EMConfig
                      ) -> tuple[list[int], Optional[DetectionReport]]:
    if method == PROPOSED:
        report = detect_all(model, test, config)
        return list(report.ranked_samples), report
    if method == GMM_LIKELIHOOD:
        return gmm_likelihood_rank(train, test, em_config), None
    report = detect_with_baseline(method, model, test, config)
    return list(report.ranked_samples), report


def run_sweep(source: Union[SyntheticSpec, DataBatch],
              methods: Sequence[str] = (PROPOSED,),
              k_max_values: Sequence[int] = (2,),
              seeds: Sequence[int] = range(5),
              search_config: SearchConfig = SearchConfig(),
              em_config: EMConfig = EMConfig(),
              mi_samples: int = 10**6,
              top_k: int = 100) -> ExperimentResult:
    """Per seed: regenerate (or resplit) the data, retrain the null, then run
    every method at every maximum order and score both ranking metrics plus
    the first detected cluster's purity. Failures are recorded per cell."""
    for method in methods:
        if method not in METHODS:
            raise ValueError(f"unknown method {method!r}; choose from {METHODS}")
    records: list[RunRecord] = []
    for seed in seeds:
        seed = int(seed)
        if isinstance(source, SyntheticSpec):
            train, test = generate(replace(source, seed=seed))
        else:
            train, test = _resplit(source, seed)
        truth = is_anomalous(test.labels)
        model = train_null(train, replace(em_config, seed=seed), mi_samples)
        for method in methods:
            for k_max in k_max_values:
                config = replace(search_config, k_max=int(k_max))
                try:
                    ranking, report = _rank_with_method(
                        method, model, train, test, config, em_config)
                    purity = None
                    if report is not None and report.clusters:
                        members = np.array(report.clusters[0].samples)
                        purity = float(truth[members].mean())
                    records.append(RunRecord(
                        method=method, k_max=int(k_max), seed=seed,
                        auc=roc_auc(ranking, truth),
                        top_k=top_k_precision(ranking, truth, top_k),
                        first_cluster_purity=purity,
                    ))
                except (GroupScanError, ValueError) as exc:
                    logger.warning("sweep cell (%s, k=%d, seed=%d) failed: %s",
                                   method, k_max, seed, exc)
                    records.append(RunRecord(
                        method=method, k_max=int(k_max), seed=seed,
                        error=f"{type(exc).__name__}: {exc}",
                    ))
    return ExperimentResult(records=tuple(records))
