"""Group anomaly detection on Gaussian-mixture nulls.

Learns univariate/bivariate Gaussian mixture null models from clean data,
then scans an unlabeled batch for jointly-anomalous clusters (a sample subset
paired with a feature subset) scored by dependence-tree-factorized joint
p-values under a Bonferroni-style correction, extracting clusters
sequentially by rank.

The public surface below is re-exported lazily, so importing the package
stays cheap and the command-line layer can configure the process before any
numerical library loads.
"""

from importlib import import_module

__version__ = "0.1.0"

_EXPORTS = {
    # data handling
    "DataBatch": ".data",
    "load_csv": ".data",
    "save_csv": ".data",
    # errors
    "GroupScanError": ".errors",
    "DataQualityError": ".errors",
    "NumericalError": ".errors",
    "BatchExhausted": ".errors",
    # flow featurization
    "FlowRecord": ".flowfeat",
    "FlowFeatureVector": ".flowfeat",
    "featurize": ".flowfeat",
    "ingest_flows": ".flowfeat",
    "flows_to_batch": ".flowfeat",
    # mixture fitting
    "EMConfig": ".gmm",
    "UnivariateGMM": ".gmm",
    "BivariateGMM": ".gmm",
    "MultivariateGMM": ".gmm",
    "fit_univariate": ".gmm",
    "fit_bivariate": ".gmm",
    "fit_multivariate": ".gmm",
    "estimate_mi": ".gmm",
    # null model
    "NullModel": ".nullmodel",
    "train_null": ".nullmodel",
    "save_model": ".nullmodel",
    "load_model": ".nullmodel",
    # p-values
    "singleton_pvalue": ".pvalue",
    "pair_pvalue": ".pvalue",
    "conditional_pvalue": ".pvalue",
    # dependence trees
    "DependenceTree": ".deptree",
    "build_tree": ".deptree",
    "joint_pvalue": ".deptree",
    # scores
    "log_score": ".scoring",
    "optimal_sample_subset": ".scoring",
    # detection
    "SearchConfig": ".search",
    "ClusterCandidate": ".search",
    "DetectionReport": ".search",
    "detect_all": ".search",
    "detect_one_cluster": ".search",
    "save_report": ".search",
    "load_report": ".search",
    # baselines
    "BaselineKind": ".baselines",
    "detect_with_baseline": ".baselines",
    "gmm_likelihood_rank": ".baselines",
    # synthetic benchmark
    "SyntheticSpec": ".synthgen",
    "generate": ".synthgen",
    # evaluation
    "ExperimentResult": ".evalkit",
    "RunRecord": ".evalkit",
    "roc_auc": ".evalkit",
    "top_k_precision": ".evalkit",
    "run_sweep": ".evalkit",
}

__all__ = sorted(_EXPORTS) + ["__version__"]


def __getattr__(name: str):
    try:
        module = _EXPORTS[name]
    except KeyError:
        raise AttributeError(f"module {__name__!r} has no attribute {name!r}") from None
    return getattr(import_module(module, __name__), name)


def __dir__():
    return sorted(set(globals()) | set(_EXPORTS))
