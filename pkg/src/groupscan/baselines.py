"""Comparison detectors run through the same engine and report format.

Three reference methods flank the tree-evidence detector:

- likelihood ranking under one full-dimensional Gaussian mixture of the
  training data, with no subset search at all;
- independence tests: a candidate subset's joint p-value is the plain product
  of its two-sided pair p-values (optionally singletons), taken at face value
  with no correction for the growing number of factors;
- single Bayesian net: one dependence tree is learned once on the full
  feature set, and a candidate subset is scored by the factorization that
  global tree induces on it (a forest; features isolated in the induced
  subgraph fall back to their singleton p-values).

The two model-based methods reuse the beam search unchanged: each supplies a
coefficient provider (how the joint factors) plus a raw evidence wrapper
(two-sided, uncalibrated), so the only moving parts are exactly the ones the
methods differ in. The likelihood baseline bypasses the search and emits a
bare ranking.
"""

from __future__ import annotations

from dataclasses import dataclass
from itertools import combinations
from typing import Optional

import numpy as np

from .data import DataBatch
from .deptree import (
    Coefficients,
    DependenceTree,
    build_tree,
    forest_coefficients,
    log_joint_from_coefficients,
)
from .gmm import EMConfig, fit_multivariate
from .nullmodel import NullModel
from .search import (
    CoefficientProvider,
    DetectionReport,
    PValueBasis,
    SearchConfig,
    detect_all,
)

GMM_LIKELIHOOD = "gmm_likelihood"
INDEPENDENCE_TESTS = "independence_tests"
SINGLE_BAYES_NET = "single_bayes_net"
BASELINE_TAGS = (GMM_LIKELIHOOD, INDEPENDENCE_TESTS, SINGLE_BAYES_NET)


@dataclass(frozen=True)
class BaselineKind:
    tag: str

    def __post_init__(self):
        if self.tag not in BASELINE_TAGS:
            raise ValueError(f"tag must be one of {BASELINE_TAGS}, got {self.tag!r}")


class RawEvidence:
    """Two-sided, uncalibrated candidate evidence.

    Streams are whatever joint factorization the basis provider supplies,
    treated directly as log p-values at every order; n_factors == 1 keeps the
    engine's product-of-uniforms correction switched off, which is the
    methods' defining (mis)treatment of multi-factor products.
    """

    def __init__(self, basis: PValueBasis):
        self.basis = basis

    @property
    def direction_alphabet(self) -> tuple[int, ...]:
        return (0,)

    def n_factors(self, order: int) -> int:
        return 1

    def stream(self, features, sides, rows=None) -> np.ndarray:
        return self.basis.log_joint(features, rows=rows)


def independence_coefficients(features, pairwise: bool = True) -> Coefficients:
    """Joint factorization under assumed feature independence: every unordered
    pair contributes its p-value once (or every feature its singleton), with
    no degree corrections. Single features always use the singleton."""
    feats = tuple(sorted(int(f) for f in features))
    if len(feats) == 1 or not pairwise:
        return {(j,): 1.0 for j in feats}
    return {pair: 1.0 for pair in combinations(feats, 2)}


def independence_provider(pairwise: bool = True) -> CoefficientProvider:
    def provider(features: tuple[int, ...]) -> Coefficients:
        return independence_coefficients(features, pairwise)

    return provider


def induced_forest_coefficients(tree: DependenceTree, features) -> Coefficients:
    """Restrict a global tree to a feature subset: edges with both endpoints
    inside survive, everything else decays to singleton factors."""
    feats = tuple(sorted(int(f) for f in features))
    subset = set(feats)
    edges = [e for e in tree.edges if e[0] in subset and e[1] in subset]
    return forest_coefficients(feats, edges)


def induced_forest_provider(tree: DependenceTree) -> CoefficientProvider:
    def provider(features: tuple[int, ...]) -> Coefficients:
        return induced_forest_coefficients(tree, features)

    return provider


def global_tree(model: NullModel) -> DependenceTree:
    """The single dependence tree over all model features."""
    return build_tree(model, tuple(range(model.dimension)))


def independence_score(model: NullModel, features, x, pairwise: bool = True) -> float:
    """Joint p-value of one full-width sample on a feature subset under the
    independence assumption (product of two-sided pair p-values)."""
    coeffs = independence_coefficients(features, pairwise)
    return float(np.exp(log_joint_from_coefficients(model, coeffs, x))[0])


def single_bn_score(model: NullModel, tree: DependenceTree, features, x) -> float:
    """Joint p-value of one full-width sample on a feature subset under the
    factorization induced by the global tree."""
    coeffs = induced_forest_coefficients(tree, features)
    return float(np.exp(log_joint_from_coefficients(model, coeffs, x))[0])


def detect_with_baseline(kind, model: NullModel, batch: DataBatch,
                         config: SearchConfig, pairwise: bool = True
                         ) -> DetectionReport:
    """Run the full search/extraction pipeline with a baseline's evidence."""
    tag = kind.tag if isinstance(kind, BaselineKind) else BaselineKind(kind).tag
    if tag == INDEPENDENCE_TESTS:
        provider = independence_provider(pairwise)
    elif tag == SINGLE_BAYES_NET:
        provider = induced_forest_provider(global_tree(model))
    else:
        raise ValueError(f"{tag} does not run through the search engine")
    return detect_all(model, batch, config, provider=provider,
                      evidence_factory=RawEvidence)


def gmm_likelihood_rank(train: DataBatch, test: DataBatch,
                        config: Optional[EMConfig] = None) -> list[int]:
    """Rank test samples by ascending log-likelihood under one full-dimensional
    mixture of the training data (most anomalous first; ties keep batch
    order, so duplicate rows receive adjacent ranks)."""
    if train.n_features != test.n_features:
        raise ValueError(
            f"train has {train.n_features} features, test has {test.n_features}")
    model = fit_multivariate(train.X, config or EMConfig())
    loglik = model.logpdf(test.X)
    return [int(i) for i in np.argsort(loglik, kind="stable")]
