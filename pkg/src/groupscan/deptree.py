"""Cluster-specific dependence trees and tree-factorized joint p-values.

For a candidate feature subset, the maximum-MI spanning tree (Kruskal over
the null model's MI matrix, lexicographic tie-breaking) factorizes the joint
null into first- and second-order terms. The joint p-value is evaluated in
the root-invariant form

    prod_edges pair_p(e) / prod_nodes singleton_p(v) ** (deg(v) - 1)

which equals the rooted conditional-chain product whenever the fitted
marginals are consistent, and sidesteps root choice when they are not. The
same formula applied to a forest (used when a global tree is restricted to a
subset) multiplies the per-component factorizations; an isolated node
contributes its singleton p-value.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .nullmodel import NullModel
from .pvalue import LOG_P_MIN, log_pair_pvalue, log_singleton_pvalue

# keys: (j,) for singleton factors, (j, k) with j < k for pair factors
Coefficients = dict[tuple[int, ...], float]


@dataclass(frozen=True)
class DependenceTree:
    """Spanning tree over a feature subset; edges are (j, k) with j < k."""

    features: tuple[int, ...]
    edges: tuple[tuple[int, int], ...]
    root: int

    def __post_init__(self):
        feats = tuple(sorted(self.features))
        object.__setattr__(self, "features", feats)
        if len(set(feats)) != len(feats) or not feats:
            raise ValueError("features must be a non-empty set")
        edges = tuple(sorted(tuple(sorted(e)) for e in self.edges))
        object.__setattr__(self, "edges", edges)
        if len(edges) != len(feats) - 1:
            raise ValueError("a spanning tree has |features| - 1 edges")
        node_set = set(feats)
        parent = {v: v for v in feats}

        def find(v):
            while parent[v] != v:
                parent[v] = parent[parent[v]]
                v = parent[v]
            return v

        for j, k in edges:
            if j not in node_set or k not in node_set:
                raise ValueError(f"edge ({j}, {k}) leaves the feature set")
            rj, rk = find(j), find(k)
            if rj == rk:
                raise ValueError("edges contain a cycle")
            parent[rj] = rk
        if self.root not in node_set:
            raise ValueError("root must be one of the features")

    def degrees(self) -> dict[int, int]:
        deg = {v: 0 for v in self.features}
        for j, k in self.edges:
            deg[j] += 1
            deg[k] += 1
        return deg


def build_tree(model: NullModel, features) -> DependenceTree:
    """Maximum-MI spanning tree over the subset, by Kruskal with union-find.

    Candidate edges are ranked by (-MI, j, k), so equal-weight choices resolve
    lexicographically and the result is deterministic.
    """
    feats = tuple(sorted(set(int(f) for f in features)))
    if not feats:
        raise ValueError("feature subset is empty")
    if feats[-1] >= model.dimension or feats[0] < 0:
        raise ValueError(f"feature index out of range for D={model.dimension}")
    root = feats[0]
    if len(feats) == 1:
        return DependenceTree(features=feats, edges=(), root=root)

    candidates = sorted(
        ((j, k) for idx, j in enumerate(feats) for k in feats[idx + 1:]),
        key=lambda e: (-model.mi[e[0], e[1]], e[0], e[1]),
    )
    parent = {v: v for v in feats}

    def find(v):
        while parent[v] != v:
            parent[v] = parent[parent[v]]
            v = parent[v]
        return v

    edges = []
    for j, k in candidates:
        rj, rk = find(j), find(k)
        if rj != rk:
            parent[rj] = rk
            edges.append((j, k))
            if len(edges) == len(feats) - 1:
                break
    return DependenceTree(features=feats, edges=tuple(edges), root=root)


def forest_coefficients(features, edges) -> Coefficients:
    """Log-domain factor exponents of the symmetric factorization of a forest:
    +1 per edge's pair p-value, (1 - degree) per node's singleton p-value."""
    deg = {int(v): 0 for v in features}
    coeffs: Coefficients = {}
    for j, k in edges:
        j, k = int(min(j, k)), int(max(j, k))
        coeffs[(j, k)] = coeffs.get((j, k), 0.0) + 1.0
        deg[j] += 1
        deg[k] += 1
    for v, d in deg.items():
        if d != 1:
            coeffs[(v,)] = float(1 - d)
    return coeffs


def tree_coefficients(tree: DependenceTree) -> Coefficients:
    return forest_coefficients(tree.features, tree.edges)


def log_joint_from_coefficients(model: NullModel, coeffs: Coefficients, X) -> np.ndarray:
    """Evaluate sum_f coef_f * log p_f(x) over rows of the full-width batch X,
    clamped to [log P_MIN, 0]. Keys are iterated in sorted order so the result
    is bitwise reproducible regardless of how the coefficients were built."""
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[None, :]
    total = np.zeros(X.shape[0])
    for key in sorted(coeffs):
        coef = coeffs[key]
        if coef == 0.0:
            continue
        if len(key) == 1:
            term = log_singleton_pvalue(model.univariate[key[0]], X[:, key[0]])
        else:
            j, k = key
            term = log_pair_pvalue(model.pair(j, k), X[:, [j, k]])
        total += coef * term
    return np.clip(total, LOG_P_MIN, 0.0)


def log_joint_pvalue(model: NullModel, tree: DependenceTree, x) -> np.ndarray:
    """Log joint p-values of sample rows under the tree factorization."""
    return log_joint_from_coefficients(model, tree_coefficients(tree), x)


def joint_pvalue(model: NullModel, tree: DependenceTree, x):
    """Tree-factorized joint p-value of one full-width sample row (or a batch),
    in [P_MIN, 1]. A single-feature tree reduces to the singleton p-value and
    a two-feature tree to the pair p-value exactly."""
    X = np.asarray(x, dtype=float)
    p = np.exp(log_joint_pvalue(model, tree, X))
    if X.ndim == 1:
        return float(p[0])
    return p
