"""Shared test helpers: hand-built null models and brute-force tree oracles."""

import heapq
import itertools

import numpy as np

from groupscan.gmm import BivariateGMM, UnivariateGMM
from groupscan.nullmodel import NullModel, iter_pairs


def make_simple_model(mi, correlations=None) -> NullModel:
    """Single-component standard-normal null with a prescribed MI matrix.

    correlations: optional {(j, k): rho} for selected pairs (j < k).
    """
    mi = np.asarray(mi, dtype=float)
    D = mi.shape[0]
    uni = tuple(UnivariateGMM(weights=[1.0], means=[0.0], variances=[1.0])
                for _ in range(D))
    biv = []
    for j, k in iter_pairs(D):
        rho = 0.0 if correlations is None else float(correlations.get((j, k), 0.0))
        biv.append(BivariateGMM(weights=[1.0], means=[[0.0, 0.0]],
                                covariances=[[[1.0, rho], [rho, 1.0]]]))
    return NullModel(dimension=D, n_train=1000, univariate=uni,
                     bivariate=tuple(biv), mi=mi)


def random_mi_matrix(rng, D) -> np.ndarray:
    m = np.zeros((D, D))
    for j, k in iter_pairs(D):
        m[j, k] = m[k, j] = rng.uniform(0.0, 1.0)
    return m


def _prufer_decode(seq, nodes):
    n = len(nodes)
    degree = [1] * n
    for s in seq:
        degree[s] += 1
    leaves = [i for i in range(n) if degree[i] == 1]
    heapq.heapify(leaves)
    edges = []
    for s in seq:
        leaf = heapq.heappop(leaves)
        edges.append((nodes[leaf], nodes[s]))
        degree[s] -= 1
        if degree[s] == 1:
            heapq.heappush(leaves, s)
    u = heapq.heappop(leaves)
    v = heapq.heappop(leaves)
    edges.append((nodes[u], nodes[v]))
    return edges


def all_spanning_trees(nodes):
    """Every labeled spanning tree on the nodes (Cayley: n^(n-2) of them),
    enumerated through Prufer sequences."""
    nodes = list(nodes)
    n = len(nodes)
    if n == 1:
        yield []
        return
    if n == 2:
        yield [(nodes[0], nodes[1])]
        return
    for seq in itertools.product(range(n), repeat=n - 2):
        yield _prufer_decode(seq, nodes)


def tree_weight(mi, edges) -> float:
    return float(sum(mi[j, k] for j, k in edges))
