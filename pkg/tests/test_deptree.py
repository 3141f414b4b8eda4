"""Tests for dependence-tree construction and tree-factorized joint p-values."""

import numpy as np
import pytest
from conftest import all_spanning_trees, make_simple_model, random_mi_matrix, tree_weight

from groupscan.data import DataBatch
from groupscan.deptree import (
    DependenceTree,
    build_tree,
    joint_pvalue,
    log_joint_pvalue,
    tree_coefficients,
)
from groupscan.gmm import EMConfig, marginalize
from groupscan.nullmodel import train_null
from groupscan.pvalue import (
    P_MIN,
    conditional_pvalue,
    pair_pvalue,
    singleton_pvalue,
)


class TestBuildTree:
    def test_single_feature_is_edgeless(self):
        model = make_simple_model(np.zeros((5, 5)))
        tree = build_tree(model, [3])
        assert tree.features == (3,)
        assert tree.edges == ()
        assert tree.root == 3

    def test_forced_chain(self):
        mi = np.zeros((3, 3))
        mi[0, 1] = mi[1, 0] = 0.5
        mi[1, 2] = mi[2, 1] = 0.4
        mi[0, 2] = mi[2, 0] = 0.1
        tree = build_tree(make_simple_model(mi), [0, 1, 2])
        assert tree.edges == ((0, 1), (1, 2))
        assert tree.root == 0

    def test_chain_generated_data_recovers_chain(self):
        rng = np.random.default_rng(0)
        x0 = rng.normal(size=1500)
        x1 = 0.9 * x0 + np.sqrt(1 - 0.81) * rng.normal(size=1500)
        x2 = 0.9 * x1 + np.sqrt(1 - 0.81) * rng.normal(size=1500)
        batch = DataBatch(X=np.column_stack([x0, x1, x2]),
                          feature_names=("a", "b", "c"))
        model = train_null(batch, EMConfig(max_components=2, restarts=2),
                           mi_samples=10**5)
        tree = build_tree(model, [0, 1, 2])
        assert tree.edges == ((0, 1), (1, 2))
        # brute force over all 3 spanning trees confirms maximality
        best = max(tree_weight(model.mi, e) for e in all_spanning_trees([0, 1, 2]))
        assert abs(tree_weight(model.mi, tree.edges) - best) < 1e-12

    def test_matches_bruteforce_up_to_six_features(self):
        rng = np.random.default_rng(1)
        for trial in range(100):
            D = int(rng.integers(2, 9))
            mi = random_mi_matrix(rng, D)
            model = make_simple_model(mi)
            size = int(rng.integers(1, min(D, 6) + 1))
            subset = sorted(rng.choice(D, size=size, replace=False).tolist())
            tree = build_tree(model, subset)
            best = max(tree_weight(mi, e) for e in all_spanning_trees(subset))
            assert abs(tree_weight(mi, tree.edges) - best) < 1e-12

    def test_tie_break_is_lexicographic(self):
        model = make_simple_model(np.ones((4, 4)) - np.eye(4))
        tree = build_tree(model, [0, 1, 2, 3])
        assert tree.edges == ((0, 1), (0, 2), (0, 3))

    def test_validation(self):
        model = make_simple_model(np.zeros((3, 3)))
        with pytest.raises(ValueError):
            build_tree(model, [])
        with pytest.raises(ValueError):
            build_tree(model, [0, 7])
        with pytest.raises(ValueError):
            DependenceTree(features=(0, 1, 2), edges=((0, 1),), root=0)
        with pytest.raises(ValueError):
            DependenceTree(features=(0, 1, 2), edges=((0, 1), (0, 1)), root=0)


class TestJointPvalue:
    def test_single_feature_equals_singleton(self):
        model = make_simple_model(np.zeros((3, 3)))
        tree = build_tree(model, [1])
        for x in (0.0, 1.3, -2.7):
            row = np.array([9.9, x, 9.9])  # other features must not matter
            assert joint_pvalue(model, tree, row) == singleton_pvalue(
                model.univariate[1], x)

    def test_two_features_equal_pair(self):
        model = make_simple_model(np.zeros((4, 4)), correlations={(1, 3): 0.6})
        tree = build_tree(model, [1, 3])
        rng = np.random.default_rng(2)
        for _ in range(20):
            row = rng.normal(size=4)
            assert joint_pvalue(model, tree, row) == pair_pvalue(
                model.pair(1, 3), row[[1, 3]])

    def test_independent_chain_is_singleton_product(self):
        mi = np.zeros((3, 3))
        mi[0, 1] = mi[1, 0] = 0.2
        mi[1, 2] = mi[2, 1] = 0.1
        model = make_simple_model(mi)
        tree = build_tree(model, [0, 1, 2])
        rng = np.random.default_rng(3)
        for _ in range(20):
            row = rng.normal(size=3)
            want = np.prod([singleton_pvalue(model.univariate[j], row[j])
                            for j in range(3)])
            assert abs(joint_pvalue(model, tree, row) - want) < 1e-6

    def test_root_and_order_invariance(self):
        mi = random_mi_matrix(np.random.default_rng(4), 5)
        model = make_simple_model(mi, correlations={(0, 1): 0.5, (2, 4): -0.4})
        rng = np.random.default_rng(5)
        rows = rng.normal(size=(10, 5))
        base = log_joint_pvalue(model, build_tree(model, [0, 1, 2, 4]), rows)
        permuted = log_joint_pvalue(model, build_tree(model, [4, 2, 1, 0]), rows)
        assert np.array_equal(base, permuted)
        tree = build_tree(model, [0, 1, 2, 4])
        for other_root in tree.features:
            rerooted = DependenceTree(features=tree.features, edges=tree.edges,
                                      root=other_root)
            assert np.array_equal(log_joint_pvalue(model, rerooted, rows), base)

    def test_rooted_two_node_equivalence(self):
        # root's marginal singleton times the child's conditional equals the
        # pair p-value, which is what the symmetric form gives for two nodes
        model = make_simple_model(np.zeros((2, 2)), correlations={(0, 1): 0.7})
        pair = model.pair(0, 1)
        tree = build_tree(model, [0, 1])
        rng = np.random.default_rng(6)
        for _ in range(20):
            row = rng.normal(size=2)
            rooted = singleton_pvalue(marginalize(pair, 0), row[0]) \
                * conditional_pvalue(pair, row, condition_slot=0)
            sym = joint_pvalue(model, tree, row)
            assert abs(rooted - sym) < 1e-12

    def test_range_clamped(self):
        model = make_simple_model(np.zeros((3, 3)), correlations={(0, 1): 0.9})
        tree = build_tree(model, [0, 1, 2])
        rows = np.array([[0.0, 0.0, 0.0], [40.0, -40.0, 55.0]])
        p = joint_pvalue(model, tree, rows)
        assert np.all(p >= P_MIN)
        assert np.all(p <= 1.0)

    def test_coefficients_star_tree(self):
        mi = np.zeros((4, 4))
        for k in (1, 2, 3):
            mi[0, k] = mi[k, 0] = 1.0
        model = make_simple_model(mi)
        tree = build_tree(model, [0, 1, 2, 3])
        coeffs = tree_coefficients(tree)
        assert coeffs[(0,)] == -2.0  # hub degree 3 -> exponent 1 - 3
        assert (1,) not in coeffs  # leaves have exponent 0
        assert coeffs[(0, 1)] == 1.0
