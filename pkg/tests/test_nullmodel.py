"""Tests for null model training, counting, persistence, and MI plumbing."""

import numpy as np
import pytest

from groupscan.data import DataBatch, load_csv, save_csv
from groupscan.errors import DataQualityError
from groupscan.gmm import EMConfig
from groupscan.nullmodel import (
    NullModel,
    load_model,
    pair_index,
    save_model,
    train_null,
)
from groupscan.pvalue import pair_pvalue, singleton_pvalue

FAST_EM = EMConfig(max_components=2, restarts=2)


def _batch(rng, T=300, D=3):
    return DataBatch(X=rng.normal(size=(T, D)),
                     feature_names=tuple(f"f{i}" for i in range(D)))


def test_pair_index_enumerates_lexicographically():
    D = 5
    seen = [pair_index(D, j, k) for j in range(D) for k in range(j + 1, D)]
    assert seen == list(range(D * (D - 1) // 2))
    assert pair_index(D, 3, 1) == pair_index(D, 1, 3)
    with pytest.raises(ValueError):
        pair_index(D, 2, 2)


def test_counts_for_three_features():
    model = train_null(_batch(np.random.default_rng(0)), FAST_EM, mi_samples=10**4)
    assert model.dimension == 3
    assert len(model.univariate) == 3
    assert len(model.bivariate) == 3
    assert model.mi.shape == (3, 3)
    assert np.all(np.diag(model.mi) == 0.0)
    assert np.all(model.mi >= 0.0)
    assert np.array_equal(model.mi, model.mi.T)


def test_roundtrip_reproduces_pvalues(tmp_path):
    rng = np.random.default_rng(1)
    model = train_null(_batch(rng), FAST_EM, mi_samples=10**4)
    path = tmp_path / "model.json"
    save_model(model, path)
    loaded = load_model(path)
    probe = rng.normal(size=(50, 3))
    for j in range(3):
        a = singleton_pvalue(model.univariate[j], probe[:, j])
        b = singleton_pvalue(loaded.univariate[j], probe[:, j])
        assert np.array_equal(a, b)
    a = pair_pvalue(model.pair(0, 2), probe[:, [0, 2]])
    b = pair_pvalue(loaded.pair(0, 2), probe[:, [0, 2]])
    assert np.array_equal(a, b)
    assert np.array_equal(model.mi, loaded.mi)


def test_retrain_is_byte_identical(tmp_path):
    rng = np.random.default_rng(2)
    batch = _batch(rng)
    p1, p2 = tmp_path / "a.json", tmp_path / "b.json"
    save_model(train_null(batch, FAST_EM, mi_samples=10**4), p1)
    save_model(train_null(batch, FAST_EM, mi_samples=10**4), p2)
    assert p1.read_bytes() == p2.read_bytes()


def test_independent_features_have_small_mi():
    rng = np.random.default_rng(3)
    model = train_null(_batch(rng, T=600), FAST_EM, mi_samples=10**5)
    off_diag = model.mi[~np.eye(3, dtype=bool)]
    assert np.all(off_diag < 0.02)


def test_non_finite_cell_named():
    rng = np.random.default_rng(4)
    X = rng.normal(size=(50, 3))
    X[17, 2] = np.nan
    batch = DataBatch(X=X, feature_names=("a", "b", "c"))
    with pytest.raises(DataQualityError, match=r"row 17.*'c'"):
        train_null(batch, FAST_EM, mi_samples=10**4)


def test_tiny_batch_rejected():
    batch = DataBatch(X=np.zeros((5, 2)), feature_names=("a", "b"))
    with pytest.raises(DataQualityError):
        train_null(batch, FAST_EM, mi_samples=10**4)


def test_labels_are_ignored(tmp_path):
    rng = np.random.default_rng(5)
    X = rng.normal(size=(200, 3))
    plain = DataBatch(X=X, feature_names=("a", "b", "c"))
    labeled = DataBatch(X=X, feature_names=("a", "b", "c"),
                        labels=rng.integers(0, 2, size=200))
    p1, p2 = tmp_path / "plain.json", tmp_path / "labeled.json"
    save_model(train_null(plain, FAST_EM, mi_samples=10**4), p1)
    save_model(train_null(labeled, FAST_EM, mi_samples=10**4), p2)
    assert p1.read_bytes() == p2.read_bytes()


def test_csv_roundtrip_preserves_features(tmp_path):
    rng = np.random.default_rng(6)
    batch = DataBatch(
        X=rng.normal(size=(40, 3)),
        feature_names=("p1", "p2", "p3"),
        labels=rng.integers(0, 3, size=40),
        ids=tuple(f"flow{i}" for i in range(40)),
    )
    path = tmp_path / "batch.csv"
    save_csv(batch, path)
    loaded = load_csv(path)
    assert loaded.feature_names == ("p1", "p2", "p3")
    assert np.allclose(loaded.X, batch.X)
    assert np.array_equal(loaded.labels, batch.labels)
    assert loaded.ids == batch.ids


def test_training_pit_mass_stored_and_roundtripped(tmp_path):
    rng = np.random.default_rng(8)
    model = train_null(_batch(rng, T=300), FAST_EM, mi_samples=10**4)
    assert model.calibration_z is not None
    assert model.calibration_z.shape == (300, 3)
    # columns are sorted PIT z-scores of a matching sample: near-standard normal
    for j in range(3):
        col = model.calibration_z[:, j]
        assert np.all(np.diff(col) >= 0.0)
        assert abs(col.mean()) < 0.2
        assert abs(col.std() - 1.0) < 0.2
    path = tmp_path / "model.json"
    save_model(model, path)
    loaded = load_model(path)
    assert np.array_equal(loaded.calibration_z, model.calibration_z)


def test_training_pit_mass_capped(tmp_path):
    rng = np.random.default_rng(9)
    model = train_null(_batch(rng, T=1500, D=2), FAST_EM, mi_samples=10**4)
    assert model.calibration_z.shape == (1024, 2)
    # quantile-spaced subsample keeps the extremes
    full = np.sort(model.calibration_z[:, 0])
    assert full[0] == model.calibration_z[0, 0]
    assert full[-1] == model.calibration_z[-1, 0]


def test_calibration_mass_shape_validated():
    rng = np.random.default_rng(10)
    model = train_null(_batch(rng), FAST_EM, mi_samples=10**4)
    with pytest.raises(ValueError):
        NullModel(
            dimension=model.dimension,
            n_train=model.n_train,
            univariate=model.univariate,
            bivariate=model.bivariate,
            mi=model.mi,
            calibration_z=np.zeros((10, 2)),
        )


def test_model_validation_catches_bad_mi():
    rng = np.random.default_rng(7)
    model = train_null(_batch(rng), FAST_EM, mi_samples=10**4)
    bad = model.mi.copy()
    bad[0, 1] = -0.5
    bad[1, 0] = -0.5
    with pytest.raises(ValueError):
        NullModel(
            dimension=model.dimension,
            n_train=model.n_train,
            univariate=model.univariate,
            bivariate=model.bivariate,
            mi=bad,
        )
