"""The null hypothesis: every per-feature and per-pair mixture, plus the
pairwise mutual-information matrix.

Training fits each model independently by EM + BIC (the marginals are not
forced to be consistent; the p-value layer clamps the artifacts that can
cause). MI for every pair is Monte-Carlo estimated from that pair's fitted
bivariate mixture. A NullModel is immutable after construction and safe to
share across threads.

Persistence is a versioned JSON document; floats go through python's repr so
a reload is bit-exact and retraining with the same seed reproduces the same
bytes.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass

import numpy as np

from .data import DataBatch
from .errors import DataQualityError
from .pvalue import pit_z
from .gmm import (
    BivariateGMM,
    EMConfig,
    UnivariateGMM,
    estimate_mi,
    fit_bivariate,
    fit_univariate,
)

MODEL_FORMAT_VERSION = 1


def pair_index(D: int, j: int, k: int) -> int:
    """Position of unordered pair (j, k) in lexicographic j<k enumeration."""
    if j > k:
        j, k = k, j
    if j == k or k >= D or j < 0:
        raise ValueError(f"invalid feature pair ({j}, {k}) for D={D}")
    return j * D - j * (j + 1) // 2 + (k - j - 1)


def iter_pairs(D: int):
    for j in range(D):
        for k in range(j + 1, D):
            yield j, k


@dataclass(frozen=True)
class NullModel:
    """All first- and second-order null mixtures plus the MI edge weights."""

    dimension: int
    n_train: int
    univariate: tuple[UnivariateGMM, ...]
    bivariate: tuple[BivariateGMM, ...]
    mi: np.ndarray
    config_hash: str = ""
    version: int = MODEL_FORMAT_VERSION
    calibration_z: np.ndarray | None = None

    def __post_init__(self):
        D = self.dimension
        if len(self.univariate) != D:
            raise ValueError(f"expected {D} univariate models, got {len(self.univariate)}")
        if len(self.bivariate) != D * (D - 1) // 2:
            raise ValueError("one bivariate model per unordered feature pair required")
        mi = np.asarray(self.mi, dtype=float)
        if mi.shape != (D, D):
            raise ValueError(f"MI matrix must be {D}x{D}")
        if not np.allclose(mi, mi.T):
            raise ValueError("MI matrix must be symmetric")
        if np.any(np.diag(mi) != 0.0):
            raise ValueError("MI diagonal must be zero")
        if np.any(mi < 0.0):
            raise ValueError("MI entries must be nonnegative")
        object.__setattr__(self, "mi", mi)
        if self.calibration_z is not None:
            cz = np.asarray(self.calibration_z, dtype=float)
            if cz.ndim != 2 or cz.shape[1] != D:
                raise ValueError("calibration_z must have one column per feature")
            object.__setattr__(self, "calibration_z", cz)

    def pair(self, j: int, k: int) -> BivariateGMM:
        """Bivariate model of the unordered pair; slot 0 is min(j, k)."""
        return self.bivariate[pair_index(self.dimension, j, k)]

    def to_dict(self) -> dict:
        return {
            "version": self.version,
            "D": self.dimension,
            "T_l": self.n_train,
            "univariate": [m.to_dict() for m in self.univariate],
            "bivariate": [
                {"j": j, "k": k, "model": self.pair(j, k).to_dict()}
                for j, k in iter_pairs(self.dimension)
            ],
            "mi": self.mi.tolist(),
            "metadata": {"config_hash": self.config_hash},
            "calibration_z": None
            if self.calibration_z is None
            else self.calibration_z.tolist(),
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "NullModel":
        version = int(doc.get("version", -1))
        if version != MODEL_FORMAT_VERSION:
            raise DataQualityError(f"unsupported model format version: {version}")
        D = int(doc["D"])
        uni = tuple(UnivariateGMM.from_dict(d) for d in doc["univariate"])
        biv = [None] * (D * (D - 1) // 2)
        for ent in doc["bivariate"]:
            biv[pair_index(D, int(ent["j"]), int(ent["k"]))] = BivariateGMM.from_dict(ent["model"])
        if any(m is None for m in biv):
            raise DataQualityError("model file is missing a feature pair")
        return cls(
            dimension=D,
            n_train=int(doc["T_l"]),
            univariate=uni,
            bivariate=tuple(biv),
            mi=np.array(doc["mi"], dtype=float),
            config_hash=str(doc.get("metadata", {}).get("config_hash", "")),
            version=version,
            calibration_z=None
            if doc.get("calibration_z") is None
            else np.array(doc["calibration_z"], dtype=float),
        )


def _config_hash(config: EMConfig, mi_samples: int) -> str:
    blob = json.dumps({"em": asdict(config), "mi_samples": int(mi_samples)}, sort_keys=True)
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


def train_null(batch: DataBatch, config: EMConfig = EMConfig(),
               mi_samples: int = 10**6) -> NullModel:
    """Fit all univariate and bivariate nulls and the MI matrix.

    Labels on the batch, if any, are ignored. Non-finite cells are rejected
    with the offending row/column named.
    """
    batch.require_finite()
    X = batch.X
    T, D = X.shape
    if T < 10:
        raise DataQualityError(f"training batch has {T} rows; need at least 10")
    if D < 1:
        raise DataQualityError("training batch has no feature columns")

    univariate = tuple(
        fit_univariate(X[:, j], config, key=(j,)) for j in range(D)
    )
    bivariate = []
    mi = np.zeros((D, D))
    for j, k in iter_pairs(D):
        model = fit_bivariate(X[:, [j, k]], config, key=(j, k))
        bivariate.append(model)
        est = estimate_mi(model, M=mi_samples, seed=[config.seed, 4, j, k])
        mi[j, k] = mi[k, j] = est
    return NullModel(
        dimension=D,
        n_train=T,
        univariate=univariate,
        bivariate=tuple(bivariate),
        mi=mi,
        config_hash=_config_hash(config, mi_samples),
        calibration_z=_training_pit(univariate, X),
    )


def _training_pit(univariate, X: np.ndarray, cap: int = 1024) -> np.ndarray:
    """Model-PIT z-scores of the training columns, kept for later pooling.

    Detection recalibrates its evidence against clean training mass plus the
    test bulk; storing quantile-spaced PIT values (capped per feature) gives
    the detector that clean mass without shipping the raw batch.
    """
    T = X.shape[0]
    cols = [np.sort(pit_z(m, X[:, j])) for j, m in enumerate(univariate)]
    if T > cap:
        keep = np.round(np.linspace(0, T - 1, cap)).astype(int)
        cols = [c[keep] for c in cols]
    return np.column_stack(cols)


def save_model(model: NullModel, path) -> None:
    with open(path, "w") as fh:
        json.dump(model.to_dict(), fh, indent=1)
        fh.write("\n")


def load_model(path) -> NullModel:
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise DataQualityError(f"cannot read model file {path}: {exc}") from exc
    return NullModel.from_dict(doc)
