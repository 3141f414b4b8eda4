"""Gaussian mixture models fitted by EM with BIC order selection.

The null hypothesis is a family of these: one univariate mixture per feature,
one bivariate mixture per feature pair (and, for the likelihood baseline, a
single full-dimensional mixture). All fits share one EM core: k-means++ mean
seeding, multiple restarts, a relative log-likelihood stopping rule, and
per-dimension variance floors applied as diagonal loading so no component can
collapse.

Model order is chosen by BIC = -2*loglik + n_params*ln(T) over component
counts 1..max_components, ties toward the smaller order.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.linalg import solve_triangular
from scipy.special import log_ndtr, logsumexp, ndtri

from .errors import DataQualityError, NumericalError

# fallback when a column is exactly constant and the relative floor vanishes
ABS_VARIANCE_FLOOR = 1e-12

_LOG_2PI = math.log(2.0 * math.pi)


@dataclass(frozen=True)
class EMConfig:
    """Knobs for the EM + BIC fitting procedure."""

    max_components: int = 10
    restarts: int = 5
    max_iter: int = 500
    tol: float = 1e-7
    variance_floor_scale: float = 1e-6
    seed: int = 0


def _as_prob_vector(weights, tol: float = 1e-9) -> np.ndarray:
    w = np.asarray(weights, dtype=float)
    if w.ndim != 1 or w.size < 1:
        raise ValueError("weights must be a non-empty vector")
    if np.any(w <= 0.0):
        raise ValueError("all mixture weights must be positive")
    if abs(w.sum() - 1.0) > tol:
        raise ValueError(f"weights sum to {w.sum()}, not 1")
    return w


def _gauss_parts(X: np.ndarray, means: np.ndarray, covs: np.ndarray):
    """Squared Mahalanobis distances (T, L) and log-determinants (L,)."""
    T, d = X.shape
    if d == 1:
        dx = X[:, 0, None] - means[None, :, 0]
        var = covs[:, 0, 0]
        return dx * dx / var, np.log(var)
    if d == 2:
        a = covs[:, 0, 0]
        b = covs[:, 1, 1]
        c = covs[:, 0, 1]
        det = a * b - c * c
        dx = X[:, 0, None] - means[None, :, 0]
        dy = X[:, 1, None] - means[None, :, 1]
        return (b * dx * dx - 2.0 * c * dx * dy + a * dy * dy) / det, np.log(det)
    maha = np.empty((T, len(means)))
    logdet = np.empty(len(means))
    for l in range(len(means)):
        try:
            chol = np.linalg.cholesky(covs[l])
        except np.linalg.LinAlgError as exc:
            raise NumericalError(f"covariance of component {l} is not PD") from exc
        sol = solve_triangular(chol, (X - means[l]).T, lower=True)
        maha[:, l] = (sol * sol).sum(axis=0)
        logdet[l] = 2.0 * np.log(np.diag(chol)).sum()
    return maha, logdet


def _log_gauss(X: np.ndarray, means: np.ndarray, covs: np.ndarray) -> np.ndarray:
    maha, logdet = _gauss_parts(X, means, covs)
    return -0.5 * (maha + logdet[None, :] + X.shape[1] * _LOG_2PI)


def _log_responsibilities(log_weights, log_comp, maha) -> np.ndarray:
    """Row-normalize log(weight * density); rows where every component density
    underflows fall back to a one-hot on the Mahalanobis-nearest component."""
    logc = log_comp + log_weights[None, :]
    norm = logsumexp(logc, axis=1)
    with np.errstate(invalid="ignore"):
        out = logc - norm[:, None]
    dead = ~np.isfinite(norm)
    if np.any(dead):
        out[dead, :] = -np.inf
        out[dead, np.argmin(maha[dead], axis=1)] = 0.0
    return out


class _MixtureBase:
    """Shared evaluation helpers; subclasses store the parameter arrays."""

    weights: np.ndarray

    def _means_covs(self) -> tuple[np.ndarray, np.ndarray]:
        raise NotImplementedError

    def _as_matrix(self, x) -> np.ndarray:
        raise NotImplementedError

    @property
    def n_components(self) -> int:
        return len(self.weights)

    def log_components(self, x) -> np.ndarray:
        """Per-component log density, shape (T, L) (no weight term)."""
        means, covs = self._means_covs()
        return _log_gauss(self._as_matrix(x), means, covs)

    def logpdf(self, x) -> np.ndarray:
        lw = np.log(self.weights)
        return logsumexp(self.log_components(x) + lw[None, :], axis=1)

    def log_responsibilities(self, x) -> np.ndarray:
        X = self._as_matrix(x)
        means, covs = self._means_covs()
        maha, logdet = _gauss_parts(X, means, covs)
        log_comp = -0.5 * (maha + logdet[None, :] + X.shape[1] * _LOG_2PI)
        return _log_responsibilities(np.log(self.weights), log_comp, maha)

    def responsibilities(self, x) -> np.ndarray:
        """Posterior component probabilities for a single observation."""
        X = self._as_matrix(x)
        if X.shape[0] != 1:
            raise ValueError("responsibilities() takes one observation")
        return np.exp(self.log_responsibilities(x)[0])

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        means, covs = self._means_covs()
        d = means.shape[1]
        comps = rng.choice(self.n_components, size=n, p=self.weights)
        z = rng.standard_normal((n, d))
        out = np.empty((n, d))
        for l in range(self.n_components):
            sel = comps == l
            if not np.any(sel):
                continue
            chol = np.linalg.cholesky(covs[l])
            out[sel] = means[l] + z[sel] @ chol.T
        return out


@dataclass(frozen=True)
class UnivariateGMM(_MixtureBase):
    """One-dimensional Gaussian mixture: the per-feature null."""

    weights: np.ndarray
    means: np.ndarray
    variances: np.ndarray
    degenerate: bool = False

    def __post_init__(self):
        object.__setattr__(self, "weights", _as_prob_vector(self.weights))
        object.__setattr__(self, "means", np.asarray(self.means, dtype=float))
        object.__setattr__(self, "variances", np.asarray(self.variances, dtype=float))
        L = len(self.weights)
        if self.means.shape != (L,) or self.variances.shape != (L,):
            raise ValueError("weights/means/variances length mismatch")
        if np.any(self.variances <= 0.0):
            raise ValueError("variances must be positive")

    def _means_covs(self):
        return self.means[:, None], self.variances[:, None, None]

    def _as_matrix(self, x) -> np.ndarray:
        arr = np.atleast_1d(np.asarray(x, dtype=float))
        return arr[:, None]

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        return super().sample(n, rng)[:, 0]

    def log_cdf(self, x) -> np.ndarray:
        """Log of the plain mixture CDF (weight-averaged, not posterior)."""
        arr = np.atleast_1d(np.asarray(x, dtype=float))
        z = (arr[:, None] - self.means[None, :]) / np.sqrt(self.variances)[None, :]
        return logsumexp(np.log(self.weights)[None, :] + log_ndtr(z), axis=1)

    def log_sf(self, x) -> np.ndarray:
        """Log of the plain mixture survival function."""
        arr = np.atleast_1d(np.asarray(x, dtype=float))
        z = (arr[:, None] - self.means[None, :]) / np.sqrt(self.variances)[None, :]
        return logsumexp(np.log(self.weights)[None, :] + log_ndtr(-z), axis=1)

    def quantile(self, u) -> np.ndarray:
        """Inverse mixture CDF by bisection; exact for single components."""
        uu = np.atleast_1d(np.asarray(u, dtype=float))
        if np.any((uu <= 0.0) | (uu >= 1.0)):
            raise ValueError("quantile arguments must lie strictly in (0, 1)")
        sig = np.sqrt(self.variances)
        if self.n_components == 1:
            return self.means[0] + sig[0] * ndtri(uu)
        lo = np.full_like(uu, float((self.means - 40.0 * sig).min()))
        hi = np.full_like(uu, float((self.means + 40.0 * sig).max()))
        for _ in range(200):
            mid = 0.5 * (lo + hi)
            below = self.log_cdf(mid) < np.log(uu)
            lo = np.where(below, mid, lo)
            hi = np.where(below, hi, mid)
        return 0.5 * (lo + hi)

    def to_dict(self) -> dict:
        return {
            "weights": self.weights.tolist(),
            "means": self.means.tolist(),
            "variances": self.variances.tolist(),
            "degenerate": self.degenerate,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "UnivariateGMM":
        return cls(
            weights=np.array(d["weights"]),
            means=np.array(d["means"]),
            variances=np.array(d["variances"]),
            degenerate=bool(d.get("degenerate", False)),
        )


@dataclass(frozen=True)
class BivariateGMM(_MixtureBase):
    """Two-dimensional Gaussian mixture: the per-feature-pair null."""

    weights: np.ndarray
    means: np.ndarray
    covariances: np.ndarray
    degenerate: bool = False

    def __post_init__(self):
        object.__setattr__(self, "weights", _as_prob_vector(self.weights))
        object.__setattr__(self, "means", np.asarray(self.means, dtype=float))
        object.__setattr__(self, "covariances", np.asarray(self.covariances, dtype=float))
        L = len(self.weights)
        if self.means.shape != (L, 2) or self.covariances.shape != (L, 2, 2):
            raise ValueError("means must be (L,2) and covariances (L,2,2)")
        for l, cov in enumerate(self.covariances):
            if abs(cov[0, 1] - cov[1, 0]) > 1e-12 * (1.0 + abs(cov[0, 1])):
                raise ValueError(f"component {l} covariance is not symmetric")
            if cov[0, 0] <= 0.0 or cov[1, 1] <= 0.0:
                raise ValueError(f"component {l} has non-positive diagonal")
            if np.linalg.det(cov) <= 0.0:
                raise ValueError(f"component {l} covariance is not positive-definite")

    def _means_covs(self):
        return self.means, self.covariances

    def _as_matrix(self, x) -> np.ndarray:
        arr = np.asarray(x, dtype=float)
        if arr.ndim == 1:
            arr = arr[None, :]
        if arr.shape[1] != 2:
            raise ValueError("expected 2-column input")
        return arr

    @property
    def sigmas(self) -> np.ndarray:
        """Per-component coordinate standard deviations, shape (L, 2)."""
        return np.sqrt(np.stack([self.covariances[:, 0, 0], self.covariances[:, 1, 1]], axis=1))

    @property
    def correlations(self) -> np.ndarray:
        s = self.sigmas
        rho = self.covariances[:, 0, 1] / (s[:, 0] * s[:, 1])
        return np.clip(rho, -1.0, 1.0)

    def to_dict(self) -> dict:
        return {
            "weights": self.weights.tolist(),
            "means": self.means.tolist(),
            "covariances": self.covariances.tolist(),
            "degenerate": self.degenerate,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "BivariateGMM":
        return cls(
            weights=np.array(d["weights"]),
            means=np.array(d["means"]),
            covariances=np.array(d["covariances"]),
            degenerate=bool(d.get("degenerate", False)),
        )


@dataclass(frozen=True)
class MultivariateGMM(_MixtureBase):
    """Full-dimensional mixture, used only by the likelihood-ranking baseline."""

    weights: np.ndarray
    means: np.ndarray
    covariances: np.ndarray
    degenerate: bool = False

    def __post_init__(self):
        object.__setattr__(self, "weights", _as_prob_vector(self.weights))
        object.__setattr__(self, "means", np.asarray(self.means, dtype=float))
        object.__setattr__(self, "covariances", np.asarray(self.covariances, dtype=float))

    def _means_covs(self):
        return self.means, self.covariances

    def _as_matrix(self, x) -> np.ndarray:
        arr = np.asarray(x, dtype=float)
        if arr.ndim == 1:
            arr = arr[None, :]
        return arr


def marginalize(pair_model: BivariateGMM, keep: int) -> UnivariateGMM:
    """Exact coordinate marginal of a bivariate mixture (no refitting)."""
    if keep not in (0, 1):
        raise ValueError("keep must be 0 or 1")
    return UnivariateGMM(
        weights=pair_model.weights,
        means=pair_model.means[:, keep],
        variances=pair_model.covariances[:, keep, keep],
        degenerate=pair_model.degenerate,
    )


def responsibilities(model: _MixtureBase, x) -> np.ndarray:
    """Posterior P[component l | x]; sums to 1 within 1e-12.

    If every component density underflows, falls back to a point mass on the
    nearest component in Mahalanobis distance (the argmax of the per-component
    log densities, which is that nearest component).
    """
    return model.responsibilities(x)


# ----------------------------------------------------------------------------
# EM core


def _kmeanspp_means(X: np.ndarray, L: int, rng: np.random.Generator) -> np.ndarray:
    T = X.shape[0]
    chosen = [int(rng.integers(T))]
    for _ in range(1, L):
        d2 = np.min(((X[:, None, :] - X[chosen][None, :, :]) ** 2).sum(axis=2), axis=1)
        total = d2.sum()
        if total <= 0.0:
            chosen.append(int(rng.integers(T)))
        else:
            chosen.append(int(rng.choice(T, p=d2 / total)))
    return X[chosen].astype(float)


def _em_run(X, L, rng, floor, config: EMConfig):
    """One EM run from a k-means++ start. Returns (w, means, covs, loglik) or
    None when a component collapses."""
    T, d = X.shape
    means = _kmeanspp_means(X, L, rng)
    cov0 = np.cov(X, rowvar=False, ddof=0).reshape(d, d) + np.diag(floor)
    covs = np.repeat(cov0[None, :, :], L, axis=0)
    w = np.full(L, 1.0 / L)
    loglik = -np.inf
    resp = None
    for _ in range(config.max_iter):
        logc = _log_gauss(X, means, covs) + np.log(w)[None, :]
        norm = logsumexp(logc, axis=1)
        new_loglik = float(norm.sum())
        resp = np.exp(logc - norm[:, None])
        if np.isfinite(loglik) and abs(new_loglik - loglik) <= config.tol * abs(loglik):
            loglik = new_loglik
            break
        loglik = new_loglik
        nk = resp.sum(axis=0)
        if np.any(nk < 1e-8):
            return None
        w = nk / nk.sum()
        means = (resp.T @ X) / nk[:, None]
        diff = X[:, None, :] - means[None, :, :]
        covs = np.einsum("tl,tli,tlj->lij", resp, diff, diff) / nk[:, None, None]
        covs += np.diag(floor)[None, :, :]
    return w, means, covs, loglik


def _n_free_params(L: int, d: int) -> int:
    return (L - 1) + L * d + L * d * (d + 1) // 2


def _fit_mixture(X: np.ndarray, config: EMConfig, key: tuple[int, ...]):
    """EM + BIC over component counts. Returns (w, means, covs, degenerate)."""
    X = np.asarray(X, dtype=float)
    T, d = X.shape
    if not np.all(np.isfinite(X)):
        raise DataQualityError("non-finite values in fitting data")
    if T < 10:
        raise DataQualityError(f"need at least 10 samples to fit a mixture, got {T}")

    col_var = X.var(axis=0, ddof=0)
    degenerate = bool(np.any(col_var == 0.0))
    floor = np.where(col_var > 0.0, config.variance_floor_scale * col_var, ABS_VARIANCE_FLOOR)
    if degenerate and np.all(col_var == 0.0):
        # constant input: single component pinned at the value, floor variance
        return (np.array([1.0]), X[:1].astype(float), np.diag(floor)[None, :, :], True)

    # each component should be supported by >= 10 samples
    l_cap = max(1, min(config.max_components, T // 10))
    best = None  # (bic, L, params)
    for L in range(1, l_cap + 1):
        best_run = None
        for restart in range(config.restarts):
            rng = np.random.default_rng([config.seed, *key, L, restart])
            run = _em_run(X, L, rng, floor, config)
            if run is None:
                continue
            if best_run is None or run[3] > best_run[3]:
                best_run = run
        if best_run is None:
            continue
        bic = -2.0 * best_run[3] + _n_free_params(L, d) * math.log(T)
        if best is None or bic < best[0]:
            best = (bic, L, best_run)
    if best is None:
        raise NumericalError("EM failed to produce a valid model at every order")
    w, means, covs, _ = best[2]
    return w, means, covs, degenerate


def fit_univariate(column, config: EMConfig, key: tuple[int, ...] = ()) -> UnivariateGMM:
    """BIC-best univariate mixture for one feature column."""
    X = np.asarray(column, dtype=float).reshape(-1, 1)
    w, means, covs, degenerate = _fit_mixture(X, config, (1, *key))
    return UnivariateGMM(weights=w, means=means[:, 0], variances=covs[:, 0, 0],
                         degenerate=degenerate)


def fit_bivariate(columns, config: EMConfig, key: tuple[int, ...] = ()) -> BivariateGMM:
    """BIC-best bivariate mixture for one feature pair (T x 2 input)."""
    X = np.asarray(columns, dtype=float)
    if X.ndim != 2 or X.shape[1] != 2:
        raise DataQualityError(f"expected a T x 2 matrix, got shape {X.shape}")
    w, means, covs, degenerate = _fit_mixture(X, config, (2, *key))
    return BivariateGMM(weights=w, means=means, covariances=covs, degenerate=degenerate)


def fit_multivariate(X, config: EMConfig, key: tuple[int, ...] = ()) -> MultivariateGMM:
    """BIC-best full-dimensional mixture (baseline use)."""
    X = np.asarray(X, dtype=float)
    w, means, covs, degenerate = _fit_mixture(X, config, (3, *key))
    return MultivariateGMM(weights=w, means=means, covariances=covs, degenerate=degenerate)


def estimate_mi(pair_model: BivariateGMM, M: int = 10**6, seed=0) -> float:
    """Monte-Carlo mutual information of a bivariate mixture.

    Draws M points from the joint, averages log f12/(f1*f2) with the marginals
    obtained exactly via marginalize(), and clamps the estimate at 0 from
    below (MI is nonnegative; the estimator is not).
    """
    if M < 10**4:
        raise ValueError(f"need at least 1e4 samples for a stable estimate, got {M}")
    rng = np.random.default_rng(seed)
    draws = pair_model.sample(M, rng)
    log_joint = pair_model.logpdf(draws)
    log_m0 = marginalize(pair_model, 0).logpdf(draws[:, 0])
    log_m1 = marginalize(pair_model, 1).logpdf(draws[:, 1])
    return max(float(np.mean(log_joint - log_m0 - log_m1)), 0.0)
