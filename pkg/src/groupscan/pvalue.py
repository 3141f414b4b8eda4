"""Mixture p-values under the null model.

An observation's extremeness is judged per mixture component (two-sided, in
units of that component's scale) and averaged under the posterior component
probabilities. Three flavors:

- singleton: sum_l resp_l(x) * 2*Phi(-|x - mu_l| / sigma_l)
- pair: sum_l resp_l(x) * P(|U| >= a_l, |V| >= b_l) with (a_l, b_l) the
  component-standardized deviations and the corner mass taken under the
  component's own correlation
- conditional: pair p-value divided by the singleton p-value of the
  conditioning coordinate, the latter computed on the exact marginal of the
  pair model

Every result is floored at P_MIN so log-domain scores stay finite; the
conditional ratio is additionally capped at 1 (separately fitted univariate
and bivariate models need not have consistent marginals).

Singletons run entirely in the log domain (log_ndtr), so a 30-sigma outlier
still gets a finite, correctly ordered log p-value down to the floor. Pair
corner masses come from the Genz algorithm in linear space (absolute error
well under 1e-10) and are floored afterwards.
"""

from __future__ import annotations

import numpy as np
from scipy.special import log_ndtr, logsumexp, ndtri_exp

from .bvn import bvn_upper, corner_probability
from .gmm import BivariateGMM, UnivariateGMM, marginalize

P_MIN = 1e-300
LOG_P_MIN = float(np.log(P_MIN))

_LOG_2 = float(np.log(2.0))


def log_singleton_pvalue(model: UnivariateGMM, x) -> np.ndarray:
    """Log singleton p-values for a vector of observations, clamped to
    [log P_MIN, 0]."""
    arr = np.atleast_1d(np.asarray(x, dtype=float))
    z = np.abs(arr[:, None] - model.means[None, :]) / np.sqrt(model.variances)[None, :]
    log_tail = _LOG_2 + log_ndtr(-z)
    log_resp = model.log_responsibilities(arr)
    logp = logsumexp(log_resp + log_tail, axis=1)
    return np.clip(logp, LOG_P_MIN, 0.0)


def singleton_pvalue(model: UnivariateGMM, x):
    """P(observation at least as extreme as x) under the univariate mixture."""
    p = np.exp(log_singleton_pvalue(model, x))
    if np.ndim(x) == 0:
        return float(p[0])
    return p


def pit_z(model: UnivariateGMM, x) -> np.ndarray:
    """Probability-integral-transform z-score under the plain mixture CDF.

    Exactly standard normal when the model matches the data. Evaluated from
    whichever of log CDF / log SF is smaller, so deep-tail observations keep
    full precision instead of saturating.
    """
    arr = np.atleast_1d(np.asarray(x, dtype=float))
    lc = model.log_cdf(arr)
    ls = model.log_sf(arr)
    return np.where(lc < ls, ndtri_exp(lc), -ndtri_exp(ls))


def log_singleton_tail(model: UnivariateGMM, x, side: int) -> np.ndarray:
    """One-sided singleton evidence: tail mass on the given side only.

    ``side=+1`` measures how far x sits above its posterior component,
    ``side=-1`` below. Posterior weighting matches the two-sided variant, so
    for a single-component null the result is exactly the survival function
    (or CDF) and is uniform under the null.
    """
    if side not in (1, -1):
        raise ValueError("side must be +1 or -1")
    arr = np.atleast_1d(np.asarray(x, dtype=float))
    z = (arr[:, None] - model.means[None, :]) / np.sqrt(model.variances)[None, :]
    log_tail = log_ndtr(-z) if side == 1 else log_ndtr(z)
    log_resp = model.log_responsibilities(arr)
    logp = logsumexp(log_resp + log_tail, axis=1)
    return np.clip(logp, LOG_P_MIN, 0.0)


def log_pair_tail(model: BivariateGMM, x, sides: tuple[int, int]) -> np.ndarray:
    """One-sided pair evidence: single-quadrant corner mass per component.

    ``sides`` picks the quadrant: (+1, +1) is the joint upper tail. Sign flips
    map every quadrant onto the upper-corner integral, negating the component
    correlation when exactly one coordinate flips.
    """
    if any(s not in (1, -1) for s in sides):
        raise ValueError("sides must be +1 or -1")
    X = np.asarray(x, dtype=float)
    if X.ndim == 1:
        X = X[None, :]
    resp = np.exp(model.log_responsibilities(X))
    sig = model.sigmas
    rho = model.correlations
    a = sides[0] * (X[:, 0, None] - model.means[None, :, 0]) / sig[None, :, 0]
    b = sides[1] * (X[:, 1, None] - model.means[None, :, 1]) / sig[None, :, 1]
    p = np.zeros(X.shape[0])
    for l in range(model.n_components):
        p += resp[:, l] * bvn_upper(a[:, l], b[:, l], sides[0] * sides[1] * rho[l])
    return np.log(np.clip(p, P_MIN, 1.0))


def log_pair_pvalue(model: BivariateGMM, x) -> np.ndarray:
    """Log pairwise p-values for a T x 2 matrix (or a single 2-vector),
    clamped to [log P_MIN, 0]."""
    X = np.asarray(x, dtype=float)
    if X.ndim == 1:
        X = X[None, :]
    resp = np.exp(model.log_responsibilities(X))
    sig = model.sigmas
    rho = model.correlations
    a = np.abs(X[:, 0, None] - model.means[None, :, 0]) / sig[None, :, 0]
    b = np.abs(X[:, 1, None] - model.means[None, :, 1]) / sig[None, :, 1]
    p = np.zeros(X.shape[0])
    for l in range(model.n_components):
        p += resp[:, l] * corner_probability(a[:, l], b[:, l], rho[l])
    return np.log(np.clip(p, P_MIN, 1.0))


def pair_pvalue(model: BivariateGMM, x):
    """P(joint observation at least as extreme as x) under the pair mixture,
    extremeness meaning both coordinates at least as far out (corner mass)."""
    X = np.asarray(x, dtype=float)
    p = np.exp(log_pair_pvalue(model, X))
    if X.ndim == 1:
        return float(p[0])
    return p


def log_conditional_pvalue(model: BivariateGMM, x, condition_slot: int) -> np.ndarray:
    """Log of pair p-value / singleton p-value of the conditioning coordinate,
    clamped to [log P_MIN, 0]."""
    if condition_slot not in (0, 1):
        raise ValueError("condition_slot must be 0 or 1")
    X = np.asarray(x, dtype=float)
    if X.ndim == 1:
        X = X[None, :]
    log_pair = log_pair_pvalue(model, X)
    cond_model = marginalize(model, keep=condition_slot)
    log_cond = log_singleton_pvalue(cond_model, X[:, condition_slot])
    return np.clip(log_pair - log_cond, LOG_P_MIN, 0.0)


def conditional_pvalue(model: BivariateGMM, x, condition_slot: int):
    """P(other coordinate this extreme | conditioning coordinate this extreme)."""
    X = np.asarray(x, dtype=float)
    p = np.exp(log_conditional_pvalue(model, X, condition_slot))
    if X.ndim == 1:
        return float(p[0])
    return p
