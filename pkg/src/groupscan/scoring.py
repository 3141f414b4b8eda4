"""Cluster candidate scoring: multiple-testing-corrected joint significance.

The score of a candidate (sample subset of size T_c, feature subset of size
N_c) is, in natural-log domain,

    ln C(D, N_c) + ln C(T_u, T_c) + sum_i ln p_i

with the combination counts as the Bonferroni correction for the number of
same-shape hypotheses, and p_i the per-sample joint p-values. Lower is more
significant. No raw probability products are ever formed; log-binomials come
from the log-gamma function.

For a fixed feature subset the best sample subset of each size T_c consists
of the T_c smallest p-values, so a scan over prefixes of the ascending sort
finds the global optimum over all sample subsets. The scan covers every
prefix rather than stopping at the first score increase: same O(T) cost,
and immune to floating-point non-unimodality.
"""

from __future__ import annotations

import numpy as np
from scipy.special import gammaln


def log_binomial(n, k):
    """ln C(n, k), elementwise."""
    n = np.asarray(n, dtype=float)
    k = np.asarray(k, dtype=float)
    if np.any(k < 0) or np.any(k > n):
        raise ValueError("binomial coefficient needs 0 <= k <= n")
    out = gammaln(n + 1.0) - gammaln(k + 1.0) - gammaln(n - k + 1.0)
    if out.ndim == 0:
        return float(out)
    return out


def log_score(D: int, N_c: int, T_u: int, T_c: int, log_pvalues) -> float:
    """Log-domain candidate score; raises on domain violations."""
    if not 1 <= N_c <= D:
        raise ValueError(f"feature subset size {N_c} out of range for D={D}")
    if not 0 <= T_c <= T_u:
        raise ValueError(f"sample subset size {T_c} out of range for T_u={T_u}")
    lp = np.asarray(log_pvalues, dtype=float)
    if lp.shape != (T_c,):
        raise ValueError(f"expected {T_c} log p-values, got shape {lp.shape}")
    if lp.size and np.max(lp) > 0.0:
        raise ValueError("log p-values must be <= 0")
    return float(log_binomial(D, N_c) + log_binomial(T_u, T_c) + lp.sum())


def optimal_prefix_from_log(log_pvalues, D: int, N_c: int, T_u: int,
                            min_size: int = 1) -> tuple[np.ndarray, float]:
    """Core selector on log p-values: sort ascending (stable, so p-value ties
    and floor-clamped values resolve by original index), scan all prefix sizes
    >= min_size, return (selected indices in ascending-p order, best score).
    Ties between prefix sizes go to the smaller prefix."""
    lp = np.asarray(log_pvalues, dtype=float)
    if lp.ndim != 1 or lp.size == 0:
        raise ValueError("need at least one sample p-value")
    T = lp.size
    if T > T_u:
        raise ValueError(f"{T} p-values but T_u={T_u}")
    if not 1 <= min_size <= T:
        raise ValueError(f"min_size {min_size} out of range")
    order = np.argsort(lp, kind="stable")
    cum = np.cumsum(lp[order])
    sizes = np.arange(min_size, T + 1)
    scores = (log_binomial(D, N_c)
              + log_binomial(float(T_u), sizes.astype(float))
              + cum[sizes - 1])
    best = int(np.argmin(scores))  # first occurrence = smallest prefix
    t_best = int(sizes[best])
    return order[:t_best], float(scores[best])


def optimal_sample_subset(joint_pvalues, D: int, N_c: int, T_u: int,
                          min_size: int = 1) -> tuple[np.ndarray, float]:
    """Globally optimal sample subset for a fixed feature subset.

    joint_pvalues are linear-domain per-sample probabilities (already floored
    upstream). Returns (indices into the input, ascending p-value order) and
    the winning log score.
    """
    p = np.asarray(joint_pvalues, dtype=float)
    if np.any(p <= 0.0) or np.any(p > 1.0):
        raise ValueError("joint p-values must lie in (0, 1]")
    return optimal_prefix_from_log(np.log(p), D, N_c, T_u, min_size=min_size)
