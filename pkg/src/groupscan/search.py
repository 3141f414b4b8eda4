"""Beam search over feature subsets and sequential extraction of clusters.

One extraction round evaluates candidate (feature subset, direction pattern)
pairs order by order: all signed singletons first, then each subsequent order
formed by adding one absent signed feature to each of the top beam_width
candidates of the previous order. Every candidate gets a per-sample evidence
stream (the tree-factorized one-sided joint log p-value), made comparable
across orders by a product-of-uniforms calibration, and is ranked by a scan
statistic that measures how overloaded the small end of its stream is
relative to a uniform null. The round's winner over all orders surrenders a
sample prefix chosen by a multiplicity-corrected inclusion boundary, those
samples leave the batch, and extraction repeats until the batch runs out of
room (or an optional cluster cap / score threshold intervenes).

Three design points carry the statistical weight:

- Direction patterns. A genuine group deviates coherently (its members sit on
  the same side of the null on the shared features), so candidates carry an
  explicit side per feature and evidence is the matching one-sided tail mass.
  Sidedness halves an aligned group's p-values without touching the null's
  uniformity, and encodes group coherence that two-sided evidence discards.
- Calibration. Under an independent null the tree-factorized joint log p of
  an order-N subset is a sum of N iid uniform logs, so its upper-tail
  survival under a Gamma(N, 1) law is again uniform. Mapping every stream
  through that survival function makes streams of different orders directly
  comparable and stops deep subsets from looking significant by mere factor
  count.
- Scan selection vs boundary membership. The winning candidate is chosen by
  collective evidence (a binomial tail over the candidate's smallest order
  statistics), which is robust to a lucky extreme singleton; cluster
  membership is then the small prefix whose members each survive an ordered
  multiplicity boundary, which keeps the reported cluster pure rather than
  merely detectable.

Evidence rows depend only on the trained null model and the sample, so they
are computed once for the full batch and sliced per round; joint vectors are
reassembled each round, accumulating terms in sorted-key order exactly like
the direct evaluation path, so the cached and uncached routes are bitwise
identical. Before any evidence is computed the batch can be recalibrated
against the model: per feature, the model-PIT z-scores of the test bulk
(pooled with stored training PIT mass) are robustly re-standardized, which
absorbs the train-sample estimation noise that otherwise distorts deep-tail
p-values.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy.special import betainc, log_ndtr
from scipy.stats import chi2
from scipy.stats import gamma as _gamma

from .data import DataBatch
from .deptree import Coefficients, build_tree, tree_coefficients
from .errors import BatchExhausted
from .gmm import UnivariateGMM
from .nullmodel import NullModel
from .pvalue import (
    LOG_P_MIN,
    P_MIN,
    log_pair_pvalue,
    log_pair_tail,
    log_singleton_pvalue,
    log_singleton_tail,
    pit_z,
)
from .scoring import log_binomial, log_score

CoefficientProvider = Callable[[tuple[int, ...]], Coefficients]

TWO_SIDED = 0


@dataclass(frozen=True)
class SearchConfig:
    k_max: int = 6
    beam_width: int = 500
    max_clusters: Optional[int] = None
    min_cluster_size: int = 2
    score_threshold: Optional[float] = None  # stop when best score exceeds this
    alpha: float = 0.05       # familywise inclusion level of the membership boundary
    scan_depth: int = 8       # order statistics inspected by the selection scan
    recalibrate: bool = True  # robust per-feature re-standardization of the batch

    def __post_init__(self):
        if self.k_max < 1:
            raise ValueError("k_max must be >= 1")
        if self.beam_width < 1:
            raise ValueError("beam_width must be >= 1")
        if self.min_cluster_size < 1:
            raise ValueError("min_cluster_size must be >= 1")
        if self.max_clusters is not None and self.max_clusters < 1:
            raise ValueError("max_clusters must be >= 1 when set")
        if not 0.0 < self.alpha <= 1.0:
            raise ValueError("alpha must lie in (0, 1]")
        if self.scan_depth < 1:
            raise ValueError("scan_depth must be >= 1")


@dataclass(frozen=True)
class ClusterCandidate:
    """A detected cluster: feature subset, sample subset (original batch
    indices, ascending evidence), winning log score, the per-sample evidence
    aligned with the samples, and the direction pattern the evidence was
    evaluated under (None for two-sided evidence)."""
    features: tuple[int, ...]
    samples: tuple[int, ...]
    log_score: float
    log_pvalues: tuple[float, ...]
    directions: Optional[tuple[int, ...]] = None

    def __post_init__(self):
        if not self.features:
            raise ValueError("cluster has no features")
        if not self.samples:
            raise ValueError("cluster has no samples")
        if len(self.samples) != len(self.log_pvalues):
            raise ValueError("one log p-value per sample required")
        if not np.isfinite(self.log_score):
            raise ValueError("log score must be finite")
        if self.directions is not None and len(self.directions) != len(self.features):
            raise ValueError("one direction per feature required")

    def to_dict(self) -> dict:
        return {
            "features": [int(j) for j in self.features],
            "samples": [int(i) for i in self.samples],
            "log_score": float(self.log_score),
            "per_sample_log_p": [float(v) for v in self.log_pvalues],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ClusterCandidate":
        return cls(
            features=tuple(int(j) for j in d["features"]),
            samples=tuple(int(i) for i in d["samples"]),
            log_score=float(d["log_score"]),
            log_pvalues=tuple(float(v) for v in d["per_sample_log_p"]),
        )


@dataclass(frozen=True)
class DetectionReport:
    """Ordered detections plus a complete sample ranking: cluster samples in
    extraction order (ascending evidence within each cluster), then every
    remaining sample ordered by the best evidence observed for it during the
    search. per_order_best records, per extraction round, the best selection
    score seen at each subset order."""
    clusters: tuple[ClusterCandidate, ...]
    ranked_samples: tuple[int, ...]
    per_order_best: tuple[tuple[tuple[int, float], ...], ...] = field(default=())

    def __post_init__(self):
        seen: set[int] = set()
        for c in self.clusters:
            if seen.intersection(c.samples):
                raise ValueError("clusters share samples")
            seen.update(c.samples)
        if len(set(self.ranked_samples)) != len(self.ranked_samples):
            raise ValueError("ranked sample list has duplicates")

    def to_dict(self) -> dict:
        return {
            "clusters": [c.to_dict() for c in self.clusters],
            "ranked_samples": [int(i) for i in self.ranked_samples],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1) + "\n"

    @classmethod
    def from_dict(cls, d: dict) -> "DetectionReport":
        return cls(
            clusters=tuple(ClusterCandidate.from_dict(c) for c in d["clusters"]),
            ranked_samples=tuple(int(i) for i in d["ranked_samples"]),
        )


def spurious_mi_floor(n_train: int) -> float:
    """MI below this is indistinguishable from estimation noise: for an
    independent Gaussian pair fitted on n samples, 2n * MI-hat is chi-square
    with one degree of freedom, so this is its 95th percentile."""
    return float(chi2.ppf(0.95, df=1) / (2.0 * max(n_train, 2)))


def tree_coefficient_provider(model: NullModel,
                              mi_floor: Optional[float] = None) -> CoefficientProvider:
    """The default joint-p factorization: a fresh maximum-MI spanning tree per
    feature subset, with sub-noise edges pruned back to independent factors.

    A spanning tree must spend an edge on every node even when features are
    independent, and a pair factor built from a noise-level correlation
    estimate systematically distorts deep-tail evidence. Every edge whose MI
    falls below the floor (default: the spurious-MI quantile for the model's
    training size) is therefore replaced by its endpoints' singleton factors,
    which is exactly the independent-pair identity.
    """
    floor = spurious_mi_floor(model.n_train) if mi_floor is None else mi_floor

    def provider(features: tuple[int, ...]) -> Coefficients:
        tree = build_tree(model, features)
        coeffs = dict(tree_coefficients(tree))
        for key in list(coeffs):
            if len(key) == 2 and coeffs[key] != 0.0 and model.mi[key[0], key[1]] < floor:
                j, k = key
                coeffs[key] -= 1.0
                coeffs[(j,)] = coeffs.get((j,), 0.0) + 1.0
                coeffs[(k,)] = coeffs.get((k,), 0.0) + 1.0
        return {key: c for key, c in coeffs.items() if c != 0.0}

    return provider


# ---------------------------------------------------------------------------
# batch recalibration


_TRIM = 0.05
_SCALE_GUARD = (0.25, 4.0)


def _trimmed_normal_moments(z: np.ndarray, trim: float = _TRIM) -> tuple[float, float]:
    """Location/scale of z from its central (1 - 2*trim) mass, unbiased for a
    normal sample (the truncated-variance shrinkage is divided back out)."""
    lo, hi = np.quantile(z, [trim, 1.0 - trim])
    core = z[(z >= lo) & (z <= hi)]
    if core.size < 8:
        return 0.0, 1.0
    a = float(-abs(_ndtri(trim)))
    frac = 1.0 - 2.0 * trim
    shrink = 1.0 + 2.0 * a * math.exp(-0.5 * a * a) / math.sqrt(2.0 * math.pi) / frac
    return float(core.mean()), float(core.std() / math.sqrt(shrink))


def _ndtri(u: float) -> float:
    from scipy.special import ndtri
    return float(ndtri(u))


def _invert_pit(marginal: UnivariateGMM, z: np.ndarray) -> np.ndarray:
    """Map corrected PIT z-scores back to observation units: the x whose
    model tail mass equals the normal tail mass of z, solved on whichever
    tail keeps precision. Closed form for single-component marginals."""
    if marginal.n_components == 1:
        return marginal.means[0] + math.sqrt(marginal.variances[0]) * z
    sig = np.sqrt(marginal.variances)
    span = float(np.abs(z).max()) + 10.0
    lo = np.full(z.shape, float((marginal.means - span * sig).min()))
    hi = np.full(z.shape, float((marginal.means + span * sig).max()))
    upper = z >= 0
    target = log_ndtr(-np.abs(z))
    for _ in range(100):
        mid = 0.5 * (lo + hi)
        # log_sf decreasing / log_cdf increasing: pick the comparison per side
        t_up = marginal.log_sf(mid) > target
        t_dn = marginal.log_cdf(mid) < target
        below = np.where(upper, t_up, t_dn)
        lo = np.where(below, mid, lo)
        hi = np.where(below, hi, mid)
    return 0.5 * (lo + hi)


def recalibrate_batch(model: NullModel, X: np.ndarray) -> np.ndarray:
    """Robustly re-standardize each feature against the model's own PIT.

    Per feature, the model-PIT z-scores of the batch (pooled with the stored
    training PIT mass, when present) should be standard normal; trimmed
    moments estimate the drift the finite training sample left behind, and
    the inverse correction is applied in observation units. Guards keep the
    correction inert for degenerate marginals or wild scale estimates.
    """
    X = np.asarray(X, dtype=float)
    out = X.copy()
    for j, marginal in enumerate(model.univariate):
        if marginal.degenerate:
            continue
        z = pit_z(marginal, X[:, j])
        pool = z
        if model.calibration_z is not None:
            pool = np.concatenate([model.calibration_z[:, j], z])
        a, b = _trimmed_normal_moments(pool)
        if not np.isfinite(a) or not np.isfinite(b):
            continue
        b = min(max(b, _SCALE_GUARD[0]), _SCALE_GUARD[1])
        out[:, j] = _invert_pit(marginal, (z - a) / b)
    return out


# ---------------------------------------------------------------------------
# evidence


class PValueBasis:
    """Cached per-feature and per-pair evidence rows for one test batch.

    Rows are keyed by feature (and direction: +1 upper tail, -1 lower tail,
    0 two-sided). Joint vectors for a feature subset are linear combinations
    of these rows with the factorization's coefficients, accumulated in
    sorted-key order to stay bitwise equal to evaluating the factorization
    from scratch.
    """

    def __init__(self, model: NullModel, X, provider: Optional[CoefficientProvider] = None):
        X = np.asarray(X, dtype=float)
        if X.ndim != 2 or X.shape[1] != model.dimension:
            raise ValueError(
                f"batch width {X.shape} does not match model dimension {model.dimension}")
        self.model = model
        self.X = X
        self.n_samples = X.shape[0]
        self._provider = provider or tree_coefficient_provider(model)
        self._singleton: dict[tuple[int, int], np.ndarray] = {}
        self._pair: dict[tuple[int, int, int, int], np.ndarray] = {}
        self._coeffs: dict[tuple[int, ...], Coefficients] = {}

    def log_singleton(self, j: int, side: int = TWO_SIDED) -> np.ndarray:
        row = self._singleton.get((j, side))
        if row is None:
            marginal = self.model.univariate[j]
            if side == TWO_SIDED:
                row = log_singleton_pvalue(marginal, self.X[:, j])
            else:
                row = log_singleton_tail(marginal, self.X[:, j], side)
            self._singleton[(j, side)] = row
        return row

    def log_pair(self, j: int, k: int, side_j: int = TWO_SIDED,
                 side_k: int = TWO_SIDED) -> np.ndarray:
        if j > k:
            j, k, side_j, side_k = k, j, side_k, side_j
        row = self._pair.get((j, k, side_j, side_k))
        if row is None:
            pair_model = self.model.pair(j, k)
            cols = self.X[:, [j, k]]
            if side_j == TWO_SIDED and side_k == TWO_SIDED:
                row = log_pair_pvalue(pair_model, cols)
            else:
                row = log_pair_tail(pair_model, cols, (side_j, side_k))
            self._pair[(j, k, side_j, side_k)] = row
        return row

    def coefficients(self, features: tuple[int, ...]) -> Coefficients:
        coeffs = self._coeffs.get(features)
        if coeffs is None:
            coeffs = self._provider(features)
            self._coeffs[features] = coeffs
        return coeffs

    def log_joint(self, features: tuple[int, ...],
                  sides: Optional[tuple[int, ...]] = None, rows=None) -> np.ndarray:
        """Tree-factorized joint evidence; two-sided when sides is None."""
        if sides is None:
            sides = (TWO_SIDED,) * len(features)
        side_of = dict(zip(features, sides))
        coeffs = self.coefficients(features)
        total = np.zeros(self.n_samples)
        for key in sorted(coeffs):
            coef = coeffs[key]
            if coef == 0.0:
                continue
            if len(key) == 1:
                term = self.log_singleton(key[0], side_of[key[0]])
            else:
                term = self.log_pair(key[0], key[1], side_of[key[0]], side_of[key[1]])
            total += coef * term
        out = np.clip(total, LOG_P_MIN, 0.0)
        return out if rows is None else out[rows]


class TreeEvidence:
    """Per-candidate evidence of the proposed method: direction-matched
    one-sided tails factorized along the candidate's own max-MI tree, with
    an order-N product-of-uniforms null for calibration."""

    def __init__(self, basis: PValueBasis):
        self.basis = basis

    @property
    def direction_alphabet(self) -> tuple[int, ...]:
        return (1, -1)

    def n_factors(self, order: int) -> int:
        return order

    def stream(self, features: tuple[int, ...], sides: tuple[int, ...],
               rows=None) -> np.ndarray:
        return self.basis.log_joint(features, sides, rows)


EvidenceFactory = Callable[[PValueBasis], TreeEvidence]


def _calibrate(raw: np.ndarray, n_factors: int) -> np.ndarray:
    """Survival of -log p under Gamma(n, 1): uniform when the raw stream is a
    product of n independent uniforms, identity for n <= 1."""
    if n_factors <= 1:
        return raw
    cal = _gamma.logsf(-raw, a=float(n_factors))
    return np.clip(cal, LOG_P_MIN, 0.0)


def _scan_scores(cal: np.ndarray, T_u: int, depth: int) -> np.ndarray:
    """Per-candidate selection score: the sharpest binomial tail over the
    stream's smallest `depth` order statistics (log scale, smaller wins)."""
    depth = min(depth, T_u)
    if depth < T_u:
        head = np.partition(cal, depth - 1, axis=1)[:, :depth]
        head.sort(axis=1)
    else:
        head = np.sort(cal, axis=1)
    q = np.exp(head)
    ts = np.arange(1.0, depth + 1.0)
    tails = betainc(ts[None, :], T_u - ts[None, :] + 1.0, q)
    return np.log(np.clip(tails, P_MIN, 1.0)).min(axis=1)


def _membership(cal_row: np.ndarray, config: SearchConfig) -> np.ndarray:
    """Sample prefix of the winning candidate: sort the calibrated evidence
    and keep the prefix minimizing the ordered multiplicity-corrected sum

        sum_{i<=t} [ log p_(i) + log(T_u - i + 1) - log alpha ],

    i.e. every sample whose evidence beats its remaining-multiplicity
    boundary joins, up to the point where further samples cost more than
    they contribute. The minimum cluster size is enforced afterwards."""
    T_u = cal_row.size
    order = np.argsort(cal_row, kind="stable")
    inc = cal_row[order] + np.log(T_u - np.arange(T_u)) - math.log(config.alpha)
    t = int(np.argmin(np.cumsum(inc))) + 1
    t = min(max(t, config.min_cluster_size), T_u)
    return order[:t]


def _expand(parents: list[tuple[tuple[int, ...], tuple[int, ...]]],
            D: int, alphabet: tuple[int, ...]):
    """All distinct one-signed-feature extensions of the parent candidates,
    in first-seen order (parents are already beam-ranked)."""
    seen: set[tuple] = set()
    out: list[tuple[tuple[int, ...], tuple[int, ...]]] = []
    for feats, sides in parents:
        for f in range(D):
            if f in feats:
                continue
            for s in alphabet:
                merged = sorted(zip(feats + (f,), sides + (s,)))
                key = tuple(merged)
                if key in seen:
                    continue
                seen.add(key)
                out.append((tuple(j for j, _ in merged), tuple(s for _, s in merged)))
    return out


def _search_round(basis: PValueBasis, evidence, remaining: np.ndarray,
                  config: SearchConfig):
    """One extraction round over the remaining samples. Returns the winning
    candidate (sample indices local to `remaining`), its report score, the
    per-order best selection scores, and the winner's calibrated per-sample
    evidence over all remaining samples."""
    T_u = int(remaining.size)
    D = basis.model.dimension
    if config.k_max > D:
        raise ValueError(f"k_max={config.k_max} exceeds feature count D={D}")
    alphabet = evidence.direction_alphabet
    n_dirs = len(alphabet)

    best_score = np.inf
    best_cand: Optional[tuple[tuple[int, ...], tuple[int, ...]]] = None
    best_row: Optional[np.ndarray] = None
    per_order: list[tuple[int, float]] = []

    cands: list[tuple[tuple[int, ...], tuple[int, ...]]] = []
    prev_scores: Optional[np.ndarray] = None
    for order in range(1, config.k_max + 1):
        if order == 1:
            cands = [((j,), (s,)) for j in range(D) for s in alphabet]
        else:
            keep = np.argsort(prev_scores, kind="stable")[:config.beam_width]
            cands = _expand([cands[i] for i in keep], D, alphabet)
        if not cands:
            break

        cal = np.empty((len(cands), T_u))
        n_fac = evidence.n_factors(order)
        for i, (feats, sides) in enumerate(cands):
            cal[i] = _calibrate(evidence.stream(feats, sides, rows=remaining), n_fac)

        # candidate multiplicity: feature subsets times direction patterns
        mult = log_binomial(D, order) + order * math.log(n_dirs)
        scores = _scan_scores(cal, T_u, config.scan_depth) + mult
        order_winner = int(np.argmin(scores))
        per_order.append((order, float(scores[order_winner])))
        if scores[order_winner] < best_score:
            best_score = float(scores[order_winner])
            best_cand = cands[order_winner]
            best_row = cal[order_winner].copy()
        prev_scores = scores

    assert best_cand is not None and best_row is not None
    features, sides = best_cand
    local_idx = _membership(best_row, config)
    report_score = log_score(D, len(features), T_u, local_idx.size,
                             best_row[local_idx])
    return (features, sides, local_idx, report_score, per_order, best_row)


def _prepare(model: NullModel, batch: DataBatch, config: SearchConfig,
             provider: Optional[CoefficientProvider],
             evidence_factory: Optional[EvidenceFactory]):
    if batch.n_features != model.dimension:
        raise ValueError(
            f"batch has {batch.n_features} features, model expects {model.dimension}")
    X = batch.X
    if config.recalibrate:
        X = recalibrate_batch(model, X)
    basis = PValueBasis(model, X, provider)
    evidence = (evidence_factory or TreeEvidence)(basis)
    return basis, evidence


def detect_one_cluster(model: NullModel, batch: DataBatch, config: SearchConfig,
                       provider: Optional[CoefficientProvider] = None,
                       evidence_factory: Optional[EvidenceFactory] = None
                       ) -> ClusterCandidate:
    """Single best cluster over the whole batch; raises BatchExhausted when
    the batch is smaller than the minimum cluster size."""
    if batch.n_samples < config.min_cluster_size:
        raise BatchExhausted(
            f"batch has {batch.n_samples} samples, need {config.min_cluster_size}")
    basis, evidence = _prepare(model, batch, config, provider, evidence_factory)
    remaining = np.arange(batch.n_samples)
    features, sides, local_idx, score, _, winner_row = _search_round(
        basis, evidence, remaining, config)
    return ClusterCandidate(
        features=features,
        samples=tuple(int(i) for i in remaining[local_idx]),
        log_score=score,
        log_pvalues=tuple(float(v) for v in winner_row[local_idx]),
        directions=sides,
    )


def detect_all(model: NullModel, batch: DataBatch, config: SearchConfig,
               provider: Optional[CoefficientProvider] = None,
               evidence_factory: Optional[EvidenceFactory] = None
               ) -> DetectionReport:
    """Sequential rank-prioritized extraction until the batch is depleted.

    Samples never claimed by a cluster are appended to the ranking ordered by
    the smallest calibrated evidence any round's winning candidate assigned
    them (they are ranked as if next in line for the clusters that were
    found), so the ranking always covers the full batch.
    """
    T = batch.n_samples
    basis, evidence = _prepare(model, batch, config, provider, evidence_factory)
    remaining = np.arange(T)
    clusters: list[ClusterCandidate] = []
    rounds: list[tuple[tuple[int, float], ...]] = []
    overall_logp = np.full(T, np.inf)

    while remaining.size >= config.min_cluster_size:
        if config.max_clusters is not None and len(clusters) >= config.max_clusters:
            break
        features, sides, local_idx, score, per_order, winner_row = _search_round(
            basis, evidence, remaining, config)
        overall_logp[remaining] = np.minimum(overall_logp[remaining], winner_row)
        if config.score_threshold is not None and score > config.score_threshold:
            break
        clusters.append(ClusterCandidate(
            features=features,
            samples=tuple(int(i) for i in remaining[local_idx]),
            log_score=score,
            log_pvalues=tuple(float(v) for v in winner_row[local_idx]),
            directions=sides,
        ))
        rounds.append(tuple(per_order))
        drop = np.zeros(remaining.size, dtype=bool)
        drop[local_idx] = True
        remaining = remaining[~drop]

    # stable sort: unseen samples (inf) keep original order, ties by index
    tail = remaining[np.argsort(overall_logp[remaining], kind="stable")]
    ranked: list[int] = []
    for c in clusters:
        ranked.extend(c.samples)
    ranked.extend(int(i) for i in tail)
    return DetectionReport(
        clusters=tuple(clusters),
        ranked_samples=tuple(ranked),
        per_order_best=tuple(rounds),
    )


def save_report(report: DetectionReport, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(report.to_json())


def load_report(path) -> DetectionReport:
    with open(path, "r", encoding="utf-8") as fh:
        return DetectionReport.from_dict(json.load(fh))
