"""Graph-recovery metrics and the prior/data neighbourhood-consistency check."""
from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Optional

import numpy as np
from scipy.stats import rankdata

from .datagen import GroundTruth, TimeSeriesData, mask_diagonal
from .errors import DimensionError, NeighborhoodTooSmallError, UndefinedMetricError
from .prior import PriorMatrix, sign_agreement


@dataclass
class ScoredGraph:
    scores: np.ndarray
    truth: np.ndarray

    def __post_init__(self):
        self.scores = mask_diagonal(np.asarray(self.scores, dtype=float))
        self.truth = mask_diagonal(np.asarray(self.truth)).astype(int)
        if self.scores.shape != self.truth.shape:
            raise DimensionError("scores and truth differ in shape")
        if not np.all(np.isfinite(self.scores)):
            raise ValueError("scores must be finite")

    def flat(self):
        off = ~np.eye(self.scores.shape[0], dtype=bool)
        return self.scores[off], self.truth[off]


@dataclass
class MetricsReport:
    auroc: float
    best_f1: float
    best_f1_threshold: float
    shd: int
    tau_mean: float
    prior_agreement: float

    def to_dict(self) -> dict:
        return asdict(self)


def combined_magnitude(weights: np.ndarray) -> np.ndarray:
    """Largest absolute coefficient across lags, diagonal zeroed."""
    W = np.asarray(weights, dtype=float)
    if W.ndim == 2:
        W = W[None]
    return mask_diagonal(np.abs(W).max(axis=0))


def combine_scores(result, truth: GroundTruth) -> ScoredGraph:
    """Score each ordered pair by its largest raw (pre-threshold) weight."""
    raw = getattr(result, "weights_raw", result)
    return ScoredGraph(combined_magnitude(raw), truth.combined)


def _check_labels(labels: np.ndarray):
    n_pos = int(labels.sum())
    if n_pos == 0 or n_pos == labels.size:
        raise UndefinedMetricError("need at least one positive and one negative entry")
    return n_pos, labels.size - n_pos


def auroc(scored: ScoredGraph) -> float:
    """Mann-Whitney AUROC with ties counted one half."""
    s, y = scored.flat()
    n_pos, n_neg = _check_labels(y)
    ranks = rankdata(s)
    u = ranks[y == 1].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def best_f1(scored: ScoredGraph):
    """Best F1 over thresholds ``s >= thr`` for every distinct score and
    ``+inf``; ties resolve to the smallest threshold."""
    s, y = scored.flat()
    n_pos, _ = _check_labels(y)
    thresholds = np.append(np.unique(s), np.inf)
    best, best_thr = -1.0, np.inf
    for thr in thresholds:
        pred = s >= thr
        tp = int(np.sum(pred & (y == 1)))
        fp = int(np.sum(pred & (y == 0)))
        fn = n_pos - tp
        f1 = 2 * tp / (2 * tp + fp + fn)
        if f1 > best:
            best, best_thr = f1, float(thr)
    return float(best), best_thr


def shd(predicted: np.ndarray, truth: np.ndarray) -> int:
    """Off-diagonal entrywise disagreements; a reversed edge counts twice."""
    a = mask_diagonal(np.asarray(predicted) != 0)
    b = mask_diagonal(np.asarray(truth) != 0)
    if a.shape != b.shape:
        raise DimensionError("graphs differ in shape")
    return int(np.sum(a != b))


def neighborhood_index(d: int):
    """For each ordered off-diagonal pair, the flat indices of its row and
    column neighbours (self and diagonal excluded), shape ``(d(d-1), 2(d-2))``.
    """
    pairs = [(i, j) for i in range(d) for j in range(d) if i != j]
    idx = []
    for i, j in pairs:
        col = [k * d + j for k in range(d) if k not in (i, j)]
        row = [i * d + l for l in range(d) if l not in (i, j)]
        idx.append(col + row)
    return pairs, np.asarray(idx)


def _rowwise_pearson(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    a = a - a.mean(axis=1, keepdims=True)
    b = b - b.mean(axis=1, keepdims=True)
    num = (a * b).sum(axis=1)
    den = np.sqrt((a * a).sum(axis=1) * (b * b).sum(axis=1))
    out = np.zeros(len(a))
    ok = den > 1e-12 * np.maximum(1.0, np.abs(num))
    out[ok] = num[ok] / den[ok]
    return out


def rho_cons_diagnostic(prior: PriorMatrix, data: TimeSeriesData) -> float:
    """Median over edges of the neighbourhood Pearson correlation between the
    prior and the absolute sample covariance."""
    X = data.observations
    d = X.shape[1]
    if d < 4:
        raise NeighborhoodTooSmallError("consistency diagnostic needs d >= 4")
    if prior.d != d:
        raise DimensionError(f"prior has d={prior.d}, data has d={d}")
    cov = np.abs(np.cov(X, rowvar=False))
    _, idx = neighborhood_index(d)
    corr = _rowwise_pearson(prior.values.ravel()[idx], cov.ravel()[idx])
    return float(np.median(corr))


def evaluate(result, truth: GroundTruth, prior: Optional[PriorMatrix] = None) -> MetricsReport:
    scored = combine_scores(result, truth)
    f1, thr = best_f1(scored)
    predicted = combined_magnitude(result.weights) > 0
    return MetricsReport(
        auroc=auroc(scored),
        best_f1=f1,
        best_f1_threshold=thr,
        shd=shd(predicted, truth.combined),
        tau_mean=result.tau_mean,
        prior_agreement=float("nan") if prior is None else sign_agreement(prior, truth),
    )
