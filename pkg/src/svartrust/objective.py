"""MAP objective, log-det acyclicity penalty, augmented Lagrangian and the
empirical-Bayes trust objective, each with an analytic gradient.

Weights are stored as an array ``W`` of shape ``(K+1, d, d)``; ``W[k, i, j]``
is the effect of variable ``i`` at lag ``k`` on variable ``j``. The diagonal of
``W[0]`` is always masked.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .calibration import (
    CalibratedPrior,
    TrustParams,
    l1_weights,
    normalized_strength,
    precision_mask,
    prior_logits,
    realized_tau,
    trust_features,
    trust_mlp_backward,
    trust_mlp_forward,
)
from .datagen import TimeSeriesData, mask_diagonal
from .errors import ConstraintDomainError, DimensionError, SplitError
from .prior import PriorMatrix

SIGMA_TAU = 2.0


@dataclass
class ObjectiveConfig:
    lambda1: float = 0.002
    lambda2: float = 0.01
    huber_delta: float = 1.35
    dag_s: float = 1.0

    def __post_init__(self):
        if self.lambda1 < 0 or self.lambda2 < 0:
            raise ValueError("regularization strengths must be non-negative")
        if self.huber_delta <= 0 or self.dag_s <= 0:
            raise ValueError("huber_delta and dag_s must be positive")


@dataclass
class AlmState:
    alpha: float = 0.0
    rho: float = 1.0
    outer_iter: int = 0

    def update(self, h: float, gamma: float = 3.0, rho_max: float = 1e8) -> None:
        self.alpha += self.rho * h
        self.rho = min(gamma * self.rho, rho_max)
        self.outer_iter += 1


class Design:
    """Target block and stacked regressors over the effective sample
    ``t = K, ..., T-1``."""

    def __init__(self, data: TimeSeriesData):
        X = np.asarray(data.observations, dtype=float)
        K = data.lag_order
        T, d = X.shape
        if T <= K:
            raise DimensionError(f"need T > K, got T={T}, K={K}")
        self.K, self.d = K, d
        self.Y = X[K:]
        blocks = [X[K - k:T - k] for k in range(K + 1)]
        self.Z = np.hstack(blocks)
        self.n = self.Y.size

    @property
    def T_eff(self) -> int:
        return self.Y.shape[0]

    def regressor_norms(self) -> np.ndarray:
        """``||x^(k)_i||^2 / (T_eff d)`` as a ``(K+1, d)`` array."""
        sq = (self.Z**2).sum(axis=0).reshape(self.K + 1, self.d)
        return sq / self.n


def _as_design(data) -> Design:
    return data if isinstance(data, Design) else Design(data)


def masked(W: np.ndarray) -> np.ndarray:
    W = np.array(W, dtype=float, copy=True)
    np.fill_diagonal(W[0], 0.0)
    return W


def huber_elementwise(r: np.ndarray, delta: float) -> np.ndarray:
    a = np.abs(r)
    return np.where(a <= delta, 0.5 * r**2, delta * (a - 0.5 * delta))


def huber_loss(residuals: np.ndarray, delta: float = 1.35) -> float:
    if delta <= 0:
        raise ValueError("delta must be positive")
    return float(np.mean(huber_elementwise(residuals, delta)))


def huber_grad(r: np.ndarray, delta: float) -> np.ndarray:
    return np.clip(r, -delta, delta)


def predict(W: np.ndarray, data):
    """Fitted values and residuals on the effective sample."""
    des = _as_design(data)
    W = masked(W)
    if W.shape != (des.K + 1, des.d, des.d):
        raise DimensionError(f"weights shape {W.shape} does not match data")
    pred = des.Z @ W.reshape(-1, des.d)
    return pred, des.Y - pred


def dag_penalty(w0: np.ndarray, s: float = 1.0):
    """``h = -log det(sI - W o W) + d log s`` and its gradient.

    Raises ``ConstraintDomainError`` when ``sI - W o W`` is not a
    nonsingular M-matrix (spectral radius of ``W o W`` at least ``s``).
    """
    w0 = mask_diagonal(np.asarray(w0, dtype=float))
    d = w0.shape[0]
    M = s * np.eye(d) - w0 * w0
    sign, logdet = np.linalg.slogdet(M)
    if sign <= 0:
        raise ConstraintDomainError("log-det argument is not positive definite")
    try:
        Minv = np.linalg.inv(M)
    except np.linalg.LinAlgError as exc:
        raise ConstraintDomainError("log-det argument is singular") from exc
    # a Z-matrix is a nonsingular M-matrix iff its inverse is entrywise >= 0
    if Minv.min() < -1e-10 * max(1.0, np.abs(Minv).max()):
        raise ConstraintDomainError("W o W has spectral radius >= s")
    h = -logdet + d * np.log(s)
    grad = 2.0 * w0 * Minv.T
    np.fill_diagonal(grad, 0.0)
    return float(h), grad


def map_objective(W: np.ndarray, data, calibrated: CalibratedPrior,
                  config: ObjectiveConfig, lambda1: Optional[float] = None):
    """Huber fit plus prior-modulated l1 on W0, plain l1 on lags, and the
    precision-weighted ridge on every lag. ``lambda1`` overrides the config
    value (used by the warm-up schedule)."""
    des = _as_design(data)
    lam1 = config.lambda1 if lambda1 is None else lambda1
    lam2 = config.lambda2
    W = masked(W)
    _, R = predict(W, des)
    value = huber_loss(R, config.huber_delta)
    psi = huber_grad(R, config.huber_delta)
    grad = -(des.Z.T @ psi).reshape(W.shape) / des.n

    c = l1_weights(calibrated)
    omega = precision_mask(calibrated)
    absW = np.abs(W)
    value += lam1 * float(np.sum(c * absW[0]))
    value += lam1 * float(np.sum(absW[1:]))
    value += 0.5 * lam2 * float(np.sum(omega * W**2))
    sgn = np.sign(W)
    grad[0] += lam1 * c * sgn[0]
    grad[1:] += lam1 * sgn[1:]
    grad += lam2 * omega * W
    np.fill_diagonal(grad[0], 0.0)
    return value, grad


def augmented_lagrangian(W: np.ndarray, data, calibrated: CalibratedPrior,
                         config: ObjectiveConfig, alm: AlmState,
                         lambda1: Optional[float] = None):
    value, grad = map_objective(W, data, calibrated, config, lambda1)
    h, gh = dag_penalty(W[0], config.dag_s)
    value += alm.alpha * h + 0.5 * alm.rho * h * h
    grad[0] += (alm.alpha + alm.rho * h) * gh
    return value, grad


def _softplus(x):
    return np.logaddexp(0.0, x)


def eb_edge_terms(tau: np.ndarray, u: np.ndarray, labels: np.ndarray,
                  norms: np.ndarray, lambda2: float):
    """Agreement and Laplace terms for a ``d x d`` temperature matrix.

    Returns ``(value, dvalue/dtau)`` with the diagonal excluded.
    """
    d = tau.shape[0]
    off = ~np.eye(d, dtype=bool)
    x = u * tau
    p = 1.0 / (1.0 + np.exp(-x))
    bce = labels * _softplus(-x) + (1.0 - labels) * _softplus(x)
    omega = 1.0 - p + 1e-3
    # norms[k, i] broadcast over the target column j
    inner = norms[:, :, None] + lambda2 * omega[None, :, :]
    laplace = 0.5 * np.log(inner)
    value = float(bce[off].sum() + laplace[:, off].sum())
    dp = p * (1.0 - p) * u
    g = (p - labels) * u - 0.5 * lambda2 * dp * (1.0 / inner).sum(axis=0)
    g[~off] = 0.0
    return value, g


def eb_parts(tau: np.ndarray, prior: PriorMatrix, w_star: np.ndarray, data,
             lambda2: float):
    """Agreement (cross-entropy) and Laplace log-det values, separately."""
    u, labels, norms = eb_inputs(prior, w_star, data)
    off = ~np.eye(u.shape[0], dtype=bool)
    x = u * tau
    p = 1.0 / (1.0 + np.exp(-x))
    bce = labels * _softplus(-x) + (1.0 - labels) * _softplus(x)
    inner = norms[:, :, None] + lambda2 * (1.0 - p + 1e-3)[None, :, :]
    return float(bce[off].sum()), float(0.5 * np.log(inner)[:, off].sum())


def eb_inputs(prior: PriorMatrix, w_star: np.ndarray, data):
    des = _as_design(data)
    w0 = w_star[0] if np.ndim(w_star) == 3 else w_star
    labels = normalized_strength(w0)
    return prior_logits(prior.values), labels, des.regressor_norms()


def eb_objective(trust: TrustParams, w_star: np.ndarray, data, prior: PriorMatrix,
                 groups: np.ndarray, config: ObjectiveConfig,
                 label_weights: Optional[np.ndarray] = None):
    """EB value and gradient with respect to the trust parameters.

    The gradient is a ``G``-vector for the grouped variant, a pair
    ``(dtheta, db)`` for the MLP and ``0.0`` for the fixed variant.
    ``label_weights`` substitutes the weights used for the agreement labels and
    the MLP features (cross-fitting); regressor norms always come from
    ``data``.
    """
    w_lab = w_star if label_weights is None else label_weights
    u, labels, norms = eb_inputs(prior, w_lab, data)
    reg = 1.0 / (2.0 * SIGMA_TAU**2)
    d = u.shape[0]
    off = ~np.eye(d, dtype=bool)

    if trust.variant == "trust_mlp":
        feats = trust_features(prior, w_lab)
        tau, cache = trust_mlp_forward(feats, trust.theta, trust.bias_b,
                                       trust.tau_min, trust.tau_max, return_cache=True)
        value, g = eb_edge_terms(tau, u, labels, norms, config.lambda2)
        value += reg * float(np.sum((tau[off] - 0.5) ** 2))
        g = g + 2.0 * reg * (tau - 0.5)
        g[~off] = 0.0
        return value, trust_mlp_backward(g, cache, trust.tau_min, trust.tau_max)

    tau = realized_tau(trust, groups)
    value, g = eb_edge_terms(tau, u, labels, norms, config.lambda2)
    if trust.variant == "fixed":
        return value, 0.0
    G = trust.tau.size
    grad = np.bincount(groups[off], weights=g[off], minlength=G)
    value += reg * float(np.sum((trust.tau - 0.5) ** 2))
    grad = grad + 2.0 * reg * (trust.tau - 0.5)
    return value, grad


def split_halves(data: TimeSeriesData):
    """Chronological halves of a series, each keeping the lag order."""
    K = data.lag_order
    T = data.T
    if T < 2 * (K + 2):
        raise SplitError(f"T={T} too short to split with K={K}")
    mid = T // 2
    X = data.observations
    return TimeSeriesData(X[:mid], K), TimeSeriesData(X[mid:], K)


def eb_objective_crossfit(trust: TrustParams, w_star_a: np.ndarray,
                          data_b: TimeSeriesData, prior: PriorMatrix,
                          groups: np.ndarray, config: ObjectiveConfig):
    """EB objective with labels from a fit on the first half and Laplace
    regressor norms from the held-out second half."""
    return eb_objective(trust, w_star_a, data_b, prior, groups, config)
