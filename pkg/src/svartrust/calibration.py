"""Temperature calibration of a raw prior and the quantities derived from it.

Two trust parameterizations are supported: one temperature per quantile
group of the prior, and a per-edge temperature produced by a small MLP over
neighbourhood features. A third ``fixed`` variant pins a single constant.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.special import expit, logit
from scipy.stats import spearmanr

from .datagen import TimeSeriesData, mask_diagonal
from .errors import NeighborhoodTooSmallError, ParameterError
from .prior import PriorMatrix

TAU_MIN = 1e-3
TAU_MAX = 2.0
CLIP_EPS = 1e-3
OMEGA_DELTA = 1e-3
C_MIN, C_MAX = 0.1, 1.5
N_FEATURES = 6
HIDDEN = 16
N_MLP_PARAMS = N_FEATURES * HIDDEN + HIDDEN + HIDDEN + 1
VARIANTS = ("grouped", "trust_mlp", "fixed")


@dataclass
class TrustParams:
    variant: str = "grouped"
    tau: Optional[np.ndarray] = None
    theta: Optional[np.ndarray] = None
    bias_b: float = 0.0
    tau_const: float = 1.0
    tau_min: float = TAU_MIN
    tau_max: float = TAU_MAX

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ParameterError(f"unknown trust variant {self.variant!r}")
        if self.variant == "grouped":
            if self.tau is None:
                raise ParameterError("grouped trust needs a tau vector")
            self.tau = np.asarray(self.tau, dtype=float)
        if self.variant == "trust_mlp":
            if self.theta is None:
                self.theta = np.zeros(N_MLP_PARAMS)
            self.theta = np.asarray(self.theta, dtype=float)
            if self.theta.shape != (N_MLP_PARAMS,):
                raise ParameterError(f"theta must have {N_MLP_PARAMS} entries")

    def copy(self) -> "TrustParams":
        return TrustParams(
            self.variant,
            None if self.tau is None else self.tau.copy(),
            None if self.theta is None else self.theta.copy(),
            float(self.bias_b),
            float(self.tau_const),
            self.tau_min,
            self.tau_max,
        )

    def to_json(self) -> dict:
        return {
            "variant": self.variant,
            "tau": None if self.tau is None else self.tau.tolist(),
            "theta": None if self.theta is None else self.theta.tolist(),
            "bias_b": self.bias_b,
            "tau_const": self.tau_const,
            "tau_min": self.tau_min,
            "tau_max": self.tau_max,
        }

    @classmethod
    def from_json(cls, payload: dict) -> "TrustParams":
        return cls(**payload)


@dataclass
class CalibratedPrior:
    p_hat: np.ndarray
    tau_realized: np.ndarray = field(default=None)


def prior_logits(prior_values: np.ndarray, eps: float = CLIP_EPS) -> np.ndarray:
    return logit(np.clip(prior_values, eps, 1.0 - eps))


def calibrate(prior: PriorMatrix, tau_matrix: np.ndarray) -> CalibratedPrior:
    """Temperature-scale the prior logits entrywise by ``tau_matrix``."""
    tau_matrix = np.asarray(tau_matrix, dtype=float)
    p_hat = expit(prior_logits(prior.values) * tau_matrix)
    np.fill_diagonal(p_hat, 0.5)
    return CalibratedPrior(p_hat, tau_matrix)


def calibrate_grouped(prior: PriorMatrix, tau, groups: np.ndarray) -> CalibratedPrior:
    tau = np.asarray(tau, dtype=float)
    tau_matrix = tau[np.where(groups >= 0, groups, 0)]
    np.fill_diagonal(tau_matrix, 0.0)
    return calibrate(prior, tau_matrix)


def uniform_calibration(d: int) -> CalibratedPrior:
    """Calibration that ignores the prior: ``P_hat = 0.5`` everywhere."""
    return CalibratedPrior(np.full((d, d), 0.5), np.zeros((d, d)))


def l1_weights(calibrated: CalibratedPrior) -> np.ndarray:
    return np.clip(1.5 - calibrated.p_hat, C_MIN, C_MAX)


def precision_mask(calibrated: CalibratedPrior, delta: float = OMEGA_DELTA) -> np.ndarray:
    return (1.0 - calibrated.p_hat) + delta


def _neighborhood_stats(M: np.ndarray):
    """Mean and population std of ``M`` over each entry's row-column
    neighbourhood, excluding the entry itself and the diagonal."""
    d = M.shape[0]
    M = mask_diagonal(M)
    rows = M.sum(axis=1, keepdims=True)
    cols = M.sum(axis=0, keepdims=True)
    rows2 = (M**2).sum(axis=1, keepdims=True)
    cols2 = (M**2).sum(axis=0, keepdims=True)
    n = 2 * (d - 2)
    s1 = rows + cols - 2 * M
    s2 = rows2 + cols2 - 2 * M**2
    mean = s1 / n
    var = np.maximum(s2 / n - mean**2, 0.0)
    return mean, np.sqrt(var)


def normalized_strength(w0: np.ndarray) -> np.ndarray:
    """``|W0|`` over its largest off-diagonal magnitude; all zero if W0 = 0."""
    mag = np.abs(mask_diagonal(w0))
    top = mag.max()
    return mag / top if top > 0 else np.zeros_like(mag)


def trust_features(prior: PriorMatrix, w_star: np.ndarray) -> np.ndarray:
    """Six features per ordered pair, shape ``(d, d, 6)``.

    Order: prior value, neighbourhood prior mean and std, normalized
    ``|W0|``, its neighbourhood mean, and the prior-data agreement
    ``4 (P - 0.5)(|W|_norm - 0.5)``.
    """
    P = prior.values
    d = P.shape[0]
    if d < 3:
        raise NeighborhoodTooSmallError("trust features need d >= 3")
    w0 = w_star[0] if np.ndim(w_star) == 3 else w_star
    wn = normalized_strength(w0)
    p_mean, p_std = _neighborhood_stats(P)
    w_mean, _ = _neighborhood_stats(wn)
    agree = 4.0 * (P - 0.5) * (wn - 0.5)
    z = np.stack([P, p_mean, p_std, wn, w_mean, agree], axis=-1)
    z[np.arange(d), np.arange(d)] = 0.0
    return z


def unpack_theta(theta: np.ndarray):
    i = 0
    W1 = theta[i:i + N_FEATURES * HIDDEN].reshape(N_FEATURES, HIDDEN)
    i += N_FEATURES * HIDDEN
    b1 = theta[i:i + HIDDEN]
    i += HIDDEN
    w2 = theta[i:i + HIDDEN]
    i += HIDDEN
    return W1, b1, w2, theta[i]


def init_theta(rng_seed: int = 0, scale: float = 0.1) -> np.ndarray:
    return np.random.default_rng(rng_seed).uniform(-scale, scale, N_MLP_PARAMS)


def trust_mlp_forward(features: np.ndarray, theta: np.ndarray, bias_b: float,
                      tau_min: float = TAU_MIN, tau_max: float = TAU_MAX,
                      return_cache: bool = False):
    """Per-edge temperature ``tau_min + (tau_max - tau_min) sigmoid(f(z) + b)``
    with ``f`` a 6-16-1 tanh network."""
    W1, b1, w2, b2 = unpack_theta(np.asarray(theta, dtype=float))
    hidden = np.tanh(features @ W1 + b1)
    s = expit(hidden @ w2 + b2 + bias_b)
    tau = tau_min + (tau_max - tau_min) * s
    if return_cache:
        return tau, (features, hidden, s, w2)
    return tau


def trust_mlp_backward(grad_tau: np.ndarray, cache, tau_min: float = TAU_MIN,
                       tau_max: float = TAU_MAX):
    """Pull ``dL/dtau`` back to ``(dL/dtheta, dL/db)``."""
    features, hidden, s, w2 = cache
    g_out = grad_tau * (tau_max - tau_min) * s * (1.0 - s)
    z = features.reshape(-1, N_FEATURES)
    h = hidden.reshape(-1, HIDDEN)
    g = g_out.reshape(-1)
    g_w2 = h.T @ g
    g_b2 = g.sum()
    g_pre = np.outer(g, w2) * (1.0 - h**2)
    g_W1 = z.T @ g_pre
    g_b1 = g_pre.sum(axis=0)
    grad_theta = np.concatenate([g_W1.ravel(), g_b1, g_w2, [g_b2]])
    return grad_theta, float(g_b2)


def realized_tau(trust: TrustParams, groups: np.ndarray,
                 features: Optional[np.ndarray] = None) -> np.ndarray:
    """The ``d x d`` matrix of temperatures a trust state implies."""
    d = groups.shape[0]
    if trust.variant == "grouped":
        tau = trust.tau[np.where(groups >= 0, groups, 0)]
    elif trust.variant == "fixed":
        tau = np.full((d, d), float(trust.tau_const))
    else:
        if features is None:
            raise ParameterError("trust_mlp needs features")
        tau = trust_mlp_forward(features, trust.theta, trust.bias_b,
                                trust.tau_min, trust.tau_max)
    tau = np.array(tau, dtype=float, copy=True)
    np.fill_diagonal(tau, 0.0)
    return tau


def spearman_precalibrate(data: TimeSeriesData, prior: PriorMatrix,
                          tau_min: float = TAU_MIN, tau_max: float = TAU_MAX):
    """Initial temperature and MLP bias from rank agreement between the prior
    and absolute sample correlations.

    Returns ``(tau_init, bias_b, rho)``.
    """
    X = data.observations
    if X.shape[0] < 3:
        raise ParameterError("need at least 3 observations")
    d = X.shape[1]
    off = ~np.eye(d, dtype=bool)
    with np.errstate(invalid="ignore", divide="ignore"):
        corr = np.abs(np.corrcoef(X, rowvar=False))
    a, b = corr[off], prior.values[off]
    rho = 0.0
    if np.all(np.isfinite(a)) and np.ptp(a) > 0 and np.ptp(b) > 0:
        rho = float(spearmanr(a, b).statistic)
        if not np.isfinite(rho):
            rho = 0.0
    span = tau_max - tau_min
    tau_init = float(np.clip(tau_min + span * max(rho, 0.0), tau_min, tau_max))
    frac = np.clip((tau_init - tau_min) / span, 0.0, 1.0)
    with np.errstate(divide="ignore"):
        bias = float(np.clip(logit(frac), -6.0, 6.0))
    return tau_init, bias, rho
