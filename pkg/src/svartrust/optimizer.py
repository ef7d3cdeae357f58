"""Three-level fitting loop: Adam on the augmented Lagrangian (inner), EB
gradient steps on the trust parameters (middle), multiplier updates (outer).
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy.sparse.csgraph import connected_components

from .calibration import (
    TAU_MAX,
    TAU_MIN,
    CalibratedPrior,
    TrustParams,
    calibrate,
    init_theta,
    realized_tau,
    spearman_precalibrate,
    trust_features,
    uniform_calibration,
)
from .datagen import TimeSeriesData, mask_diagonal
from .errors import ConstraintDomainError, OptimizationDivergedError, ParameterError
from .objective import (
    AlmState,
    Design,
    ObjectiveConfig,
    augmented_lagrangian,
    dag_penalty,
    eb_objective,
    split_halves,
)
from .prior import PriorMatrix, group_edges_by_quantile

ADAM_BETAS = (0.9, 0.999)
ADAM_EPS = 1e-8
MAX_BACKTRACKS = 10


@dataclass
class OptimizerConfig:
    outer_iters: int = 35
    inner_iters: int = 400
    middle_iters: int = 8
    inner_lr: float = 8e-3
    middle_lr: float = 0.1
    rho0: float = 1.0
    gamma: float = 3.0
    rho_max: float = 1e8
    dag_tol: float = 1e-6
    lambda_warm_factor: float = 5.0
    threshold_ratio: float = 0.1
    inner_patience: int = 50
    inner_stall_tol: float = 1e-6
    trust_variant: str = "grouped"
    tau_const: float = 1.0
    n_groups: int = 4
    ridge_penalty: float = 1e-2
    warm_start: bool = True
    hard_mask: bool = False
    lags_only: bool = False
    crossfit: bool = False

    def __post_init__(self):
        positive = ("outer_iters", "inner_iters", "inner_lr", "rho0", "gamma",
                    "rho_max", "dag_tol", "lambda_warm_factor", "inner_patience")
        for name in positive:
            if getattr(self, name) <= 0:
                raise ParameterError(f"{name} must be positive")
        if self.middle_iters < 0 or self.middle_lr < 0:
            raise ParameterError("middle_iters and middle_lr must be non-negative")
        if not 0 <= self.threshold_ratio < 1:
            raise ParameterError("threshold_ratio must lie in [0, 1)")
        if self.trust_variant not in ("grouped", "trust_mlp", "fixed"):
            raise ParameterError(f"unknown trust variant {self.trust_variant!r}")


@dataclass
class FitResult:
    weights: np.ndarray
    weights_raw: np.ndarray
    trust: TrustParams
    tau_realized: np.ndarray
    trajectory: list = field(default_factory=list)
    converged: bool = False
    tau_init: float = 1.0
    spearman_rho: float = 0.0

    @property
    def outer_iters(self) -> int:
        return len(self.trajectory)

    @property
    def final_h(self) -> float:
        return self.trajectory[-1]["h"] if self.trajectory else float("nan")

    @property
    def tau_mean(self) -> float:
        d = self.tau_realized.shape[0]
        off = ~np.eye(d, dtype=bool)
        return float(self.tau_realized[off].mean())

    def to_json(self) -> dict:
        return {
            "weights": self.weights.tolist(),
            "weights_raw": self.weights_raw.tolist(),
            "trust": self.trust.to_json(),
            "tau_realized": self.tau_realized.tolist(),
            "trajectory": self.trajectory,
            "converged": self.converged,
            "tau_init": self.tau_init,
            "spearman_rho": self.spearman_rho,
        }

    @classmethod
    def from_json(cls, payload: dict) -> "FitResult":
        return cls(
            weights=np.asarray(payload["weights"], dtype=float),
            weights_raw=np.asarray(payload["weights_raw"], dtype=float),
            trust=TrustParams.from_json(payload["trust"]),
            tau_realized=np.asarray(payload["tau_realized"], dtype=float),
            trajectory=list(payload["trajectory"]),
            converged=bool(payload["converged"]),
            tau_init=float(payload["tau_init"]),
            spearman_rho=float(payload["spearman_rho"]),
        )

    def dumps(self) -> str:
        return json.dumps(self.to_json())


def ridge_warm_start(data: TimeSeriesData, K: Optional[int] = None,
                     ridge_penalty: float = 1e-2) -> np.ndarray:
    """Column-wise ridge of each variable on the other contemporaneous
    variables and all lagged variables."""
    if K is not None and K != data.lag_order:
        data = data.with_lag(K)
    des = Design(data)
    d, K = des.d, des.K
    Z = des.Z
    gram = Z.T @ Z
    rhs = Z.T @ des.Y
    W = np.zeros(((K + 1) * d, d))
    for j in range(d):
        keep = np.ones((K + 1) * d, dtype=bool)
        keep[j] = False
        A = gram[np.ix_(keep, keep)] + ridge_penalty * np.eye(keep.sum())
        W[keep, j] = np.linalg.solve(A, rhs[keep, j])
    return W.reshape(K + 1, d, d)


def cosine_lr(lr: float, step: int, total: int) -> float:
    return lr * 0.5 * (1.0 + math.cos(math.pi * step / total))


def adam_inner_loop(W: np.ndarray, closure: Callable, J: int = 400, lr: float = 8e-3,
                    patience: int = 50, stall_tol: float = 1e-6,
                    free_mask: Optional[np.ndarray] = None):
    """Adam with a cosine-decayed step and loss-stall early exit.

    ``closure(W)`` returns ``(value, grad)`` and may raise
    ``ConstraintDomainError``, in which case the step is halved and retried.
    Returns ``(W, final value, steps taken)``.
    """
    W = np.array(W, dtype=float, copy=True)
    b1, b2 = ADAM_BETAS
    try:
        value, grad = closure(W)
    except ConstraintDomainError as exc:
        raise OptimizationDivergedError("initial point outside the constraint domain",
                                        W) from exc
    m = np.zeros_like(W)
    v = np.zeros_like(W)
    best = value
    stall = 0
    step = 0
    for step in range(1, J + 1):
        if free_mask is not None:
            grad = grad * free_mask
        m = b1 * m + (1 - b1) * grad
        v = b2 * v + (1 - b2) * grad * grad
        mhat = m / (1 - b1**step)
        vhat = v / (1 - b2**step)
        delta = cosine_lr(lr, step - 1, J) * mhat / (np.sqrt(vhat) + ADAM_EPS)
        for _ in range(MAX_BACKTRACKS + 1):
            cand = W - delta
            try:
                new_value, new_grad = closure(cand)
                break
            except ConstraintDomainError:
                delta = 0.5 * delta
        else:
            raise OptimizationDivergedError("step rejected after repeated halving", W)
        if not np.isfinite(new_value):
            raise OptimizationDivergedError("non-finite loss", W)
        W, value, grad = cand, new_value, new_grad
        if value < best - stall_tol:
            best = value
            stall = 0
        else:
            stall += 1
            if stall >= patience:
                break
    return W, value, step


def eb_middle_loop(trust: TrustParams, w_star: np.ndarray, data, prior: PriorMatrix,
                   groups: np.ndarray, config: ObjectiveConfig, S: int = 8,
                   middle_lr: float = 0.1, label_weights=None) -> TrustParams:
    """``S`` gradient steps on the EB objective with the weights held fixed.

    Grouped temperatures are projected back onto ``[tau_min, tau_max]``; the
    MLP parameters are unconstrained.
    """
    trust = trust.copy()
    if S <= 0 or trust.variant == "fixed":
        return trust
    for _ in range(S):
        _, grad = eb_objective(trust, w_star, data, prior, groups, config,
                               label_weights=label_weights)
        if trust.variant == "grouped":
            trust.tau = np.clip(trust.tau - middle_lr * grad, trust.tau_min, trust.tau_max)
        else:
            g_theta, g_b = grad
            trust.theta = trust.theta - middle_lr * g_theta
            trust.bias_b = float(trust.bias_b - middle_lr * g_b)
    return trust


def has_cycle(w0: np.ndarray) -> bool:
    adj = mask_diagonal(w0) != 0
    n, labels = connected_components(adj, directed=True, connection="strong")
    return n < adj.shape[0]


def break_cycles(w0: np.ndarray) -> np.ndarray:
    """Repeatedly drop the weakest edge lying on a directed cycle."""
    w0 = mask_diagonal(w0)
    while True:
        adj = w0 != 0
        n, labels = connected_components(adj, directed=True, connection="strong")
        if n == adj.shape[0]:
            return w0
        on_cycle = adj & (labels[:, None] == labels[None, :])
        mags = np.where(on_cycle, np.abs(w0), np.inf)
        i, j = np.unravel_index(np.argmin(mags), mags.shape)
        w0[i, j] = 0.0


def threshold_weights(W: np.ndarray, ratio: float = 0.1) -> np.ndarray:
    """Zero every entry (all lags) below ``ratio * max |W0|`` and remove any
    residual instantaneous cycle."""
    W = np.array(W, dtype=float, copy=True)
    np.fill_diagonal(W[0], 0.0)
    thr = ratio * np.abs(W[0]).max()
    W[np.abs(W) < thr] = 0.0
    W[0] = break_cycles(W[0])
    return W


def _domain_safe(W: np.ndarray, s: float) -> np.ndarray:
    """Shrink W0 until the log-det penalty is defined."""
    W = W.copy()
    for _ in range(60):
        try:
            dag_penalty(W[0], s)
            return W
        except ConstraintDomainError:
            W[0] *= 0.5
    W[0] = 0.0
    return W


def _initial_trust(opt: OptimizerConfig, tau_init: float, bias: float, G: int,
                   rng_seed: int) -> TrustParams:
    if opt.trust_variant == "grouped":
        return TrustParams("grouped", tau=np.full(G, tau_init))
    if opt.trust_variant == "trust_mlp":
        return TrustParams("trust_mlp", theta=init_theta(rng_seed), bias_b=bias)
    return TrustParams("fixed", tau_const=opt.tau_const)


def fit(data: TimeSeriesData, prior: PriorMatrix,
        objective: Optional[ObjectiveConfig] = None,
        optimizer: Optional[OptimizerConfig] = None, rng_seed: int = 0) -> FitResult:
    """Estimate a sparse SVAR with an acyclic instantaneous graph, learning
    how far to trust ``prior`` along the way."""
    obj = objective or ObjectiveConfig()
    opt = optimizer or OptimizerConfig()
    d = data.d
    if prior.d != d:
        raise ParameterError(f"prior has d={prior.d}, data has d={d}")
    K = data.lag_order

    fit_data, eb_data = data, data
    if opt.crossfit:
        fit_data, eb_data = split_halves(data)
    des = Design(fit_data)
    eb_des = Design(eb_data)

    groups = group_edges_by_quantile(prior, opt.n_groups)
    tau_init, bias, rho_s = spearman_precalibrate(fit_data, prior)
    trust = _initial_trust(opt, tau_init, bias, opt.n_groups, rng_seed)

    free = np.ones((K + 1, d, d))
    np.fill_diagonal(free[0], 0.0)
    if opt.hard_mask:
        drop = mask_diagonal(prior.values < 0.5).astype(bool)
        free[:, drop] = 0.0
    if opt.lags_only:
        free[0] = 0.0

    if opt.warm_start:
        W = ridge_warm_start(fit_data, ridge_penalty=opt.ridge_penalty)
    else:
        W = np.zeros((K + 1, d, d))
    W = _domain_safe(W * free, obj.dag_s)

    def calibrated_for(trust_state: TrustParams, W_cur) -> CalibratedPrior:
        if opt.hard_mask:
            return uniform_calibration(d)
        feats = trust_features(prior, W_cur) if trust_state.variant == "trust_mlp" else None
        return calibrate(prior, realized_tau(trust_state, groups, feats))

    alm = AlmState(alpha=0.0, rho=opt.rho0)
    warm_iters = opt.outer_iters // 3
    trajectory = []
    converged = False
    for it in range(1, opt.outer_iters + 1):
        lam1 = obj.lambda1 * (opt.lambda_warm_factor if it <= warm_iters else 1.0)
        cal = calibrated_for(trust, W)

        def closure(Wc, cal=cal, lam1=lam1):
            return augmented_lagrangian(Wc, des, cal, obj, alm, lambda1=lam1)

        W, loss, steps = adam_inner_loop(W, closure, opt.inner_iters, opt.inner_lr,
                                         opt.inner_patience, opt.inner_stall_tol, free)
        W = W * free
        if not opt.hard_mask:
            trust = eb_middle_loop(trust, W, eb_des, prior, groups, obj,
                                   opt.middle_iters, opt.middle_lr)
        h, _ = dag_penalty(W[0], obj.dag_s)
        tau_now = calibrated_for(trust, W).tau_realized
        off = ~np.eye(d, dtype=bool)
        trajectory.append({
            "outer": it,
            "h": h,
            "loss": float(loss),
            "tau_mean": float(tau_now[off].mean()) if tau_now is not None else 0.0,
            "lambda1": lam1,
            "alpha": alm.alpha,
            "rho": alm.rho,
            "inner_steps": int(steps),
        })
        if abs(h) < opt.dag_tol:
            converged = True
            break
        alm.update(h, opt.gamma, opt.rho_max)

    if opt.hard_mask:
        tau_final = np.zeros((d, d))
    else:
        feats = trust_features(prior, W) if trust.variant == "trust_mlp" else None
        tau_final = realized_tau(trust, groups, feats)
    W_raw = W.copy()
    np.fill_diagonal(W_raw[0], 0.0)
    return FitResult(
        weights=threshold_weights(W_raw, opt.threshold_ratio),
        weights_raw=W_raw,
        trust=trust,
        tau_realized=tau_final,
        trajectory=trajectory,
        converged=converged,
        tau_init=tau_init,
        spearman_rho=rho_s,
    )
