"""Ground-truth graphs, SVAR coefficients and simulated time series.

Conventions used throughout the package: a weight stack is a float array of
shape ``(K + 1, d, d)``; ``W[k, i, j]`` is the effect of variable ``i`` at lag
``k`` on variable ``j``. Row-vector form of the structural equation::

    x_t = x_t @ W0_masked + sum_k x_{t-k} @ W[k] + eps_t
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .errors import DegenerateGraphError, InstabilityError, ParameterError

WEIGHT_RANGE = (0.3, 0.8)
NOISE_FAMILIES = ("gaussian", "laplace", "student_t", "heteroscedastic")
MECHANISMS = ("linear", "tanh_nonlinear")
BURN_IN = 100


def mask_diagonal(w0: np.ndarray) -> np.ndarray:
    """Return ``w0`` with its diagonal set to zero (a copy)."""
    out = np.array(w0, dtype=float, copy=True)
    np.fill_diagonal(out, 0.0)
    return out


@dataclass
class GroundTruth:
    """Per-lag binary adjacency plus the coefficients that realise it."""

    adjacency_per_lag: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        self.adjacency_per_lag = np.asarray(self.adjacency_per_lag, dtype=np.int8)
        self.weights = np.asarray(self.weights, dtype=float)
        if self.adjacency_per_lag.ndim == 2:
            self.adjacency_per_lag = self.adjacency_per_lag[None]
        if self.weights.ndim == 2:
            self.weights = self.weights[None]
        if self.adjacency_per_lag.shape != self.weights.shape:
            raise ParameterError("adjacency and weights must share shape")

    @classmethod
    def from_weights(cls, weights: np.ndarray) -> "GroundTruth":
        weights = np.asarray(weights, dtype=float)
        if weights.ndim == 2:
            weights = weights[None]
        return cls((weights != 0).astype(np.int8), weights)

    @property
    def d(self) -> int:
        return self.weights.shape[-1]

    @property
    def lag_order(self) -> int:
        return self.weights.shape[0] - 1

    @property
    def combined(self) -> np.ndarray:
        """Entrywise OR over lags, diagonal excluded."""
        comb = self.adjacency_per_lag.any(axis=0).astype(np.int8)
        np.fill_diagonal(comb, 0)
        return comb

    def to_json(self) -> dict:
        return {
            "d": self.d,
            "K": self.lag_order,
            "adjacency": [
                np.argwhere(a).tolist() for a in self.adjacency_per_lag
            ],
            "weights": [
                [[int(i), int(j), float(w[i, j])] for i, j in np.argwhere(w != 0)]
                for w in self.weights
            ],
        }

    @classmethod
    def from_json(cls, payload: dict) -> "GroundTruth":
        d, K = int(payload["d"]), int(payload["K"])
        adj = np.zeros((K + 1, d, d), dtype=np.int8)
        weights = np.zeros((K + 1, d, d))
        for k, edges in enumerate(payload["adjacency"]):
            for i, j in edges:
                adj[k, i, j] = 1
        for k, entries in enumerate(payload["weights"]):
            for i, j, w in entries:
                weights[k, int(i), int(j)] = w
        return cls(adj, weights)


@dataclass
class TimeSeriesData:
    observations: np.ndarray
    lag_order: int = 1

    def __post_init__(self):
        self.observations = np.asarray(self.observations, dtype=float)
        if self.observations.ndim != 2:
            raise ParameterError("observations must be a T x d matrix")
        if self.lag_order < 0:
            raise ParameterError("lag order must be non-negative")
        if self.T < self.lag_order + 2:
            raise ParameterError(
                f"need T >= K + 2, got T={self.T}, K={self.lag_order}"
            )

    @property
    def T(self) -> int:
        return self.observations.shape[0]

    @property
    def d(self) -> int:
        return self.observations.shape[1]

    def with_lag(self, K: int) -> "TimeSeriesData":
        return TimeSeriesData(self.observations, K)


@dataclass
class NoiseSpec:
    family: str = "gaussian"
    degrees_of_freedom: float = 4.0
    per_variable_scales: Optional[np.ndarray] = field(default=None)

    def __post_init__(self):
        if self.family not in NOISE_FAMILIES:
            raise ParameterError(f"unknown noise family {self.family!r}")
        if self.family == "student_t" and self.degrees_of_freedom <= 2:
            raise ParameterError("student_t needs more than 2 degrees of freedom")


def standardize(X: np.ndarray) -> np.ndarray:
    """Center each column and scale it to unit (population) std.

    Constant columns (up to rounding) map to zero.
    """
    X = np.asarray(X, dtype=float)
    mu = X.mean(axis=0)
    sd = X.std(axis=0)
    const = sd <= 1e-12 * np.maximum(1.0, np.abs(X).max(axis=0, initial=0.0))
    out = (X - mu) / np.where(const, 1.0, sd)
    out[:, const] = 0.0
    return out


def _random_weights(rng: np.random.Generator, shape, weight_range=WEIGHT_RANGE):
    lo, hi = weight_range
    mag = rng.uniform(lo, hi, size=shape)
    sign = rng.choice([-1.0, 1.0], size=shape)
    return mag * sign


def generate_er_dag(
    d: int,
    edge_prob: float = 0.15,
    weight_range=WEIGHT_RANGE,
    rng_seed: int = 0,
) -> GroundTruth:
    """Erdos-Renyi DAG: strictly upper-triangular support in a random order.

    ``weight_range`` gives the magnitude interval; signs are symmetric, so the
    default draws from ``[-0.8, -0.3] U [0.3, 0.8]``.
    """
    if d < 2:
        raise ParameterError("need d >= 2")
    if not 0 <= edge_prob < 1:
        raise ParameterError(f"edge_prob must lie in [0, 1), got {edge_prob}")
    rng = np.random.default_rng(rng_seed)
    upper = np.triu(rng.random((d, d)) < edge_prob, k=1)
    perm = rng.permutation(d)
    adj = np.zeros((d, d), dtype=np.int8)
    # node perm[a] precedes perm[b] whenever a < b
    adj[np.ix_(perm, perm)] = upper
    weights = adj * _random_weights(rng, (d, d), weight_range)
    return GroundTruth(adj[None], weights[None])


def generate_ba_graph(
    d: int, m: int = 2, weight_range=WEIGHT_RANGE, rng_seed: int = 0
) -> GroundTruth:
    """Barabasi-Albert preferential attachment, edges oriented old -> new.

    Nodes ``0..m-1`` seed the graph without edges; every later node attaches
    to ``m`` distinct earlier nodes with probability proportional to degree.
    """
    if m < 1 or d <= m:
        raise ParameterError(f"need d > m >= 1, got d={d}, m={m}")
    rng = np.random.default_rng(rng_seed)
    adj = np.zeros((d, d), dtype=np.int8)
    degree = np.zeros(d)
    for new in range(m, d):
        existing = np.arange(new)
        deg = degree[:new]
        p = deg / deg.sum() if deg.sum() > 0 else None
        if new == m:
            targets = existing
        else:
            targets = rng.choice(existing, size=m, replace=False, p=p)
        adj[targets, new] = 1
        degree[targets] += 1
        degree[new] += m
    weights = adj * _random_weights(rng, (d, d), weight_range)
    return GroundTruth(adj[None], weights[None])


def reduced_form_transition(weights: np.ndarray) -> np.ndarray:
    """Companion matrix of the reduced-form VAR implied by a weight stack.

    Column-vector form: ``x_t = sum_k A_k x_{t-k} + u_t`` with
    ``A_k = (I - W0^T)^{-1} W_k^T``.
    """
    weights = np.asarray(weights, dtype=float)
    K = weights.shape[0] - 1
    d = weights.shape[-1]
    M = np.eye(d) - mask_diagonal(weights[0]).T
    if abs(np.linalg.det(M)) < 1e-12:
        raise DegenerateGraphError("I - W0^T is singular")
    blocks = [np.linalg.solve(M, weights[k].T) for k in range(1, K + 1)]
    if K == 0:
        return np.zeros((d, d))
    comp = np.zeros((K * d, K * d))
    comp[:d, :] = np.hstack(blocks)
    if K > 1:
        comp[d:, :-d] = np.eye((K - 1) * d)
    return comp


def spectral_radius(A: np.ndarray) -> float:
    if A.size == 0:
        return 0.0
    return float(np.max(np.abs(np.linalg.eigvals(A))))


def generate_lag_matrices(
    truth: GroundTruth,
    K: int = 1,
    density: float = 0.15,
    spectral_cap: float = 0.9,
    rng_seed: int = 0,
    weight_range=WEIGHT_RANGE,
) -> np.ndarray:
    """Draw sparse lag matrices and rescale them below ``spectral_cap``.

    Returns the full ``(K + 1, d, d)`` stack whose slice 0 is the
    instantaneous matrix of ``truth``. Scaling lag ``k`` by ``c**k`` scales
    every companion eigenvalue by ``c``, which makes the cap exact for any K.
    """
    if K < 1:
        raise ParameterError("K must be >= 1")
    if not 0 < spectral_cap < 1:
        raise ParameterError("spectral_cap must lie in (0, 1)")
    if not 0 <= density <= 1:
        raise ParameterError("density must lie in [0, 1]")
    d = truth.d
    rng = np.random.default_rng(rng_seed)
    stack = np.zeros((K + 1, d, d))
    stack[0] = mask_diagonal(truth.weights[0])
    for k in range(1, K + 1):
        support = rng.random((d, d)) < density
        stack[k] = support * _random_weights(rng, (d, d), weight_range)
    return cap_spectral_radius(stack, spectral_cap)


def cap_spectral_radius(weights: np.ndarray, spectral_cap: float) -> np.ndarray:
    weights = np.array(weights, dtype=float, copy=True)
    radius = spectral_radius(reduced_form_transition(weights))
    if radius > spectral_cap:
        c = spectral_cap / radius
        for k in range(1, weights.shape[0]):
            weights[k] *= c**k
    return weights


def make_svar_truth(
    d: int = 20,
    K: int = 1,
    edge_prob: float = 0.15,
    graph: str = "er",
    ba_m: int = 2,
    density: Optional[float] = None,
    spectral_cap: float = 0.9,
    rng_seed: int = 0,
) -> GroundTruth:
    """Instantaneous DAG plus lag matrices, bundled as one ground truth."""
    seeds = np.random.SeedSequence(rng_seed).generate_state(2)
    if graph == "er":
        inst = generate_er_dag(d, edge_prob, rng_seed=int(seeds[0]))
    elif graph == "ba":
        inst = generate_ba_graph(d, ba_m, rng_seed=int(seeds[0]))
    else:
        raise ParameterError(f"unknown graph type {graph!r}")
    if K == 0:
        return inst
    if density is None:
        density = edge_prob
    stack = generate_lag_matrices(inst, K, density, spectral_cap, int(seeds[1]))
    return GroundTruth.from_weights(stack)


def sample_noise(
    spec: NoiseSpec, n: int, d: int, rng: np.random.Generator
) -> np.ndarray:
    """Draw an ``n x d`` noise block; every family except heteroscedastic
    has unit marginal variance."""
    if spec.family == "gaussian":
        return rng.standard_normal((n, d))
    if spec.family == "laplace":
        return rng.laplace(0.0, 1.0 / np.sqrt(2.0), size=(n, d))
    if spec.family == "student_t":
        nu = spec.degrees_of_freedom
        return rng.standard_t(nu, size=(n, d)) * np.sqrt((nu - 2.0) / nu)
    scales = spec.per_variable_scales
    if scales is None:
        scales = rng.uniform(0.5, 1.5, size=d)
    scales = np.asarray(scales, dtype=float)
    if scales.shape != (d,):
        raise ParameterError("per_variable_scales must have length d")
    return rng.standard_normal((n, d)) * scales


def topological_order(adj: np.ndarray) -> list[int]:
    """Kahn's algorithm on the support of ``adj`` (``adj[i, j]``: i -> j)."""
    support = np.asarray(adj) != 0
    support = support & ~np.eye(len(support), dtype=bool)
    indeg = support.sum(axis=0)
    ready = [j for j in range(len(indeg)) if indeg[j] == 0]
    order = []
    while ready:
        node = ready.pop(0)
        order.append(node)
        for child in np.flatnonzero(support[node]):
            indeg[child] -= 1
            if indeg[child] == 0:
                ready.append(int(child))
    if len(order) != len(support):
        raise DegenerateGraphError("instantaneous graph contains a cycle")
    return order


def simulate_svar(
    weights: np.ndarray,
    T: int,
    noise: Optional[NoiseSpec] = None,
    mechanism: str = "linear",
    rng_seed: int = 0,
    burn_in: int = BURN_IN,
    standardized: bool = True,
) -> TimeSeriesData:
    """Simulate ``T`` steps of a structural VAR after ``burn_in`` steps.

    Instantaneous effects are resolved in topological order of the masked
    lag-0 matrix. With ``mechanism="tanh_nonlinear"`` each instantaneous
    edge contributes ``a * tanh(b * x_i) + c * x_i``; lagged effects stay
    linear.
    """
    weights = np.asarray(weights, dtype=float)
    if weights.ndim == 2:
        weights = weights[None]
    K = weights.shape[0] - 1
    d = weights.shape[-1]
    if T < K + 2:
        raise ParameterError(f"need T >= K + 2, got T={T}")
    if mechanism not in MECHANISMS:
        raise ParameterError(f"unknown mechanism {mechanism!r}")
    noise = noise or NoiseSpec()
    rng = np.random.default_rng(rng_seed)
    w0 = mask_diagonal(weights[0])
    order = topological_order(w0)
    parents = [np.flatnonzero(w0[:, j]) for j in range(d)]

    if mechanism == "tanh_nonlinear":
        a = _random_weights(rng, (d, d))
        b = rng.uniform(0.5, 2.0, size=(d, d))
        c = _random_weights(rng, (d, d))

    total = burn_in + T
    eps = sample_noise(noise, total, d, rng)
    X = np.zeros((total, d))
    with np.errstate(over="ignore", invalid="ignore"):
        for t in range(total):
            base = eps[t].copy()
            for k in range(1, min(K, t) + 1):
                base += X[t - k] @ weights[k]
            x = X[t]
            for j in order:
                pa = parents[j]
                if mechanism == "linear":
                    x[j] = base[j] + x[pa] @ w0[pa, j]
                else:
                    x[j] = base[j] + np.sum(
                        a[pa, j] * np.tanh(b[pa, j] * x[pa]) + c[pa, j] * x[pa]
                    )
            if not np.all(np.isfinite(x)) or np.max(np.abs(x)) > 1e8:
                raise InstabilityError(f"SVAR simulation diverged at step {t}", rng_seed)
    X = X[burn_in:]
    if standardized:
        X = standardize(X)
    return TimeSeriesData(X, K)


def _lorenz96_rhs(x: np.ndarray, forcing: float) -> np.ndarray:
    return (np.roll(x, -1) - np.roll(x, 2)) * np.roll(x, 1) - x + forcing


def lorenz96_truth(d: int) -> GroundTruth:
    """Lag-1 ground truth: i is driven by i-2, i-1, i+1 and itself."""
    adj = np.zeros((2, d, d), dtype=np.int8)
    for i in range(d):
        for src in (i - 2, i - 1, i + 1, i):
            adj[1, src % d, i] = 1
    return GroundTruth(adj, adj.astype(float))


def simulate_lorenz96(
    d: int = 20,
    T: int = 500,
    forcing: float = 8.0,
    dt: float = 0.05,
    rng_seed: int = 0,
    burn_in: int = BURN_IN,
    x0: Optional[Sequence[float]] = None,
    standardized: bool = True,
) -> tuple[TimeSeriesData, GroundTruth]:
    """Integrate Lorenz-96 with classical RK4 and sample every step."""
    if d < 4:
        raise ParameterError("Lorenz-96 needs d >= 4")
    rng = np.random.default_rng(rng_seed)
    if x0 is None:
        x = forcing + 0.01 * rng.standard_normal(d)
    else:
        x = np.asarray(x0, dtype=float).copy()
    out = np.empty((burn_in + T, d))
    with np.errstate(over="ignore", invalid="ignore"):
        for t in range(burn_in + T):
            k1 = _lorenz96_rhs(x, forcing)
            k2 = _lorenz96_rhs(x + 0.5 * dt * k1, forcing)
            k3 = _lorenz96_rhs(x + 0.5 * dt * k2, forcing)
            k4 = _lorenz96_rhs(x + dt * k3, forcing)
            x = x + dt / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
            if not np.all(np.isfinite(x)) or np.max(np.abs(x)) > 1e6:
                raise InstabilityError(f"Lorenz-96 diverged at step {t}", rng_seed)
            out[t] = x
    X = out[burn_in:]
    if standardized:
        X = standardize(X)
    return TimeSeriesData(X, 1), lorenz96_truth(d)


def save_timeseries_csv(data: TimeSeriesData, path) -> None:
    header = ",".join(f"v{i}" for i in range(data.d))
    np.savetxt(path, data.observations, delimiter=",", header=header,
               comments="", fmt="%.17g")


def load_timeseries_csv(path, lag_order: int = 1) -> TimeSeriesData:
    X = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    return TimeSeriesData(X, lag_order)


def save_truth_json(truth: GroundTruth, path) -> None:
    Path(path).write_text(json.dumps(truth.to_json()))


def load_truth_json(path) -> GroundTruth:
    return GroundTruth.from_json(json.loads(Path(path).read_text()))
