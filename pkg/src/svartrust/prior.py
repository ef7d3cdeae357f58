"""Controlled-accuracy priors over a known graph, plus prior file I/O."""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Union

import numpy as np

from .datagen import GroundTruth
from .errors import DimensionError, ParameterError, PriorParseError

EDGE_RANGE = (0.8, 0.99)
NONEDGE_RANGE = (0.01, 0.2)
# adversarial corruption uses the far ends of the soft ranges
ADVERSARIAL_EDGE_RANGE = (0.95, 0.99)
ADVERSARIAL_NONEDGE_RANGE = (0.01, 0.05)
CORRUPTION_MODES = ("random", "systematic", "adversarial", "hub_peripheral")


@dataclass
class PriorMatrix:
    values: np.ndarray
    provenance: str = ""

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.ndim != 2 or v.shape[0] != v.shape[1]:
            raise DimensionError(f"prior must be square, got shape {v.shape}")
        v = np.clip(v, 0.0, 1.0)
        np.fill_diagonal(v, 0.0)
        self.values = v

    @property
    def d(self) -> int:
        return self.values.shape[0]

    @classmethod
    def uniform(cls, d: int, value: float = 0.5) -> "PriorMatrix":
        return cls(np.full((d, d), value), provenance="uniform")


@dataclass
class CorruptionSpec:
    mode: str = "random"
    accuracy: Union[float, tuple] = 0.6
    hub_count: int = 3

    def __post_init__(self):
        if self.mode not in CORRUPTION_MODES:
            raise ParameterError(f"unknown corruption mode {self.mode!r}")
        accs = np.atleast_1d(np.asarray(self.accuracy, dtype=float))
        if self.mode == "hub_peripheral":
            if accs.shape != (2,):
                raise ParameterError("hub_peripheral needs (acc_hub, acc_periph)")
            self.accuracy = (float(accs[0]), float(accs[1]))
        elif accs.shape != (1,):
            raise ParameterError(f"mode {self.mode!r} needs a scalar accuracy")
        else:
            self.accuracy = float(accs[0])
        if np.any(accs < 0) or np.any(accs > 1):
            raise ParameterError("accuracy must lie in [0, 1]")
        if self.hub_count < 0:
            raise ParameterError("hub_count must be non-negative")


def _soft_values(truth_bits, correct, rng, edge_range=EDGE_RANGE,
                 nonedge_range=NONEDGE_RANGE):
    """Soft entries: high where the claimed bit is 1, low where it is 0."""
    claimed = np.where(correct, truth_bits, 1 - truth_bits)
    high = rng.uniform(*edge_range, size=truth_bits.shape)
    low = rng.uniform(*nonedge_range, size=truth_bits.shape)
    return np.where(claimed == 1, high, low)


def hub_nodes(truth: GroundTruth, hub_count: int) -> np.ndarray:
    """Indices of the ``hub_count`` highest total-degree nodes (ties by index)."""
    comb = truth.combined
    degree = comb.sum(axis=0) + comb.sum(axis=1)
    order = np.lexsort((np.arange(len(degree)), -degree))
    return np.sort(order[:hub_count])


def make_prior(truth: GroundTruth, spec: CorruptionSpec, rng_seed: int = 0) -> PriorMatrix:
    """Build a soft prior whose off-diagonal entries agree with the truth at a
    controlled rate.

    ``random`` flips each entry independently with probability ``1 - acc``.
    ``systematic`` and ``adversarial`` corrupt exactly ``round((1-acc) n)``
    entries: the former spends the budget on non-edges first (claiming extra
    edges), the latter on true edges first and pushes corrupted entries to the
    extreme end of the soft range. ``hub_peripheral`` flips entries touching a
    hub node with rate ``1 - acc_hub`` and the rest with ``1 - acc_periph``.
    """
    A = truth.combined.astype(int)
    d = A.shape[0]
    if spec.mode == "hub_peripheral" and spec.hub_count >= d:
        raise ParameterError("hub_count must be smaller than d")
    rng = np.random.default_rng(rng_seed)
    off = ~np.eye(d, dtype=bool)
    bits = A[off]
    n = bits.size

    if spec.mode == "random":
        correct = rng.random(n) < spec.accuracy
        vals = _soft_values(bits, correct, rng)
    elif spec.mode == "hub_peripheral":
        hubs = hub_nodes(truth, spec.hub_count)
        is_hub = np.zeros((d, d), dtype=bool)
        is_hub[hubs, :] = True
        is_hub[:, hubs] = True
        acc = np.where(is_hub[off], spec.accuracy[0], spec.accuracy[1])
        correct = rng.random(n) < acc
        vals = _soft_values(bits, correct, rng)
    else:
        budget = int(round((1.0 - spec.accuracy) * n))
        edges = rng.permutation(np.flatnonzero(bits == 1))
        nonedges = rng.permutation(np.flatnonzero(bits == 0))
        first, second = (nonedges, edges) if spec.mode == "systematic" else (edges, nonedges)
        targets = np.concatenate([first, second])[:budget]
        correct = np.ones(n, dtype=bool)
        correct[targets] = False
        vals = _soft_values(bits, correct, rng)
        if spec.mode == "adversarial":
            extreme = _soft_values(bits, correct, rng, ADVERSARIAL_EDGE_RANGE,
                                   ADVERSARIAL_NONEDGE_RANGE)
            vals = np.where(correct, vals, extreme)

    P = np.zeros((d, d))
    P[off] = vals
    label = f"{spec.mode}:acc={spec.accuracy}"
    return PriorMatrix(P, provenance=label)


def sign_agreement(prior: PriorMatrix, truth: GroundTruth) -> float:
    """Fraction of off-diagonal entries where ``P > 0.5`` matches the truth."""
    A = truth.combined
    off = ~np.eye(A.shape[0], dtype=bool)
    return float(np.mean((prior.values[off] > 0.5) == (A[off] == 1)))


def group_edges_by_quantile(prior: PriorMatrix, G: int = 4) -> np.ndarray:
    """Assign each off-diagonal entry to one of ``G`` quantile groups.

    Entries are ranked by prior value; an entry of rank ``r`` (out of ``n``)
    lands in group ``floor(r * G / n)``. Tied values all take the rank of
    their first occurrence, so ties never straddle a boundary and an all-equal
    prior collapses to group 0. The diagonal is marked ``-1``.
    """
    P = prior.values
    d = P.shape[0]
    n = d * (d - 1)
    if G < 1 or n < G:
        raise ParameterError(f"need 1 <= G <= d(d-1), got G={G}")
    off = ~np.eye(d, dtype=bool)
    vals = P[off]
    order = np.argsort(vals, kind="stable")
    sorted_vals = vals[order]
    first_rank = np.searchsorted(sorted_vals, sorted_vals, side="left")
    ranks = np.empty(n, dtype=int)
    ranks[order] = first_rank
    groups = np.full((d, d), -1, dtype=int)
    groups[off] = ranks * G // n
    return groups


def load_prior(path, d: Optional[int] = None) -> PriorMatrix:
    """Read a prior from CSV (d rows of d values) or JSON ``{"d", "values"}``.

    Entries are clipped to ``[0, 1]`` and the diagonal is zeroed.
    """
    path = Path(path)
    text = path.read_text()
    try:
        if path.suffix.lower() == ".json":
            payload = json.loads(text)
            size = int(payload["d"])
            values = np.asarray(payload["values"], dtype=float).reshape(size, size)
        else:
            values = np.loadtxt(path, delimiter=",", ndmin=2, dtype=float)
    except (ValueError, KeyError, TypeError) as exc:
        raise PriorParseError(f"cannot parse prior file {path}: {exc}") from exc
    if values.ndim != 2 or values.shape[0] != values.shape[1]:
        raise DimensionError(f"prior in {path} is not square: {values.shape}")
    if d is not None and values.shape[0] != d:
        raise DimensionError(f"prior has d={values.shape[0]}, dataset has d={d}")
    if not np.all(np.isfinite(values)):
        raise PriorParseError(f"prior file {path} contains non-finite values")
    return PriorMatrix(values, provenance=path.name)


def save_prior(prior: PriorMatrix, path) -> None:
    path = Path(path)
    if path.suffix.lower() == ".json":
        payload = {"d": prior.d, "values": prior.values.ravel().tolist()}
        path.write_text(json.dumps(payload))
    else:
        np.savetxt(path, prior.values, delimiter=",", fmt="%.17g")
