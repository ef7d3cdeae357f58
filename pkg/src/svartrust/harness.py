"""Experiment configuration, single runs, seed grids and the ablation suite.

A run is fully determined by an ``ExperimentConfig`` and a seed. Rows carry a
content hash of the config (seeds and output location excluded) so that
aggregates can be grouped and re-derived from the raw per-seed table.
"""
from __future__ import annotations

import csv
import hashlib
import itertools
import json
import math
import os
import subprocess
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Iterable, Optional

import numpy as np
import yaml

from .calibration import TAU_MIN
from .datagen import NoiseSpec, make_svar_truth, simulate_lorenz96, simulate_svar
from .evaluation import evaluate, rho_cons_diagnostic
from .objective import ObjectiveConfig
from .optimizer import FitResult, OptimizerConfig, fit
from .prior import CorruptionSpec, PriorMatrix, load_prior, make_prior

OUTPUT_ENV = "SVARTRUST_OUTPUT_DIR"

# variant name -> (optimizer overrides, objective overrides)
VARIANTS = {
    "learned_tau": ({"trust_variant": "grouped"}, {}),
    "trust_mlp": ({"trust_variant": "trust_mlp"}, {}),
    "fixed_tau": ({"trust_variant": "fixed", "tau_const": 1.0, "middle_iters": 0}, {}),
    "no_prior": ({"trust_variant": "fixed", "tau_const": TAU_MIN, "middle_iters": 0}, {}),
    "tau_floor": ({"trust_variant": "fixed", "tau_const": TAU_MIN, "middle_iters": 0}, {}),
    "hard_mask": ({"trust_variant": "fixed", "hard_mask": True, "middle_iters": 0}, {}),
    "no_lam": ({"lambda_warm_factor": 1.0}, {}),
    "no_warm": ({"warm_start": False}, {}),
    "no_l1": ({}, {"lambda1": 0.0}),
    "lags_only": ({"lags_only": True}, {}),
}
# variants that never read the prior
PRIOR_FREE = ("no_prior",)

ABLATIONS = {
    "Full": "learned_tau",
    "LagsOnly": "lags_only",
    "NoWarm": "no_warm",
    "NoPrior": "tau_floor",
    "FixedTau": "fixed_tau",
    "NoLam": "no_lam",
    "NoL1": "no_l1",
    "HardMask": "hard_mask",
}

ROW_FIELDS = [
    "config_hash", "seed", "build_id", "variant", "graph", "d", "T", "K",
    "prior_mode", "acc", "status", "error", "auroc", "best_f1",
    "best_f1_threshold", "shd", "tau_mean", "prior_agreement", "rho_cons",
    "outer_iters", "final_h",
]
METRICS = ("auroc", "best_f1", "shd", "tau_mean")


@dataclass
class DataSpec:
    generator: str = "er"
    d: int = 20
    T: int = 500
    K: int = 1
    edge_prob: float = 0.15
    ba_m: int = 2
    density: Optional[float] = None
    spectral_cap: float = 0.9
    noise: str = "gaussian"
    degrees_of_freedom: float = 4.0
    mechanism: str = "linear"
    forcing: float = 8.0
    dt: float = 0.05


@dataclass
class PriorSpec:
    mode: str = "random"
    accuracy: object = 0.6
    hub_count: int = 3
    path: Optional[str] = None


def _from_dict(cls, payload: Optional[dict]):
    payload = dict(payload or {})
    known = {f.name for f in fields(cls)}
    unknown = set(payload) - known
    if unknown:
        raise ValueError(f"unknown {cls.__name__} keys: {sorted(unknown)}")
    return cls(**payload)


@dataclass
class ExperimentConfig:
    data: DataSpec = field(default_factory=DataSpec)
    prior: PriorSpec = field(default_factory=PriorSpec)
    objective: ObjectiveConfig = field(default_factory=ObjectiveConfig)
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)
    variant: str = "learned_tau"
    seeds: list = field(default_factory=lambda: [0])
    output: str = "results"
    save_fit: bool = False

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}")

    @classmethod
    def from_dict(cls, payload: dict) -> "ExperimentConfig":
        payload = dict(payload)
        return cls(
            data=_from_dict(DataSpec, payload.pop("data", None)),
            prior=_from_dict(PriorSpec, payload.pop("prior", None)),
            objective=_from_dict(ObjectiveConfig, payload.pop("objective", None)),
            optimizer=_from_dict(OptimizerConfig, payload.pop("optimizer", None)),
            **payload,
        )

    def to_dict(self) -> dict:
        return asdict(self)

    def content(self) -> dict:
        """Everything that determines a run except the seed and output."""
        body = self.to_dict()
        body.pop("seeds")
        body.pop("output")
        body.pop("save_fit")
        if self.variant in PRIOR_FREE:
            body.pop("prior")
        return body

    def config_hash(self) -> str:
        text = json.dumps(self.content(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(text.encode()).hexdigest()[:16]

    def with_overrides(self, overrides: dict) -> "ExperimentConfig":
        """Copy with dotted-key overrides, e.g. ``{"data.T": 200}``."""
        body = self.to_dict()
        for key, value in overrides.items():
            node = body
            parts = key.split(".")
            for part in parts[:-1]:
                node = node[part]
            if parts[-1] not in node:
                raise ValueError(f"unknown config key {key!r}")
            node[parts[-1]] = value
        return ExperimentConfig.from_dict(body)

    def output_dir(self) -> Path:
        return Path(os.environ.get(OUTPUT_ENV, self.output))


def load_config(path) -> ExperimentConfig:
    """Read a YAML (or JSON) config file."""
    with open(path) as fh:
        payload = yaml.safe_load(fh) or {}
    return ExperimentConfig.from_dict(payload)


def save_config(config: ExperimentConfig, path) -> None:
    with open(path, "w") as fh:
        yaml.safe_dump(config.to_dict(), fh, sort_keys=False)


def build_id() -> str:
    try:
        out = subprocess.run(
            ["git", "describe", "--always", "--dirty"],
            cwd=Path(__file__).resolve().parent,
            capture_output=True, text=True, timeout=5,
        )
        if out.returncode == 0 and out.stdout.strip():
            return out.stdout.strip()
    except (OSError, subprocess.SubprocessError):
        pass
    from . import __version__
    return f"v{__version__}"


def sub_seed(seed: int, stream: int) -> int:
    return int(np.random.SeedSequence([seed, stream]).generate_state(1)[0])


def make_dataset(spec: DataSpec, seed: int):
    """Ground truth and data for one seed; shared by every variant."""
    if spec.generator == "lorenz96":
        data, truth = simulate_lorenz96(spec.d, spec.T, spec.forcing, spec.dt,
                                        rng_seed=sub_seed(seed, 0))
        return truth, data.with_lag(spec.K)
    truth = make_svar_truth(spec.d, spec.K, spec.edge_prob, spec.generator, spec.ba_m,
                            spec.density, spec.spectral_cap, rng_seed=sub_seed(seed, 0))
    noise = NoiseSpec(spec.noise, spec.degrees_of_freedom)
    data = simulate_svar(truth.weights, spec.T, noise, spec.mechanism,
                         rng_seed=sub_seed(seed, 1))
    return truth, data


def make_run_prior(spec: PriorSpec, truth, d: int, seed: int) -> PriorMatrix:
    if spec.path:
        return load_prior(spec.path, d)
    acc = spec.accuracy
    if isinstance(acc, (list, tuple)):
        acc = tuple(acc)
    return make_prior(truth, CorruptionSpec(spec.mode, acc, spec.hub_count),
                      rng_seed=sub_seed(seed, 2))


def resolved_configs(config: ExperimentConfig):
    opt_over, obj_over = VARIANTS[config.variant]
    opt = OptimizerConfig(**{**asdict(config.optimizer), **opt_over})
    obj = ObjectiveConfig(**{**asdict(config.objective), **obj_over})
    return obj, opt


def _acc_label(spec: PriorSpec) -> str:
    if spec.path:
        return "file"
    acc = spec.accuracy
    if isinstance(acc, (list, tuple)):
        return "/".join(f"{a:g}" for a in acc)
    return f"{acc:g}"


def run_single(config: ExperimentConfig, seed: int, fit_path=None):
    """Run the full pipeline for one seed; errors become a failed row."""
    row = {k: "" for k in ROW_FIELDS}
    row.update(
        config_hash=config.config_hash(), seed=seed, build_id=build_id(),
        variant=config.variant, graph=config.data.generator, d=config.data.d,
        T=config.data.T, K=config.data.K,
        prior_mode="none" if config.variant in PRIOR_FREE else config.prior.mode,
        acc="none" if config.variant in PRIOR_FREE else _acc_label(config.prior),
    )
    result = None
    try:
        truth, data = make_dataset(config.data, seed)
        if config.variant in PRIOR_FREE:
            prior = PriorMatrix.uniform(data.d)
        else:
            prior = make_run_prior(config.prior, truth, data.d, seed)
        obj, opt = resolved_configs(config)
        result = fit(data, prior, obj, opt, rng_seed=seed)
        report = evaluate(result, truth, None if config.variant in PRIOR_FREE else prior)
        rho = (rho_cons_diagnostic(prior, data)
               if data.d >= 4 and config.variant not in PRIOR_FREE else float("nan"))
        row.update(report.to_dict())
        row.update(status="ok", rho_cons=rho, outer_iters=result.outer_iters,
                   final_h=result.final_h)
        if fit_path is not None:
            Path(fit_path).write_text(result.dumps())
    except Exception as exc:  # any module error is recorded, never raised
        row.update(status="failed", error=type(exc).__name__)
    return row, result


def _run_cell(args):
    config, seed, fit_path = args
    row, _ = run_single(config, seed, fit_path)
    return row


def _fit_path(config: ExperimentConfig, seed: int):
    if not config.save_fit:
        return None
    out = config.output_dir() / "fits"
    out.mkdir(parents=True, exist_ok=True)
    return out / f"{config.config_hash()}_{config.variant}_s{seed}.json"


def run_cells(configs: Iterable[ExperimentConfig], parallelism: int = 1) -> list:
    cells = [(c, s, _fit_path(c, s)) for c in configs for s in c.seeds]
    if parallelism <= 1 or len(cells) <= 1:
        return [_run_cell(cell) for cell in cells]
    with ProcessPoolExecutor(max_workers=parallelism) as pool:
        return list(pool.map(_run_cell, cells))


def _format(v):
    if isinstance(v, float):
        return repr(v)
    return v


def write_rows(rows: list, path, fieldnames=None) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fieldnames = fieldnames or list(rows[0].keys())
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=fieldnames)
        writer.writeheader()
        for row in rows:
            writer.writerow({k: _format(row.get(k, "")) for k in fieldnames})


def read_rows(path) -> list:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def _mean_std(values):
    arr = np.asarray(values, dtype=float)
    if arr.size == 0:
        return float("nan"), float("nan")
    std = float(arr.std(ddof=1)) if arr.size > 1 else 0.0
    return float(arr.mean()), std


def aggregate(rows: list) -> list:
    """Mean and sample std of each metric per config hash over ok seeds."""
    groups = {}
    for row in rows:
        groups.setdefault(row["config_hash"], []).append(row)
    out = []
    for key in sorted(groups, key=lambda k: [str(groups[k][0][c]) for c in
                                             ("variant", "acc", "T")] + [k]):
        members = groups[key]
        ok = [r for r in members if r["status"] == "ok"]
        first = members[0]
        agg = {c: first[c] for c in ("config_hash", "variant", "graph", "d", "T", "K",
                                     "prior_mode", "acc")}
        agg["n_ok"] = len(ok)
        agg["n_failed"] = len(members) - len(ok)
        for m in METRICS:
            mean, std = _mean_std([float(r[m]) for r in ok])
            agg[f"{m}_mean"] = mean
            agg[f"{m}_std"] = std
        out.append(agg)
    return out


def _crosscheck(raw_path, agg_rows: list) -> None:
    """Recompute the aggregate from the raw CSV as written and compare."""
    again = aggregate(read_rows(raw_path))
    if len(again) != len(agg_rows):
        raise RuntimeError("aggregate cross-check failed: group count differs")
    for a, b in zip(again, agg_rows):
        for m in METRICS:
            for stat in ("mean", "std"):
                x, y = a[f"{m}_{stat}"], b[f"{m}_{stat}"]
                if not (math.isclose(x, y, rel_tol=1e-12, abs_tol=1e-12)
                        or (math.isnan(x) and math.isnan(y))):
                    raise RuntimeError(f"aggregate cross-check failed on {m}_{stat}")


def pivot_table(agg_rows: list, metric: str = "auroc") -> list:
    """Rows ``acc x variant``, one column per ``T`` holding ``mean±std``."""
    Ts = sorted({int(r["T"]) for r in agg_rows})
    keys = []
    cells = {}
    for r in agg_rows:
        key = (str(r["acc"]), r["variant"])
        if key not in keys:
            keys.append(key)
        cells[(key, int(r["T"]))] = f"{r[f'{metric}_mean']:.3f}±{r[f'{metric}_std']:.3f}"
    table = []
    for key in keys:
        row = {"acc": key[0], "variant": key[1]}
        for T in Ts:
            row[f"T={T}"] = cells.get((key, T), "")
        table.append(row)
    return table


def run_grid(configs: list, parallelism: int = 1, output_dir=None, tag: str = "grid"):
    """Run every config over its seeds and persist raw, aggregate and pivot
    CSVs. Returns ``(raw rows, aggregate rows)``."""
    if not configs:
        raise ValueError("need at least one config")
    rows = run_cells(configs, parallelism)
    agg = aggregate(rows)
    if output_dir is None:
        output_dir = configs[0].output_dir()
    output_dir = Path(output_dir)
    raw_path = output_dir / f"{tag}_raw.csv"
    write_rows(rows, raw_path, ROW_FIELDS)
    _crosscheck(raw_path, agg)
    write_rows(agg, output_dir / f"{tag}_aggregate.csv")
    write_rows(pivot_table(agg), output_dir / f"{tag}_table.csv")
    return rows, agg


def expand_grid(base: ExperimentConfig, axes: dict) -> list:
    """Cartesian product over dotted-key axes, e.g.
    ``{"prior.accuracy": [0.4, 0.9], "variant": ["learned_tau", "fixed_tau"]}``."""
    keys = list(axes)
    out = []
    for values in itertools.product(*(axes[k] for k in keys)):
        out.append(base.with_overrides(dict(zip(keys, values))))
    return out


def table1_grid(base: Optional[ExperimentConfig] = None, seeds=range(10)) -> list:
    base = base or ExperimentConfig()
    base = base.with_overrides({"seeds": list(seeds)})
    return expand_grid(base, {
        "prior.accuracy": [0.4, 0.6, 0.9],
        "data.T": [50, 100, 200, 500],
        "variant": ["learned_tau", "fixed_tau"],
    })


def ablation_suite(base: ExperimentConfig, seeds=None, parallelism: int = 1,
                   output_dir=None):
    """Run the eight named ablation variants on shared data and priors.

    Returns ``(raw rows, table)`` where the table has one row per seed plus a
    mean row, with ``<Name>_auroc`` and ``<Name>_f1`` columns.
    """
    if seeds is not None:
        base = base.with_overrides({"seeds": list(seeds)})
    configs = [base.with_overrides({"variant": v}) for v in ABLATIONS.values()]
    rows, _ = run_grid(configs, parallelism, output_dir, tag="ablation")
    by = {(r["variant"], int(r["seed"])): r for r in rows}
    table = []
    for seed in base.seeds:
        line = {"seed": seed}
        for name, var in ABLATIONS.items():
            r = by[(var, seed)]
            ok = r["status"] == "ok"
            line[f"{name}_auroc"] = float(r["auroc"]) if ok else float("nan")
            line[f"{name}_f1"] = float(r["best_f1"]) if ok else float("nan")
        table.append(line)
    mean = {"seed": "mean"}
    for col in table[0]:
        if col != "seed":
            mean[col] = float(np.mean([t[col] for t in table]))
    table.append(mean)
    out_dir = Path(output_dir) if output_dir is not None else base.output_dir()
    write_rows(table, out_dir / "ablation_table.csv")
    return rows, table


def n_failed(rows: list) -> int:
    return sum(1 for r in rows if r["status"] != "ok")
