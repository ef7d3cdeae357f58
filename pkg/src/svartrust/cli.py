"""Command-line entry points: generate, prior, fit, grid, ablate, diagnose.

Every verb accepts ``--config FILE`` (YAML or JSON) and flag overrides; the
generic ``--set section.key=value`` reaches any config field.
"""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np
import yaml

from .datagen import load_timeseries_csv, load_truth_json, save_timeseries_csv, save_truth_json
from .evaluation import evaluate, rho_cons_diagnostic
from .harness import (
    ABLATIONS,
    VARIANTS,
    ExperimentConfig,
    ablation_suite,
    expand_grid,
    load_config,
    make_dataset,
    make_run_prior,
    n_failed,
    resolved_configs,
    run_grid,
    run_single,
)
from .optimizer import fit
from .prior import PriorMatrix, load_prior, save_prior

RHO_CONS_THRESHOLD = 0.20

# flag -> dotted config key
FLAG_KEYS = {
    "generator": "data.generator",
    "d": "data.d",
    "T": "data.T",
    "K": "data.K",
    "noise": "data.noise",
    "mechanism": "data.mechanism",
    "mode": "prior.mode",
    "acc": "prior.accuracy",
    "hub_count": "prior.hub_count",
    "prior_path": "prior.path",
    "lambda1": "objective.lambda1",
    "lambda2": "objective.lambda2",
    "outer_iters": "optimizer.outer_iters",
    "inner_iters": "optimizer.inner_iters",
    "variant": "variant",
    "seeds": "seeds",
    "output": "output",
}


def _parse_value(text: str):
    return yaml.safe_load(text)


def _add_config_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="YAML/JSON experiment config")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                   help="override any config field by dotted key")
    p.add_argument("--generator", choices=["er", "ba", "lorenz96"])
    p.add_argument("--d", type=int)
    p.add_argument("--T", type=int)
    p.add_argument("--K", type=int)
    p.add_argument("--noise")
    p.add_argument("--mechanism")
    p.add_argument("--mode", help="prior corruption mode")
    p.add_argument("--acc", type=float, nargs="+", help="accuracy (two values for hub_peripheral)")
    p.add_argument("--hub-count", dest="hub_count", type=int)
    p.add_argument("--prior-path", dest="prior_path")
    p.add_argument("--lambda1", type=float)
    p.add_argument("--lambda2", type=float)
    p.add_argument("--outer-iters", dest="outer_iters", type=int)
    p.add_argument("--inner-iters", dest="inner_iters", type=int)
    p.add_argument("--variant", choices=sorted(VARIANTS))
    p.add_argument("--seeds", type=int, nargs="+")
    p.add_argument("--output", help="output directory")


def config_from_args(args) -> ExperimentConfig:
    config = load_config(args.config) if args.config else ExperimentConfig()
    overrides = {}
    for flag, key in FLAG_KEYS.items():
        value = getattr(args, flag, None)
        if value is None:
            continue
        if flag == "acc":
            value = value[0] if len(value) == 1 else list(value)
        overrides[key] = value
    for item in args.set:
        key, _, text = item.partition("=")
        overrides[key] = _parse_value(text)
    return config.with_overrides(overrides) if overrides else config


def cmd_generate(args) -> int:
    config = config_from_args(args)
    out = Path(args.out_dir or config.output_dir())
    out.mkdir(parents=True, exist_ok=True)
    for seed in config.seeds:
        truth, data = make_dataset(config.data, seed)
        save_timeseries_csv(data, out / f"data_s{seed}.csv")
        save_truth_json(truth, out / f"truth_s{seed}.json")
        print(f"seed {seed}: wrote {out / f'data_s{seed}.csv'} and truth")
    return 0


def cmd_prior(args) -> int:
    config = config_from_args(args)
    truth = load_truth_json(args.truth)
    seed = config.seeds[0]
    prior = make_run_prior(config.prior, truth, truth.d, seed)
    save_prior(prior, args.out)
    print(f"wrote prior ({prior.provenance}) to {args.out}")
    return 0


def cmd_fit(args) -> int:
    config = config_from_args(args)
    if args.data:
        data = load_timeseries_csv(args.data, config.data.K)
        if config.variant == "no_prior" or not args.prior:
            prior = PriorMatrix.uniform(data.d)
        else:
            prior = load_prior(args.prior, data.d)
        obj, opt = resolved_configs(config)
        result = fit(data, prior, obj, opt, rng_seed=config.seeds[0])
        payload = {"tau_mean": result.tau_mean, "outer_iters": result.outer_iters,
                   "final_h": result.final_h}
        if args.truth:
            payload.update(evaluate(result, load_truth_json(args.truth), prior).to_dict())
        if args.out:
            Path(args.out).write_text(result.dumps())
        print(json.dumps(payload, indent=2))
        return 0
    status = 0
    for seed in config.seeds:
        row, result = run_single(config, seed, args.out)
        print(json.dumps(row))
        status |= row["status"] != "ok"
    return int(status)


def _axes(items):
    axes = {}
    for item in items:
        key, _, text = item.partition("=")
        axes[key] = [_parse_value(v) for v in text.split(",")]
    return axes


def cmd_grid(args) -> int:
    config = config_from_args(args)
    configs = expand_grid(config, _axes(args.axis)) if args.axis else [config]
    rows, agg = run_grid(configs, args.parallel)
    for r in agg:
        print(f"{r['variant']:>12} acc={r['acc']:>8} T={r['T']:>4} "
              f"auroc={r['auroc_mean']:.3f}±{r['auroc_std']:.3f} n={r['n_ok']}"
              f" failed={r['n_failed']}")
    return 0 if n_failed(rows) == 0 else 1


def cmd_ablate(args) -> int:
    config = config_from_args(args)
    rows, table = ablation_suite(config, parallelism=args.parallel)
    mean = table[-1]
    for name in ABLATIONS:
        print(f"{name:>9}: auroc={mean[f'{name}_auroc']:.3f} f1={mean[f'{name}_f1']:.3f}")
    return 0 if n_failed(rows) == 0 else 1


def cmd_diagnose(args) -> int:
    data = load_timeseries_csv(args.data, 0)
    prior = load_prior(args.prior, data.d)
    rho = rho_cons_diagnostic(prior, data)
    use_mlp = rho >= RHO_CONS_THRESHOLD
    print(json.dumps({"rho_cons": rho, "threshold": RHO_CONS_THRESHOLD,
                      "recommend_trust_mlp": bool(use_mlp)}))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="svartrust", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="verb", required=True)

    p = sub.add_parser("generate", help="simulate datasets and ground truth")
    _add_config_flags(p)
    p.add_argument("--out-dir")
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("prior", help="build a controlled-accuracy prior for a truth file")
    _add_config_flags(p)
    p.add_argument("--truth", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_prior)

    p = sub.add_parser("fit", help="fit one dataset, or run the configured pipeline")
    _add_config_flags(p)
    p.add_argument("--data", help="CSV dataset; omit to simulate from the config")
    p.add_argument("--prior", help="prior CSV/JSON")
    p.add_argument("--truth", help="truth JSON for scoring")
    p.add_argument("--out", help="write the FitResult JSON here")
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("grid", help="run a config over a grid of overrides and seeds")
    _add_config_flags(p)
    p.add_argument("--axis", action="append", default=[], metavar="KEY=V1,V2",
                   help="grid axis over a dotted config key")
    p.add_argument("--parallel", type=int, default=1)
    p.set_defaults(func=cmd_grid)

    p = sub.add_parser("ablate", help="run the eight ablation variants")
    _add_config_flags(p)
    p.add_argument("--parallel", type=int, default=1)
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("diagnose", help="neighbourhood-consistency check of a prior")
    p.add_argument("--data", required=True)
    p.add_argument("--prior", required=True)
    p.set_defaults(func=cmd_diagnose)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
