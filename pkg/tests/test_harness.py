import time
from dataclasses import asdict

import numpy as np
import pytest

from svartrust import cli
from svartrust.calibration import TAU_MIN
from svartrust.evaluation import evaluate
from svartrust.objective import ObjectiveConfig
from svartrust.optimizer import OptimizerConfig, fit
from svartrust.harness import (
    ABLATIONS,
    ExperimentConfig,
    aggregate,
    expand_grid,
    load_config,
    make_dataset,
    make_run_prior,
    read_rows,
    run_grid,
    run_single,
    save_config,
    table1_grid,
    write_rows,
    ROW_FIELDS,
)

TINY = {
    "data.d": 5, "data.T": 80, "data.edge_prob": 0.3,
    "optimizer.outer_iters": 4, "optimizer.inner_iters": 60,
}


def tiny(**extra):
    return ExperimentConfig().with_overrides({**TINY, **extra})


def test_run_single_deterministic():
    config = tiny()
    a, _ = run_single(config, 3)
    b, _ = run_single(config, 3)
    assert a == b
    assert a["status"] == "ok" and a["config_hash"] == config.config_hash()
    assert a["build_id"]


def test_seed_list_and_output_do_not_change_hash(tmp_path):
    a = tiny()
    b = a.with_overrides({"seeds": [5, 6], "output": str(tmp_path)})
    assert a.config_hash() == b.config_hash()
    assert a.config_hash() != a.with_overrides({"data.T": 81}).config_hash()


def test_prior_free_variant_ignores_prior(tmp_path):
    a = tiny(variant="no_prior")
    b = a.with_overrides({"prior.accuracy": 0.9, "prior.path": str(tmp_path / "missing.csv")})
    assert a.config_hash() == b.config_hash()
    row_a, _ = run_single(a, 0)
    row_b, _ = run_single(b, 0)
    assert row_b["status"] == "ok"
    assert {k: str(v) for k, v in row_a.items()} == {k: str(v) for k, v in row_b.items()}
    assert row_a["prior_mode"] == "none" and row_a["acc"] == "none"


def test_failed_run_becomes_row(tmp_path):
    config = tiny(**{"prior.path": str(tmp_path / "missing.csv")})
    row, result = run_single(config, 0)
    assert row["status"] == "failed" and row["error"] == "FileNotFoundError"
    assert result is None


def test_table1_grid_size():
    configs = table1_grid()
    assert len(configs) == 24
    assert sum(len(c.seeds) for c in configs) == 240
    assert len({c.config_hash() for c in configs}) == 24


def test_single_cell_grid_matches_run_single(tmp_path):
    config = tiny(seeds=[2])
    rows, agg = run_grid([config], output_dir=tmp_path)
    row, _ = run_single(config, 2)
    assert rows == [row]
    assert agg[0]["auroc_mean"] == row["auroc"] and agg[0]["auroc_std"] == 0.0


def test_parallel_matches_serial(tmp_path):
    configs = expand_grid(tiny(seeds=[0, 1]), {"variant": ["learned_tau", "fixed_tau"]})
    _, serial = run_grid(configs, 1, tmp_path / "s")
    _, parallel = run_grid(configs, 2, tmp_path / "p")
    assert serial == parallel
    assert (tmp_path / "s" / "grid_table.csv").read_text() == (tmp_path / "p" / "grid_table.csv").read_text()


def test_aggregate_recomputes_from_raw(tmp_path):
    rows = []
    for seed, value in enumerate([0.5, 0.7, 0.9]):
        row = {k: "" for k in ROW_FIELDS}
        row.update(config_hash="h", seed=seed, variant="v", graph="er", d=5, T=50, K=1,
                   prior_mode="random", acc="0.6", status="ok", auroc=value, best_f1=value,
                   shd=seed, tau_mean=0.1 * seed)
        rows.append(row)
    rows.append({**rows[0], "seed": 9, "status": "failed", "auroc": ""})
    write_rows(rows, tmp_path / "raw.csv", ROW_FIELDS)
    agg = aggregate(read_rows(tmp_path / "raw.csv"))
    assert agg[0]["auroc_mean"] == pytest.approx(0.7)
    assert agg[0]["auroc_std"] == pytest.approx(0.2)
    assert agg[0]["n_ok"] == 3 and agg[0]["n_failed"] == 1


def test_config_yaml_round_trip(tmp_path):
    config = tiny(**{"prior.mode": "hub_peripheral", "prior.accuracy": [0.95, 0.2],
                     "data.generator": "ba", "variant": "trust_mlp"})
    save_config(config, tmp_path / "c.yaml")
    back = load_config(tmp_path / "c.yaml")
    assert back.to_dict() == config.to_dict()
    assert back.config_hash() == config.config_hash()


def test_unknown_override_rejected():
    with pytest.raises(ValueError):
        tiny(**{"data.bogus": 1})


def test_ablation_floor_matches_explicit_fixed_floor():
    config = tiny(**{"prior.accuracy": 0.6, "variant": ABLATIONS["NoPrior"]})
    row, result = run_single(config, 1)
    truth, data = make_dataset(config.data, 1)
    prior = make_run_prior(config.prior, truth, data.d, 1)
    opt = OptimizerConfig(**{**asdict(config.optimizer), "trust_variant": "fixed",
                             "tau_const": TAU_MIN, "middle_iters": 0})
    manual = fit(data, prior, ObjectiveConfig(**asdict(config.objective)), opt, rng_seed=1)
    np.testing.assert_allclose(result.weights_raw, manual.weights_raw, atol=1e-8, rtol=0)
    assert abs(float(row["auroc"]) - evaluate(manual, truth, prior).auroc) <= 1e-8
    assert np.allclose(result.tau_realized[~np.eye(5, dtype=bool)], TAU_MIN)


def test_full_size_run_is_fast():
    config = ExperimentConfig().with_overrides({"prior.accuracy": 0.9})
    start = time.perf_counter()
    row, _ = run_single(config, 0)
    assert row["status"] == "ok"
    assert time.perf_counter() - start < 60


def test_cli_verbs(tmp_path, capsys):
    flags = ["--d", "5", "--T", "60", "--outer-iters", "3", "--inner-iters", "40"]
    assert cli.main(["generate", *flags, "--seeds", "0", "--out-dir", str(tmp_path)]) == 0
    data, truth = tmp_path / "data_s0.csv", tmp_path / "truth_s0.json"
    assert cli.main(["prior", *flags, "--truth", str(truth), "--out", str(tmp_path / "p.csv")]) == 0
    assert cli.main(["fit", *flags, "--data", str(data), "--prior", str(tmp_path / "p.csv"),
                     "--truth", str(truth), "--out", str(tmp_path / "fit.json")]) == 0
    assert (tmp_path / "fit.json").exists()
    assert cli.main(["diagnose", "--data", str(data), "--prior", str(tmp_path / "p.csv")]) == 0
    out = tmp_path / "grid"
    assert cli.main(["grid", *flags, "--seeds", "0", "1", "--output", str(out),
                     "--axis", "variant=learned_tau,fixed_tau"]) == 0
    assert len(read_rows(out / "grid_raw.csv")) == 4
    assert cli.main(["grid", *flags, "--output", str(out),
                     "--set", f"prior.path={tmp_path / 'nope.csv'}"]) == 1


def test_cli_ablate(tmp_path):
    flags = ["--d", "5", "--T", "60", "--outer-iters", "2", "--inner-iters", "30"]
    assert cli.main(["ablate", *flags, "--seeds", "0", "--output", str(tmp_path)]) == 0
    table = read_rows(tmp_path / "ablation_table.csv")
    assert table[-1]["seed"] == "mean"
    assert {f"{n}_auroc" for n in ABLATIONS} <= set(table[0])
    assert np.isfinite(float(table[0]["Full_auroc"]))
