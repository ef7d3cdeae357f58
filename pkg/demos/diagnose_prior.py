"""Neighbourhood-consistency check: should trust propagation be switched on?

Compares an iid-corrupted prior on an ER graph with a hub-peripheral prior on
a BA graph and fits both trust variants on the latter.
"""
from svartrust.evaluation import rho_cons_diagnostic
from svartrust.cli import RHO_CONS_THRESHOLD
from svartrust.harness import ExperimentConfig, make_dataset, make_run_prior, run_single

cells = {
    "iid / ER": {"prior.accuracy": 0.6},
    "hub-peripheral / BA": {"data.generator": "ba", "prior.mode": "hub_peripheral",
                            "prior.accuracy": [0.95, 0.2]},
}
for label, over in cells.items():
    config = ExperimentConfig().with_overrides(over)
    truth, data = make_dataset(config.data, 0)
    rho = rho_cons_diagnostic(make_run_prior(config.prior, truth, data.d, 0), data)
    print(f"{label:>20}: rho_cons {rho:+.3f} -> "
          f"{'trust_mlp' if rho >= RHO_CONS_THRESHOLD else 'grouped'}")

hub = ExperimentConfig().with_overrides(cells["hub-peripheral / BA"])
for variant in ("learned_tau", "trust_mlp"):
    row, _ = run_single(hub.with_overrides({"variant": variant}), 0)
    print(f"{variant:>12}: best-F1 {float(row['best_f1']):.3f}")
