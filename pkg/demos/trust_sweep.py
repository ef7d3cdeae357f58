"""Learned vs fixed (tau=1) trust across prior accuracies.

With a poor prior the learned temperature backs away from it; with a good
prior both settings agree.
"""
import sys

from svartrust.harness import ExperimentConfig, expand_grid, run_grid

seeds = list(range(int(sys.argv[1]) if len(sys.argv) > 1 else 3))
base = ExperimentConfig(seeds=seeds)
configs = expand_grid(base, {"prior.accuracy": [0.4, 0.6, 0.9],
                             "variant": ["learned_tau", "fixed_tau"]})
_, agg = run_grid(configs, output_dir="results/trust_sweep", tag="sweep")

print(f"{'acc':>5} {'variant':>12} {'AUROC':>14} {'mean tau':>9}")
for row in agg:
    print(f"{row['acc']:>5} {row['variant']:>12} "
          f"{row['auroc_mean']:.3f} ± {row['auroc_std']:.3f} {row['tau_mean_mean']:>9.3f}")
