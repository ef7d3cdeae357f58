"""Run every ablation on shared seeds and print paired AUROC differences from Full."""
import sys

from svartrust.harness import ABLATIONS, ExperimentConfig, ablation_suite

seeds = list(range(int(sys.argv[1]) if len(sys.argv) > 1 else 3))
_, table = ablation_suite(ExperimentConfig(seeds=seeds), output_dir="results/ablation")
mean = table[-1]
full = mean["Full_auroc"]
for name in ABLATIONS:
    print(f"{name:>9}  AUROC {mean[f'{name}_auroc']:.3f}  (Full {full - mean[f'{name}_auroc']:+.3f})")
