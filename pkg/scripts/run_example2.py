#!/usr/bin/env python3
"""Full Monte Carlo study on the two-state, two-output benchmark system.

Same outputs as run_example1.py; the posterior-PDF comparison uses a 60x60
histogram over the particle cloud.
"""
import argparse
import sys

from qgsf import harness


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--outdir", default="results/example2")
    ap.add_argument("--runs", type=int, default=100)
    ap.add_argument("--horizon", type=int, default=100)
    ap.add_argument("--master-seed", type=int, default=42)
    ap.add_argument("--quick", action="store_true",
                    help="20 runs, horizon 50, smaller indicator training set")
    args = ap.parse_args()

    cfg = harness.example2_config(runs=args.runs, horizon=args.horizon,
                                  master_seed=args.master_seed)
    if args.quick:
        cfg = harness.example2_config(
            runs=20, horizon=50, master_seed=args.master_seed)
        cfg.gsf.train_samples = 100_000

    print(f"training indicator base model (K1={cfg.gsf.k1}, "
          f"{cfg.gsf.train_samples} samples)...")
    base = harness.resolve_unit_gmm(cfg)
    print(f"running {cfg.runs} x {cfg.horizon}-step Monte Carlo...")
    summary = harness.run_experiment(cfg, unit_gmm=base)
    steps = tuple(s for s in cfg.pdf_steps if s <= cfg.horizon)
    print(f"comparing posterior PDFs at steps {steps}...")
    summary.pdf_comparisons = harness.compare_pdfs(cfg, steps, unit_gmm=base)
    for path in harness.emit_outputs(summary, args.outdir):
        print(f"wrote {path}")
    for name, info in harness.summarize(summary)["filters"].items():
        print(f"{name}: median MSE {info['mse_total']['median']:.4f}, "
              f"median {info['seconds']['median']:.3f}s/run")
    return 0


if __name__ == "__main__":
    sys.exit(main())
