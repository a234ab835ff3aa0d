#!/usr/bin/env python3
"""Likelihood-equivalence study on the scalar benchmark system.

For a fixed quantized measurement, compares the GMM approximation of
P(y | x) against the exact Gaussian region probability over a grid of
states, for several indicator model sizes. Prints a table and optionally
writes the raw curves to CSV.
"""
import argparse
import sys

import numpy as np

from qgsf import harness, indicator, system
from qgsf.gmm import gaussian_logpdf


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--y", type=float, default=10.0, help="quantized measurement")
    ap.add_argument("--k1", type=int, nargs="+", default=[5, 10, 20])
    ap.add_argument("--samples", type=int, default=1_000_000)
    ap.add_argument("--min-prob", type=float, default=0.01,
                    help="keep states whose exact region probability exceeds this")
    ap.add_argument("--out", default=None, help="optional CSV of the curves")
    args = ap.parse_args()

    cfg = harness.example1_config()
    model, q = cfg.model, cfg.quantizer
    y = np.array([args.y])
    u = np.array([0.0])

    xs = np.linspace(-1.0, 8.0, 2000)
    exact = np.exp([system.exact_region_loglik(y, [x], u, model, q) for x in xs])
    keep = exact >= args.min_prob
    xs, exact = xs[keep], exact[keep]
    print(f"{xs.size} states with exact P(y|x) >= {args.min_prob}")

    curves = {}
    for k1 in args.k1:
        base = indicator.train_unit_gmm(args.samples, k1, seed=20)
        g = indicator.indicator_for_output(y, q, base, alpha=0.0)
        approx = np.array([
            sum(w * np.exp(gaussian_logpdf(model.C @ [x] + model.D @ u, m, cv + model.R))
                for w, m, cv in zip(g.weights, g.means, g.covs))
            for x in xs
        ])
        rel = np.abs(approx - exact) / exact
        curves[k1] = approx
        print(f"K1={k1:>3}: max rel err {rel.max():.4f}   mean rel err {rel.mean():.4f}")

    if args.out:
        header = "x,exact," + ",".join(f"k1_{k}" for k in args.k1)
        data = np.column_stack([xs, exact] + [curves[k] for k in args.k1])
        np.savetxt(args.out, data, delimiter=",", header=header, comments="")
        print(f"wrote {args.out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
