"""Command-line experiment driver.

Subcommands: train-indicator, simulate, run, compare-pdfs, report.
Exit codes: 0 success, 2 configuration error, 3 every run degenerated.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .exceptions import ConfigError, ContractError, ModelFileError
from .harness import (
    ExperimentConfig,
    MCSummary,
    compare_pdfs,
    emit_outputs,
    load_config,
    resolve_unit_gmm,
    run_experiment,
)
from .indicator import save_model, train_unit_gmm
from .system import simulate, trajectory_to_csv

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DEGENERATE = 3


def _cmd_train_indicator(args) -> int:
    model = train_unit_gmm(args.samples, args.components, args.seed,
                           max_iter=args.max_iter, tol=args.tol)
    save_model(model, args.out)
    print(
        f"trained {model.k1}-component model on {model.n_samples} samples "
        f"in {model.em_iterations} EM iterations "
        f"(per-sample loglik {model.final_loglik:.6f}) -> {args.out}"
    )
    return EXIT_OK


def _cmd_simulate(args) -> int:
    cfg = load_config(args.config)
    horizon = args.horizon if args.horizon is not None else cfg.horizon
    seed = args.seed if args.seed is not None else cfg.master_seed
    traj = simulate(cfg.model, cfg.quantizer, cfg.inputs, horizon, seed)
    trajectory_to_csv(traj, args.out)
    print(f"wrote {horizon}-step trajectory to {args.out}")
    return EXIT_OK


def _apply_quick(cfg: ExperimentConfig) -> ExperimentConfig:
    from dataclasses import replace

    return replace(cfg, runs=20, horizon=50)


def _cmd_run(args) -> int:
    cfg = load_config(args.config)
    if args.quick:
        cfg = _apply_quick(cfg)
    summary = run_experiment(cfg)
    written = emit_outputs(summary, args.outdir)
    for path in written:
        print(f"wrote {path}")
    n_failed = len(summary.failed_runs())
    total = len(summary.records) * len(cfg.filters)
    if n_failed:
        print(f"{n_failed}/{total} filter runs degenerated", file=sys.stderr)
    if total > 0 and n_failed == total:
        return EXIT_DEGENERATE
    return EXIT_OK


def _cmd_compare_pdfs(args) -> int:
    cfg = load_config(args.config)
    steps = None
    if args.steps:
        steps = tuple(int(s) for s in args.steps.split(","))
    unit = resolve_unit_gmm(cfg)
    comparisons = compare_pdfs(cfg, steps, unit_gmm=unit)
    summary = MCSummary(config=cfg.echo(), records=[], pdf_comparisons=comparisons)
    written = emit_outputs(summary, args.outdir)
    for comp in comparisons:
        print(f"step {comp.step}: TV(GSF, GT)={comp.tv_gsf:.4f} "
              f"TV(QKF, GT)={comp.tv_qkf:.4f}")
    for path in written:
        print(f"wrote {path}")
    return EXIT_OK


def _cmd_report(args) -> int:
    try:
        data = json.loads(Path(args.summary).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read summary {args.summary}: {exc}") from exc
    print(f"{'filter':<8}{'runs':>6}{'median MSE':>14}{'q1':>12}{'q3':>12}"
          f"{'median sec':>14}")
    for name, info in data.get("filters", {}).items():
        mse = info["mse_total"]
        sec = info["seconds"]

        def fmt(v):
            return f"{v:.4f}" if v is not None else "-"

        print(f"{name:<8}{info['runs_succeeded']:>6}{fmt(mse['median']):>14}"
              f"{fmt(mse['q1']):>12}{fmt(mse['q3']):>12}{fmt(sec['median']):>14}")
    for comp in data.get("pdf_comparisons", []):
        print(f"pdf step {comp['step']}: TV(GSF)={comp['tv_gsf']:.4f} "
              f"TV(QKF)={comp['tv_qkf']:.4f}")
    failed = data.get("failed_runs", [])
    if failed:
        print(f"{len(failed)} degenerate filter runs")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="qgsf",
        description="Gaussian sum filtering experiments for quantized-output systems",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train-indicator", help="train and save the unit-interval GMM")
    p.add_argument("--samples", type=int, default=1_000_000)
    p.add_argument("--components", type=int, default=20)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--max-iter", type=int, default=500)
    p.add_argument("--tol", type=float, default=1e-7)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_train_indicator)

    p = sub.add_parser("simulate", help="simulate one trajectory to CSV")
    p.add_argument("--config", required=True)
    p.add_argument("--horizon", type=int, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_simulate)

    p = sub.add_parser("run", help="full Monte Carlo experiment from a config file")
    p.add_argument("--config", required=True)
    p.add_argument("--outdir", required=True)
    p.add_argument("--quick", action="store_true",
                   help="reduced CI configuration (20 runs, horizon 50)")
    p.set_defaults(func=_cmd_run)

    p = sub.add_parser("compare-pdfs", help="posterior PDFs vs particle ground truth")
    p.add_argument("--config", required=True)
    p.add_argument("--outdir", required=True)
    p.add_argument("--steps", default=None, help="comma-separated time steps")
    p.set_defaults(func=_cmd_compare_pdfs)

    p = sub.add_parser("report", help="print a table from summary.json")
    p.add_argument("--summary", required=True)
    p.set_defaults(func=_cmd_report)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, ModelFileError, ContractError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
