"""Command-line harness.

Subcommands:
  identify   train the network offline from a config and write a checkpoint
  run        execute a single closed-loop scenario
  compare    run the three controllers on one scenario (comparison table)
  gradcheck  audit analytic Jacobians against central finite differences

Exit codes: 0 success, 2 validation failure, 3 aborted run.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys

import numpy as np

from . import harness, offline
from .gradcheck import gradient_audit
from .network import TgrbfNet

EXIT_OK, EXIT_VALIDATION, EXIT_ABORTED = 0, 2, 3


def _load_cfg(path: str) -> harness.ScenarioConfig:
    if not os.path.exists(path):
        raise FileNotFoundError(f"config file not found: {path}")
    return harness.load_config(path)


def cmd_identify(args) -> int:
    with open(args.config) as fh:
        doc = json.load(fh)
    n = int(doc.get("n_samples", 1000))
    epochs = int(doc.get("epochs", 200))
    m = int(doc.get("m", 6))
    p = int(doc.get("p", 6))
    seed = args.seed if args.seed is not None else int(doc.get("seed", 0))
    os.makedirs(args.out, exist_ok=True)

    data = offline.generate_dataset(n, seed=seed)
    net0 = offline.initialize_network(data, m=m, p=p, seed=seed)
    net, report = offline.train_offline(net0, data, epochs=epochs, seed=seed)

    ckpt = os.path.join(args.out, "network.json")
    net.save(ckpt)
    offline.dataset_to_csv(data, os.path.join(args.out, "dataset.csv"))
    with open(os.path.join(args.out, "fit_report.csv"), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["metric", "value"])
        for name in ("mse", "rmse", "mae", "r2"):
            w.writerow([name, f"{getattr(report, name):.17g}"])
        for i, loss in enumerate(report.loss_curve):
            w.writerow([f"epoch_{i}_loss", f"{loss:.17g}"])
    print(f"checkpoint written to {ckpt}")
    print(f"holdout mse={report.mse:.6g} rmse={report.rmse:.6g} "
          f"mae={report.mae:.6g} r2={report.r2:.6g}")
    return EXIT_OK


def cmd_run(args) -> int:
    cfg = _load_cfg(args.config)
    if args.seed is not None:
        cfg.seed = args.seed
    if args.controller is not None:
        cfg.controller = args.controller
    try:
        trace, metrics = harness.run_scenario(cfg)
    except harness.RunAborted as exc:
        print(f"run aborted: {exc}", file=sys.stderr)
        return EXIT_ABORTED
    os.makedirs(args.out, exist_ok=True)
    harness.export_trace_csv(trace, os.path.join(args.out, "trace.csv"))
    harness.export_metrics_csv(metrics, os.path.join(args.out, "metrics.csv"))
    harness.export_events_csv(trace.events,
                              os.path.join(args.out, "update_events.csv"))
    print(f"iae={metrics.iae:.6g} ise={metrics.ise:.6g} "
          f"itae={metrics.itae:.6g} overshoot={metrics.overshoot_pct:.6g}% "
          f"settling={metrics.settling_time_s:.6g}s settled={metrics.settled}")
    return EXIT_OK


def cmd_compare(args) -> int:
    cfg = _load_cfg(args.config)
    if args.seed is not None:
        cfg.seed = args.seed
    results = harness.compare_controllers(cfg)
    os.makedirs(args.out, exist_ok=True)
    table_path = os.path.join(args.out, "comparison.csv")
    with open(table_path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["controller", "iae", "ise", "itae", "overshoot_pct",
                    "settling_time_s", "settled", "aborted"])
        for name, (trace, metrics) in results.items():
            if trace is None:
                w.writerow([name] + ["nan"] * 6 + [1])
                continue
            harness.export_trace_csv(
                trace, os.path.join(args.out, f"trace_{name}.csv"))
            w.writerow([name, f"{metrics.iae:.17g}", f"{metrics.ise:.17g}",
                        f"{metrics.itae:.17g}",
                        f"{metrics.overshoot_pct:.17g}",
                        f"{metrics.settling_time_s:.17g}",
                        int(metrics.settled), 0])
    print(f"comparison table written to {table_path}")
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    err = gradient_audit(n_pairs=args.pairs, seed=args.seed or 0)
    print(f"max relative error over {args.pairs} pairs: {err:.3e}")
    return EXIT_OK if err < 1e-5 else 1


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="tgrbf", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    for name, fn, needs_cfg in [("identify", cmd_identify, True),
                                ("run", cmd_run, True),
                                ("compare", cmd_compare, True)]:
        sp = sub.add_parser(name)
        sp.add_argument("--config", required=needs_cfg)
        sp.add_argument("--seed", type=int, default=None)
        sp.add_argument("--out", default="out")
        sp.set_defaults(fn=fn)
    sub.choices["run"].add_argument("--controller", default=None,
                                    choices=harness.CONTROLLER_TYPES)

    gp = sub.add_parser("gradcheck")
    gp.add_argument("--seed", type=int, default=0)
    gp.add_argument("--pairs", type=int, default=200)
    gp.set_defaults(fn=cmd_gradcheck)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_VALIDATION if exc.code not in (0, None) else 0
    try:
        return args.fn(args)
    except (FileNotFoundError, ValueError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION


if __name__ == "__main__":
    sys.exit(main())
