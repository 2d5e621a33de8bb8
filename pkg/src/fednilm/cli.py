"""Command-line experiment driver.

Subcommands: synth, run, report, export-windows, grad-check.  Exit codes:
0 success, 1 validation error (bad config or usage), 2 runtime failure.
Flag precedence: flags > config file > defaults.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from . import experiment, model_core
from .experiment import ConfigError, ExperimentConfig, ReportError
from .rng import derive_seed

EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_RUNTIME = 2


def _parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fednilm",
        description="Deterministic desk-scale federated NILM experiments")
    sub = parser.add_subparsers(dest="command", required=True)

    synth = sub.add_parser("synth", help="write synthetic household CSVs")
    synth.add_argument("--config", required=True)
    synth.add_argument("--out", default=None, help="output directory")

    run = sub.add_parser("run", help="train the requested arms over all cells")
    run.add_argument("--config", required=True)
    run.add_argument("--arm", choices=["federated", "central", "local", "all"],
                     default="all")
    run.add_argument("--seed", type=int, default=None,
                     help="restrict to one seed from the config list")
    run.add_argument("--out", default=None)
    run.add_argument("--force", action="store_true",
                     help="recompute cells even if already completed")
    run.add_argument("--dry-run", action="store_true",
                     help="validate the config and print the cell matrix")

    report = sub.add_parser("report", help="emit comparison and curve CSVs")
    report.add_argument("--config", default=None)
    report.add_argument("--out", required=True, help="run output directory")

    export = sub.add_parser("export-windows", help="dump training windows to CSV")
    export.add_argument("--config", required=True)
    export.add_argument("--out", default=None)

    grad = sub.add_parser("grad-check",
                          help="verify analytic gradients against finite differences")
    grad.add_argument("--seed", type=int, default=0)
    grad.add_argument("--trials", type=int, default=20)
    grad.add_argument("--network", choices=["desk", "tiny"], default="desk")
    return parser


def _load_config(args) -> ExperimentConfig:
    overrides = {"out_dir": getattr(args, "out", None)}
    return ExperimentConfig.from_file(args.config, overrides)


def cmd_synth(args) -> int:
    config = _load_config(args)
    written = experiment.synth_households(config, args.out or config.out_dir)
    thresholds = config.thresholds()
    for path, series in written:
        fractions = experiment.on_fractions(series, thresholds)
        pretty = ", ".join(f"{k}={v:.3f}" for k, v in fractions.items())
        print(f"{path}: {len(series)} samples, on-fractions: {pretty}")
    return EXIT_OK


def cmd_run(args) -> int:
    config = _load_config(args)
    arms = list(experiment.ARMS) if args.arm == "all" else [args.arm]
    seeds = [s for s in config.seeds if args.seed is None or s == args.seed]
    if not seeds:
        raise ConfigError(f"seed {args.seed} is not in the config seed list")
    if args.dry_run:
        print(f"config hash {config.config_hash()}, arms: {', '.join(arms)}")
        for appliance in config.appliances:
            for k in config.runner_counts:
                for seed in seeds:
                    print(f"  cell {appliance} K={k} seed={seed}")
        return EXIT_OK
    outcome = experiment.run_experiment(config, arms, out_dir=args.out,
                                        force=args.force, seed_filter=args.seed)
    done = sum(1 for r in outcome["results"].values() if not r.get("skipped"))
    skipped = sum(1 for r in outcome["results"].values() if r.get("skipped"))
    print(f"completed {done} cells, skipped {skipped}, "
          f"failed {len(outcome['failures'])}")
    return EXIT_RUNTIME if outcome["failures"] else EXIT_OK


def cmd_report(args) -> int:
    config = ExperimentConfig.from_file(args.config) if args.config else None
    written = experiment.write_report(config, args.out)
    print(f"wrote {written['comparison']}")
    for path in written["curves"]:
        print(f"wrote {path}")
    return EXIT_OK


def cmd_export_windows(args) -> int:
    config = _load_config(args)
    for path in experiment.export_windows(config, args.out or config.out_dir):
        print(f"wrote {path}")
    return EXIT_OK


def cmd_grad_check(args) -> int:
    if args.network == "desk":
        spec = model_core.desk_spec()
    else:
        spec = model_core.NetworkSpec(31, (model_core.Conv1D(2, 5, "relu"),
                                           model_core.Dense(8, "relu"),
                                           model_core.Dense(1, "linear")))
    worst = 0.0
    for trial in range(args.trials):
        rng = np.random.default_rng(derive_seed("grad-check", args.seed, trial))
        params = model_core.init_params(spec, derive_seed(args.seed, trial))
        windows = rng.normal(0.0, 1.0, (4, spec.input_window))
        targets = rng.integers(0, 2, 4).astype(float)
        _, grad = model_core.backward(spec, params, windows, targets)
        fd = model_core.fd_gradient(spec, params, windows, targets)
        # denominator floored at 1e-6: smaller components sit inside the
        # roundoff noise of central differences at h=1e-5
        rel = np.abs(grad - fd) / np.maximum(np.maximum(np.abs(grad), np.abs(fd)),
                                             1e-6)
        worst = max(worst, float(rel.max()))
        print(f"trial {trial}: max relative error {rel.max():.3e}")
    print(f"worst over {args.trials} trials: {worst:.3e} "
          f"({'OK' if worst < 1e-4 else 'FAIL'})")
    return EXIT_OK if worst < 1e-4 else EXIT_RUNTIME


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    handlers = {
        "synth": cmd_synth,
        "run": cmd_run,
        "report": cmd_report,
        "export-windows": cmd_export_windows,
        "grad-check": cmd_grad_check,
    }
    try:
        return handlers[args.command](args)
    except (ConfigError, ReportError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except Exception as exc:
        print(f"runtime failure: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
