"""Comparison arms: centrally-trained and independent locally-trained models.

Both baselines consume the same compute budget as the federated arm
(rounds x local_epochs passes over their data) and are scored on the shared
test windows, so the comparison isolates the effect of federation itself.
Training reuses the federation client loop round by round, which makes a K=1
federated run and a central run on the same data bit-identical.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

from . import metrics, model_core
from .data import WindowDataset
from .federation import FLConfig, RunnerState, client_update, local_testing
from .model_core import NetworkSpec, ParameterVector


def _train_standalone(runner: RunnerState, spec: NetworkSpec, config: FLConfig,
                      init: ParameterVector | None = None):
    """rounds x local_epochs of solo training with federated-identical seeding."""
    w = init if init is not None else model_core.init_params(spec, config.seed)
    losses = []
    for round_index in range(1, config.rounds + 1):
        if config.reset_optimizer_per_round:
            runner.optimizer_state = None
        w, mean_loss = client_update(runner, w, config, spec, round_index)
        losses.append(mean_loss)
    return w, losses


def train_central(pooled: WindowDataset, test_data: WindowDataset,
                  spec: NetworkSpec, config: FLConfig,
                  init: ParameterVector | None = None):
    """Single-site model on the union of all runners' data; returns (weights, F1)."""
    if len(pooled) == 0:
        raise ValueError("empty pooled training data")
    runner = RunnerState(runner_id=0, train_data=pooled, test_data=test_data)
    w, losses = _train_standalone(runner, spec, config, init)
    counts = local_testing(runner, w, config, spec)
    return w, metrics.f1(counts), losses


def train_locals(runners, spec: NetworkSpec, config: FLConfig,
                 init: ParameterVector | None = None):
    """Train each runner in isolation; returns (weights per runner, per-runner
    F1 on each runner's shared-test view, and their unweighted mean)."""
    runners = list(runners)
    if not runners:
        raise ValueError("no runners")
    weights, scores = [], []
    for runner in runners:
        solo = RunnerState(runner_id=runner.runner_id, train_data=runner.train_data,
                           test_data=runner.test_data)
        w, _ = _train_standalone(solo, spec, config, init)
        weights.append(w)
        scores.append(metrics.f1(local_testing(solo, w, config, spec)))
    return weights, scores, sum(scores) / len(scores)


@dataclass(frozen=True)
class ComparisonRow:
    """One (appliance, runner count) line of the three-arm comparison table."""

    appliance: str
    runners: int
    local_avg_f1: float
    central_f1: float
    fedavg_f1: float
    fedavg_over_local_pct: float
    fedavg_over_central_pct: float
    dataset_scale: int


REPORT_HEADER = ("appliance", "runners", "local_avg_f1", "central_f1", "fedavg_f1",
                 "fedavg_over_local_pct", "fedavg_over_central_pct", "scale")


def build_report(entries) -> list:
    """Fill the two improvement columns from the three F1 columns.

    Each entry needs: appliance, runners, local_avg_f1, central_f1, fedavg_f1,
    dataset_scale.
    """
    rows = []
    for e in entries:
        for arm in ("local_avg_f1", "central_f1", "fedavg_f1"):
            if e.get(arm) is None:
                raise ValueError(
                    f"{e.get('appliance')}/K={e.get('runners')}: missing {arm}")
        rows.append(ComparisonRow(
            appliance=e["appliance"],
            runners=int(e["runners"]),
            local_avg_f1=e["local_avg_f1"],
            central_f1=e["central_f1"],
            fedavg_f1=e["fedavg_f1"],
            fedavg_over_local_pct=metrics.improvement_pct(
                e["fedavg_f1"], e["local_avg_f1"]),
            fedavg_over_central_pct=metrics.improvement_pct(
                e["fedavg_f1"], e["central_f1"]),
            dataset_scale=int(e.get("dataset_scale", 0)),
        ))
    return rows


def report_to_csv(rows, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(REPORT_HEADER)
        for r in rows:
            writer.writerow([
                r.appliance, r.runners, f"{r.local_avg_f1:.6f}",
                f"{r.central_f1:.6f}", f"{r.fedavg_f1:.6f}",
                f"{r.fedavg_over_local_pct:.3f}",
                f"{r.fedavg_over_central_pct:.3f}", r.dataset_scale])
