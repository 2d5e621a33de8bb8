"""Simulated federated-averaging round loop.

Each round the coordinator broadcasts the global weights, every runner trains
locally for E epochs, the coordinator replaces the global model with the
sample-count-weighted mean of the returned weights, and every runner then
tests that freshly averaged model on its private test slice, sending back only
confusion counts.  After T rounds the round with the best global micro-F1
wins.  The only values that ever cross the runner -> coordinator boundary are
parameter vectors, scalar losses, and confusion counts.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from . import metrics, model_core
from .data import WindowDataset
from .metrics import ConfusionCounts
from .model_core import AdamState, NetworkSpec, ParameterVector
from .rng import derive_seed

_TEST_BATCH = 4096


@dataclass(frozen=True)
class FLConfig:
    """Every federation hyperparameter; serializable so runs reproduce from config."""

    runners: int
    rounds: int
    local_epochs: int
    batch_size: int
    lr: float
    optimizer: str = "adam"
    window: int = 599
    seed: int = 0
    cutoff: float = 0.5
    server_lr: float = 1.0  # implied 1.0 by weight-space averaging; kept as a knob
    reset_optimizer_per_round: bool = False

    def __post_init__(self):
        if self.runners < 1 or self.rounds < 1 or self.local_epochs < 1 \
                or self.batch_size < 1:
            raise ValueError("runners, rounds, local_epochs, batch_size must be >= 1")
        if self.lr < 0:
            raise ValueError("lr must be >= 0")
        if self.optimizer not in ("adam", "sgd"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")


@dataclass
class RunnerState:
    """One simulated participant: private train/test data plus optimizer moments."""

    runner_id: int
    train_data: WindowDataset
    test_data: WindowDataset
    optimizer_state: AdamState | None = None

    @property
    def sample_count(self) -> int:
        return len(self.train_data)


@dataclass(frozen=True)
class RoundRecord:
    round: int
    global_params: ParameterVector
    per_runner_counts: tuple
    global_f1: float
    mean_train_loss: float


@dataclass
class CoordinatorState:
    config: FLConfig
    current: ParameterVector
    history: list = field(default_factory=list)


def client_update(runner: RunnerState, w: ParameterVector, config: FLConfig,
                  spec: NetworkSpec, round_index: int):
    """E local epochs of minibatch descent; returns (new weights, mean loss of
    the final epoch per sample).  The incoming weights are not mutated."""
    n = len(runner.train_data)
    if n == 0:
        raise ValueError(f"runner {runner.runner_id}: empty training data")
    if config.optimizer == "adam" and (
            runner.optimizer_state is None
            or len(runner.optimizer_state.m) != len(w)):
        runner.optimizer_state = model_core.fresh_adam_state(len(w))
    windows, targets = runner.train_data.windows, runner.train_data.targets
    epoch_loss = 0.0
    for epoch in range(1, config.local_epochs + 1):
        shuffle_seed = derive_seed("shuffle", config.seed, runner.runner_id,
                                   round_index, epoch)
        order = np.random.default_rng(shuffle_seed).permutation(n)
        epoch_loss = 0.0
        for start in range(0, n, config.batch_size):
            rows = order[start:start + config.batch_size]
            loss_sum, grad = model_core.backward(spec, w, windows[rows], targets[rows])
            epoch_loss += loss_sum
            grad /= len(rows)  # train on the per-batch mean of the summed loss
            if config.optimizer == "sgd":
                w = model_core.sgd_step(w, grad, config.lr)
            else:
                w, runner.optimizer_state = model_core.adam_step(
                    w, grad, runner.optimizer_state, config.lr)
    return w, epoch_loss / n


def fed_avg(client_weights) -> ParameterVector:
    """Sample-count-weighted mean of client weights, summed in list order."""
    client_weights = list(client_weights)
    if not client_weights:
        raise ValueError("no client weights to average")
    layout = client_weights[0][0].layout
    total = sum(n_k for _, n_k in client_weights)
    if any(n_k <= 0 for _, n_k in client_weights):
        raise ValueError("all sample counts must be > 0")
    acc = np.zeros(len(client_weights[0][0].values), dtype=np.float64)
    for w, n_k in client_weights:
        if w.layout != layout:
            raise model_core.ShapeError("client weight layouts differ")
        acc += (n_k / total) * w.values
    return ParameterVector(acc, layout)


def local_testing(runner: RunnerState, w: ParameterVector, config: FLConfig,
                  spec: NetworkSpec) -> ConfusionCounts:
    """Score the model on the runner's private test windows; only counts leave."""
    ds = runner.test_data
    if len(ds) == 0:
        raise ValueError(f"runner {runner.runner_id}: empty test data")
    tallies = []
    for start in range(0, len(ds), _TEST_BATCH):
        preds = model_core.forward(spec, w, ds.windows[start:start + _TEST_BATCH])
        predicted = metrics.classify(preds, config.cutoff)
        tallies.append(metrics.count(predicted, ds.targets[start:start + _TEST_BATCH]))
    return metrics.merge(tallies)


def global_f1(per_runner_counts) -> float:
    """Micro-averaged F1 over all runners' counts (the per-round selection score)."""
    return metrics.f1(metrics.merge(per_runner_counts))


def select_optimal(history):
    """Earliest round with the maximum global F1, and its stored weights."""
    if not history:
        raise ValueError("empty round history")
    best = max(history, key=lambda rec: (rec.global_f1, -rec.round))
    return best.round, best.global_params


def run_federation(runners, config: FLConfig, spec: NetworkSpec,
                   init: ParameterVector | None = None, observer=None):
    """T rounds of broadcast / local update / average / distributed testing.

    ``observer(kind, runner_id, payload)`` is called for every value the
    coordinator receives from a runner, so tests can assert that nothing but
    weights, losses and counts ever crosses the privacy boundary.
    """
    runners = list(runners)
    if not runners:
        raise ValueError("need at least one runner")
    w = init if init is not None else model_core.init_params(spec, config.seed)
    state = CoordinatorState(config=config, current=w)
    total_samples = sum(r.sample_count for r in runners)
    for round_index in range(1, config.rounds + 1):
        if config.reset_optimizer_per_round:
            for runner in runners:
                runner.optimizer_state = None
        results = []
        for runner in runners:
            w_k, mean_loss = client_update(runner, state.current, config, spec,
                                           round_index)
            if observer is not None:
                observer("weights", runner.runner_id, w_k)
                observer("loss", runner.runner_id, mean_loss)
            results.append((runner, w_k, mean_loss))
        state.current = fed_avg([(w_k, r.sample_count) for r, w_k, _ in results])
        counts = []
        for runner in runners:
            c = local_testing(runner, state.current, config, spec)
            if observer is not None:
                observer("counts", runner.runner_id, c)
            counts.append(c)
        mean_loss = sum(r.sample_count * loss for r, _, loss in results) / total_samples
        state.history.append(RoundRecord(
            round=round_index, global_params=state.current,
            per_runner_counts=tuple(counts), global_f1=global_f1(counts),
            mean_train_loss=mean_loss))
    t_star, w_star = select_optimal(state.history)
    return state, t_star, w_star


def round_log_line(record: RoundRecord, runner_ids) -> str:
    """One JSON line per round, the data behind loss/F1 curves."""
    return json.dumps({
        "round": record.round,
        "global_f1": record.global_f1,
        "mean_train_loss": record.mean_train_loss,
        "per_runner": [
            {"runner_id": rid, "tp": c.tp, "fp": c.fp, "fn": c.fn}
            for rid, c in zip(runner_ids, record.per_runner_counts)],
    }, sort_keys=True)
