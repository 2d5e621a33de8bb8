"""A small federated run, end to end, printed round by round.

Four runners hold disjoint slices of a synthetic household; each round they
train locally, the coordinator averages their weights by sample count, and
every runner scores the averaged model on its private test slice.  Only
weights, losses and confusion counts ever reach the coordinator -- the
observer below would raise on anything else.
"""

import numpy as np

from fednilm import data, federation, model_core
from fednilm.data import ApplianceProfile
from fednilm.federation import FLConfig, RunnerState
from fednilm.metrics import ConfusionCounts
from fednilm.model_core import ParameterVector

RUNNERS = 4
WINDOW = 99
PER_RUNNER = 256

profile = ApplianceProfile("kettle", on_threshold=2000.0, on_power=2500.0,
                           mean_on_duration=6.0, mean_off_duration=24.0,
                           noise_std=150.0)

train_series = data.synth_generate([profile], RUNNERS * PER_RUNNER + WINDOW - 1,
                                   seed=0, baseline_noise_std=20.0)
test_series = data.synth_generate([profile], 1024 + WINDOW - 1, seed=1,
                                  baseline_noise_std=20.0)

stats = data.compute_stats(train_series)
train = data.make_windows(train_series, "kettle", WINDOW, stats, 2000.0)
test = data.make_windows(test_series, "kettle", WINDOW, stats, 2000.0)

parts = data.partition(train, RUNNERS, PER_RUNNER, seed=0)
bounds = np.linspace(0, len(test), RUNNERS + 1).astype(int)
runners = [RunnerState(k, parts[k],
                       test.take(np.arange(bounds[k], bounds[k + 1])))
           for k in range(RUNNERS)]

spec = model_core.desk_spec(WINDOW)
config = FLConfig(runners=RUNNERS, rounds=8, local_epochs=5, batch_size=64,
                  lr=5e-4, window=WINDOW, seed=0)


def observer(kind, runner_id, payload):
    assert isinstance(payload, (ParameterVector, float, ConfusionCounts)), \
        f"runner {runner_id} leaked a {type(payload).__name__}"


state, t_star, w_star = federation.run_federation(runners, config, spec,
                                                  observer=observer)
for record in state.history:
    print(f"round {record.round:2d}: global F1 {record.global_f1:.4f}, "
          f"mean train loss {record.mean_train_loss:.5f}")
print(f"optimal round: {t_star} "
      f"(F1 {state.history[t_star - 1].global_f1:.4f})")
