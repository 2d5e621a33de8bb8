"""Compare the three training arms on one synthetic cell.

The federated model should clear the average of the locally-trained models
and land close to the centrally-trained one.  All three arms start from the
same initialization and consume the same compute budget, so the only varied
ingredient is who gets to see whose data.
"""

from pathlib import Path
import tempfile

from fednilm import baselines, experiment, federation, model_core
from fednilm.experiment import ExperimentConfig

config = ExperimentConfig(
    appliances=("kettle",), runner_counts=(4,), seeds=(0,),
    network="desk", rounds=8, local_epochs=5,
    per_runner=256, test_windows=1024,
    out_dir=tempfile.mkdtemp(prefix="fednilm-demo-"))

cell = experiment.build_cell(config, "kettle", 4, seed=0)
spec = config.network_spec()
fl = config.fl_config(4, cell_seed=0)
init = model_core.init_params(spec, 0)

_, scores, local_mean = baselines.train_locals(cell.local_runners, spec, fl,
                                               init=init)
print(f"locally-trained F1 per runner: {[f'{s:.3f}' for s in scores]}")
print(f"locally-trained mean:          {local_mean:.3f}")

_, central_f1, _ = baselines.train_central(cell.pooled_train, cell.shared_test,
                                           spec, fl, init=init)
print(f"centrally-trained:             {central_f1:.3f}")

state, t_star, _ = federation.run_federation(cell.fed_runners, fl, spec,
                                             init=init)
fed_f1 = state.history[t_star - 1].global_f1
print(f"federated (round {t_star}):          {fed_f1:.3f}")

rows = baselines.build_report([{
    "appliance": "kettle", "runners": 4, "local_avg_f1": local_mean,
    "central_f1": central_f1, "fedavg_f1": fed_f1,
    "dataset_scale": 4 * config.per_runner}])
out = Path(config.out_dir) / "comparison.csv"
baselines.report_to_csv(rows, out)
print(f"\nwrote {out}")
print(f"federated over local mean: {rows[0].fedavg_over_local_pct:+.1f}%")
print(f"federated over central:    {rows[0].fedavg_over_central_pct:+.1f}%")
