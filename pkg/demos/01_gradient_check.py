"""Verify the hand-rolled backpropagation against finite differences.

The network engine computes its gradients analytically; this script replays
the same loss through central finite differences and prints the worst
per-parameter relative error.  Anything below 1e-4 means the two agree to
the limit of what h=1e-5 differencing can resolve in float64.
"""

import numpy as np

from fednilm import model_core

spec = model_core.desk_spec()
print(f"network: {spec.to_json()}")
print(f"parameters: {model_core.param_count(spec)}")

worst = 0.0
for trial in range(5):
    rng = np.random.default_rng(trial)
    params = model_core.init_params(spec, trial)
    windows = rng.normal(0.0, 1.0, (4, spec.input_window))
    targets = rng.integers(0, 2, 4).astype(float)

    _, analytic = model_core.backward(spec, params, windows, targets)
    numeric = model_core.fd_gradient(spec, params, windows, targets, h=1e-5)

    rel = np.abs(analytic - numeric) / np.maximum(
        np.maximum(np.abs(analytic), np.abs(numeric)), 1e-6)
    worst = max(worst, float(rel.max()))
    print(f"trial {trial}: max relative error {rel.max():.3e}")

print(f"worst over all trials: {worst:.3e} ({'OK' if worst < 1e-4 else 'BAD'})")
