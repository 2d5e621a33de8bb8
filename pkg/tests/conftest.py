import numpy as np
import pytest

from fednilm import data, model_core
from fednilm.model_core import Conv1D, Dense, NetworkSpec


@pytest.fixture
def tiny_spec():
    return NetworkSpec(31, (Conv1D(2, 5, "relu"), Dense(8, "relu"),
                            Dense(1, "linear")))


def random_batch(spec, seed, n=4):
    rng = np.random.default_rng(seed)
    windows = rng.normal(0.0, 1.0, (n, spec.input_window))
    targets = rng.integers(0, 2, n).astype(np.float64)
    return windows, targets


def toy_dataset(spec, seed, n=32, appliance="kettle"):
    """A WindowDataset of random windows with random binary targets."""
    windows, targets = random_batch(spec, seed, n)
    return data.WindowDataset(
        windows, targets, np.arange(n), appliance,
        data.NormalizationStats(0.0, 1.0), spec.input_window)


def pytest_terminal_summary(terminalreporter):
    """Echo the acceptance pass/fail lines where capture cannot hide them."""
    try:
        from test_acceptance import RESULTS
    except ImportError:
        return
    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in RESULTS:
            terminalreporter.write_line(line)


def midpoint_selector(window_size):
    """Network + weights whose output is exactly the raw window midpoint."""
    spec = NetworkSpec(window_size, (Conv1D(1, 1, "linear"), Dense(1, "linear")))
    values = np.zeros(model_core.param_count(spec))
    params = model_core.ParameterVector(values, model_core.layout_for(spec))
    tensors = params.tensors()
    tensors[0] = np.array([[[1.0]]])               # conv weight: identity
    dense_w = np.zeros_like(tensors[2])
    dense_w[0, (window_size - 1) // 2] = 1.0       # pick the midpoint flat index
    tensors[2] = dense_w
    return spec, params.replace_values(model_core.flatten_tensors(tensors, params.layout))
