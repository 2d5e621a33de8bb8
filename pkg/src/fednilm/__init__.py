"""Desk-scale federated learning simulator for non-intrusive load monitoring."""

from .data import (ApplianceProfile, LoadSeries, NormalizationStats,
                   WindowDataset, WindowSample, compute_stats, ingest_csv,
                   make_windows, partition, synth_generate)
from .federation import (CoordinatorState, FLConfig, RoundRecord, RunnerState,
                         client_update, fed_avg, global_f1, local_testing,
                         run_federation, select_optimal)
from .metrics import ConfusionCounts, classify, count, f1, improvement_pct, merge
from .model_core import (AdamState, Conv1D, Dense, NetworkSpec, ParameterVector,
                         adam_step, backward, desk_spec, fd_gradient, forward,
                         init_params, load_checkpoint, loss, paper_like_spec,
                         save_checkpoint, sgd_step)

__all__ = [name for name in dir() if not name.startswith("_")]
__version__ = "0.1.0"
