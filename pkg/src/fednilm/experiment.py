"""Experiment driver: config resolution, per-cell execution, and reporting.

A run is a matrix of cells (appliance x runner count x seed).  Every cell
trains up to three arms -- federated, central, local -- on identical data with
an identical seeded initialization, then reporting aggregates the cells into a
comparison table and per-round curve files.  All outputs are a pure function
of (config, seed); wall-clock timestamps live only in ``meta/`` sidecars.
"""

from __future__ import annotations

import concurrent.futures
import csv
import hashlib
import json
import os
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import baselines, data, federation, metrics, model_core
from .data import ApplianceProfile, DEFAULT_THRESHOLDS, NormalizationStats
from .federation import FLConfig, RunnerState
from .model_core import NetworkSpec
from .rng import derive_seed

ARMS = ("federated", "central", "local")


class ConfigError(ValueError):
    """Invalid or unknown experiment configuration."""


class ReportError(ValueError):
    """Report requested over incomplete results."""


_SYNTH_KEYS = {"profiles", "baseline_watts", "baseline_noise_std",
               "test_variant_power_scale", "test_variant_duration_scale",
               "households", "household_length"}
_CSV_KEYS = {"train", "test", "thresholds"}
_TOP_KEYS = {"appliances", "runner_counts", "seeds", "network", "window",
             "rounds", "local_epochs", "batch_size", "lr", "optimizer",
             "cutoff", "per_runner", "test_windows", "data", "out_dir"}

# Short duty cycles so even small partitions contain many activation events.
_DEFAULT_PROFILES = (
    {"name": "kettle", "on_threshold": 2000.0, "on_power": 2500.0,
     "mean_on_duration": 6.0, "mean_off_duration": 24.0, "noise_std": 150.0},
    {"name": "microwave", "on_threshold": 200.0, "on_power": 1200.0,
     "mean_on_duration": 8.0, "mean_off_duration": 22.0, "noise_std": 100.0},
)


@dataclass(frozen=True)
class ExperimentConfig:
    appliances: tuple
    runner_counts: tuple
    seeds: tuple
    network: str | dict = "desk"
    window: int = 0          # 0 = pick the network family default
    rounds: int = 15
    local_epochs: int = 10
    batch_size: int = 0      # 0 = pick the network family default
    lr: float = 5e-4
    optimizer: str = "adam"
    cutoff: float = 0.5
    per_runner: int = 2048
    test_windows: int = 2048
    data: dict = field(default_factory=lambda: {"synthetic": {}})
    out_dir: str = "out"

    def __post_init__(self):
        object.__setattr__(self, "appliances", tuple(self.appliances))
        object.__setattr__(self, "runner_counts", tuple(self.runner_counts))
        object.__setattr__(self, "seeds", tuple(self.seeds))
        if not self.appliances or not self.runner_counts or not self.seeds:
            raise ConfigError("appliances, runner_counts and seeds must be non-empty")
        if isinstance(self.network, str) and self.network not in ("desk", "paper"):
            raise ConfigError(f"unknown network preset {self.network!r}")
        source = set(self.data) & {"synthetic", "csv"}
        if len(source) != 1 or set(self.data) - {"synthetic", "csv"}:
            raise ConfigError("data must have exactly one of 'synthetic' or 'csv'")
        section = next(iter(source))
        allowed = _SYNTH_KEYS if section == "synthetic" else _CSV_KEYS
        unknown = set(self.data[section]) - allowed
        if unknown:
            raise ConfigError(f"unknown data.{section} keys: {sorted(unknown)}")

    @staticmethod
    def from_dict(doc: dict, overrides: dict | None = None) -> "ExperimentConfig":
        unknown = set(doc) - _TOP_KEYS
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        merged = dict(doc)
        for key, value in (overrides or {}).items():
            if value is not None:
                merged[key] = value
        try:
            return ExperimentConfig(**merged)
        except TypeError as exc:
            raise ConfigError(str(exc)) from None

    @staticmethod
    def from_file(path, overrides: dict | None = None) -> "ExperimentConfig":
        try:
            doc = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
        return ExperimentConfig.from_dict(doc, overrides)

    # --- resolved values --------------------------------------------------

    def network_spec(self) -> NetworkSpec:
        if isinstance(self.network, dict):
            return NetworkSpec.from_json(json.dumps(self.network))
        if self.network == "paper":
            return model_core.paper_like_spec(self.effective_window())
        return model_core.desk_spec(self.effective_window())

    def effective_window(self) -> int:
        if self.window:
            return self.window
        if isinstance(self.network, dict):
            return int(self.network["input_window"])
        return 599 if self.network == "paper" else 99

    def effective_batch_size(self) -> int:
        if self.batch_size:
            return self.batch_size
        return 512 if self.network == "paper" else 64

    def resolved(self) -> dict:
        doc = {
            "appliances": list(self.appliances),
            "runner_counts": list(self.runner_counts),
            "seeds": list(self.seeds),
            "network": self.network if isinstance(self.network, str)
                       else json.loads(self.network_spec().to_json()),
            "window": self.effective_window(),
            "rounds": self.rounds,
            "local_epochs": self.local_epochs,
            "batch_size": self.effective_batch_size(),
            "lr": self.lr,
            "optimizer": self.optimizer,
            "cutoff": self.cutoff,
            "per_runner": self.per_runner,
            "test_windows": self.test_windows,
            "data": self.data,
        }
        return doc

    def config_hash(self) -> str:
        blob = json.dumps(self.resolved(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]

    def fl_config(self, runners: int, cell_seed: int) -> FLConfig:
        return FLConfig(
            runners=runners, rounds=self.rounds, local_epochs=self.local_epochs,
            batch_size=self.effective_batch_size(), lr=self.lr,
            optimizer=self.optimizer, window=self.effective_window(),
            seed=cell_seed, cutoff=self.cutoff)

    def profiles(self) -> list:
        raw = self.data.get("synthetic", {}).get("profiles", _DEFAULT_PROFILES)
        return [ApplianceProfile(**p) for p in raw]

    def thresholds(self) -> dict:
        table = dict(DEFAULT_THRESHOLDS)
        if "synthetic" in self.data:
            table.update({p.name: p.on_threshold for p in self.profiles()})
        else:
            table.update(self.data["csv"].get("thresholds", {}))
        return table


# --- scenario construction -----------------------------------------------------


@dataclass
class CellData:
    """Everything the three arms of one cell need, with per-arm stats policies."""

    fed_runners: list          # train: own stats, test: pooled stats
    local_runners: list        # train and test: each runner's own stats
    pooled_train: data.WindowDataset   # pooled stats
    shared_test: data.WindowDataset    # pooled stats
    pooled_stats: NormalizationStats


def _variant_profiles(config: ExperimentConfig) -> list:
    """Test-household appliance variants absent from the training partitions."""
    synth = config.data.get("synthetic", {})
    p_scale = synth.get("test_variant_power_scale", 1.0)
    d_scale = synth.get("test_variant_duration_scale", 1.3)
    return [ApplianceProfile(
        name=p.name, on_threshold=p.on_threshold, on_power=p.on_power * p_scale,
        mean_on_duration=p.mean_on_duration * d_scale,
        mean_off_duration=p.mean_off_duration, noise_std=p.noise_std)
        for p in config.profiles()]


def _synth_series(config: ExperimentConfig, runners: int, seed: int):
    synth = config.data.get("synthetic", {})
    w = config.effective_window()
    train_len = runners * config.per_runner + w - 1
    test_len = config.test_windows + w - 1
    kwargs = {"baseline_watts": synth.get("baseline_watts", 100.0),
              "baseline_noise_std": synth.get("baseline_noise_std", 20.0)}
    train = data.synth_generate(config.profiles(), train_len,
                                derive_seed("train-series", seed, runners), **kwargs)
    test = data.synth_generate(_variant_profiles(config), test_len,
                               derive_seed("test-series", seed, runners), **kwargs)
    return train, test


def _csv_windows(paths, appliance, config: ExperimentConfig,
                 stats: NormalizationStats | None):
    """Window each household file separately (never across files), then pool."""
    series_list = [data.ingest_csv(p) for p in paths]
    if stats is None:
        agg = np.concatenate([s.aggregate for s in series_list])
        stats = NormalizationStats(float(np.mean(agg)),
                                   max(float(np.std(agg)), data.STD_FLOOR))
    threshold = config.thresholds()[appliance]
    pieces, offset = [], 0
    for series in series_list:
        ds = data.make_windows(series, appliance, config.effective_window(),
                               stats, threshold)
        if offset:
            ds = data.WindowDataset(ds.windows, ds.targets,
                                    ds.source_index + offset, ds.appliance_name,
                                    ds.stats, ds.window_size)
        pieces.append(ds)
        offset += len(series)
    return data.concat_datasets(pieces), stats


def build_cell(config: ExperimentConfig, appliance: str, runners: int,
               seed: int) -> CellData:
    w = config.effective_window()
    threshold = config.thresholds()[appliance]
    if "synthetic" in config.data:
        train_series, test_series = _synth_series(config, runners, seed)
        pooled_stats = data.compute_stats(train_series)
        full_train = data.make_windows(train_series, appliance, w, pooled_stats,
                                       threshold)
        shared_test = data.make_windows(test_series, appliance, w, pooled_stats,
                                        threshold)
    else:
        csv_cfg = config.data["csv"]
        full_train, pooled_stats = _csv_windows(csv_cfg["train"], appliance,
                                                config, None)
        shared_test, _ = _csv_windows(csv_cfg["test"], appliance, config,
                                      pooled_stats)
    if len(shared_test) > config.test_windows:
        shared_test = shared_test.take(np.arange(config.test_windows))

    parts = data.partition(full_train, runners, config.per_runner,
                           derive_seed("partition", seed, runners))
    # Shared test set is split into contiguous per-runner slices so that the
    # pooled confusion counts cover every test window exactly once.
    bounds = np.linspace(0, len(shared_test), runners + 1).astype(int)
    test_slices = [shared_test.take(np.arange(bounds[k], bounds[k + 1]))
                   for k in range(runners)]

    fed_runners, local_runners = [], []
    for k, part in enumerate(parts):
        own = part.raw_stats()
        fed_runners.append(RunnerState(
            runner_id=k, train_data=part.renormalize(own),
            test_data=test_slices[k]))
        local_runners.append(RunnerState(
            runner_id=k, train_data=part.renormalize(own),
            test_data=shared_test.renormalize(own)))
    pooled_train = data.concat_datasets(parts)
    return CellData(fed_runners, local_runners, pooled_train, shared_test,
                    pooled_stats)


# --- cell execution -------------------------------------------------------------


def _cell_name(appliance, runners, seed) -> str:
    return f"{appliance}_K{runners}_seed{seed}"


def _cell_paths(out_dir: Path, name: str) -> dict:
    return {
        "cell": out_dir / "cells" / f"{name}.json",
        "rounds": out_dir / "rounds" / f"{name}.jsonl",
        "checkpoint": out_dir / "checkpoints" / f"{name}.fnlm",
        "sidecar": out_dir / "checkpoints" / f"{name}.json",
        "meta": out_dir / "meta" / f"{name}.meta.json",
    }


def run_cell(config: ExperimentConfig, appliance: str, runners: int, seed: int,
             arms, out_dir: Path, force: bool = False) -> dict:
    name = _cell_name(appliance, runners, seed)
    paths = _cell_paths(out_dir, name)
    record = {"appliance": appliance, "runners": runners, "seed": seed,
              "config_hash": config.config_hash(), "arms": {}}
    if paths["cell"].exists():
        previous = json.loads(paths["cell"].read_text())
        if previous.get("config_hash") == record["config_hash"]:
            record["arms"] = previous.get("arms", {})
            if not force and all(a in record["arms"] for a in arms):
                record["skipped"] = True
                return record
        elif not force:
            record["arms"] = {}

    cell = build_cell(config, appliance, runners, seed)
    spec = config.network_spec()
    cell_seed = derive_seed("cell", seed, appliance, runners)
    fl = config.fl_config(runners, cell_seed)
    init = model_core.init_params(spec, cell_seed)

    for arm in arms:
        if arm == "federated":
            state, t_star, w_star = federation.run_federation(
                cell.fed_runners, fl, spec, init=init)
            best_f1 = state.history[t_star - 1].global_f1
            runner_ids = [r.runner_id for r in cell.fed_runners]
            paths["rounds"].parent.mkdir(parents=True, exist_ok=True)
            with open(paths["rounds"], "w") as fh:
                for rec in state.history:
                    fh.write(federation.round_log_line(rec, runner_ids) + "\n")
            paths["checkpoint"].parent.mkdir(parents=True, exist_ok=True)
            model_core.save_checkpoint(paths["checkpoint"], w_star)
            paths["sidecar"].write_text(json.dumps(
                {"t_star": t_star, "global_f1": best_f1,
                 "config_hash": record["config_hash"]}, sort_keys=True))
            record["arms"]["federated"] = {
                "f1": best_f1, "t_star": t_star,
                "rounds": [{"round": r.round, "global_f1": r.global_f1,
                            "mean_train_loss": r.mean_train_loss}
                           for r in state.history]}
        elif arm == "central":
            _, f1_c, losses = baselines.train_central(
                cell.pooled_train, cell.shared_test, spec, fl, init=init)
            record["arms"]["central"] = {"f1": f1_c, "round_losses": losses}
        elif arm == "local":
            _, scores, mean_f1 = baselines.train_locals(
                cell.local_runners, spec, fl, init=init)
            record["arms"]["local"] = {"f1_mean": mean_f1, "per_runner_f1": scores}
        else:
            raise ConfigError(f"unknown arm {arm!r}")

    paths["cell"].parent.mkdir(parents=True, exist_ok=True)
    paths["cell"].write_text(json.dumps(record, sort_keys=True, indent=1))
    paths["meta"].parent.mkdir(parents=True, exist_ok=True)
    paths["meta"].write_text(json.dumps({"finished_at": time.time()}))
    return record


def worker_count() -> int:
    value = os.environ.get("FEDNILM_THREADS", "1")
    try:
        return max(1, int(value))
    except ValueError:
        return 1


def run_experiment(config: ExperimentConfig, arms, out_dir=None, force=False,
                   seed_filter=None, log=print) -> dict:
    """Execute every requested cell; failed cells are recorded, not fatal."""
    out = Path(out_dir or config.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    seeds = [s for s in config.seeds if seed_filter is None or s == seed_filter]
    if not seeds:
        raise ConfigError(f"seed {seed_filter} is not in the config seed list")
    cells = [(a, k, s) for a in config.appliances
             for k in config.runner_counts for s in seeds]
    log(f"effective hyperparameters: E={config.local_epochs} "
        f"B={config.effective_batch_size()} lr={config.lr} "
        f"T={config.rounds} W={config.effective_window()} "
        f"optimizer={config.optimizer} cutoff={config.cutoff}")
    results, failures = {}, {}

    def execute(cell):
        appliance, runners, seed = cell
        return run_cell(config, appliance, runners, seed, arms, out, force)

    workers = min(worker_count(), len(cells))
    if workers > 1:
        with concurrent.futures.ThreadPoolExecutor(max_workers=workers) as pool:
            futures = {pool.submit(execute, c): c for c in cells}
            for future in concurrent.futures.as_completed(futures):
                cell = futures[future]
                try:
                    results[cell] = future.result()
                except Exception as exc:  # record and keep going
                    failures[cell] = str(exc)
    else:
        for cell in cells:
            try:
                results[cell] = execute(cell)
            except Exception as exc:
                failures[cell] = str(exc)
    for cell, reason in sorted(failures.items()):
        log(f"FAILED {_cell_name(*cell)}: {reason}")
    write_summary(out)
    return {"results": results, "failures": failures}


def write_summary(out_dir: Path) -> Path:
    """Deterministic summary CSV regenerated from the cell files."""
    out_dir = Path(out_dir)
    rows = []
    for path in sorted((out_dir / "cells").glob("*.json")):
        rec = json.loads(path.read_text())
        arms = rec.get("arms", {})
        rows.append([
            rec["appliance"], rec["runners"], rec["seed"],
            _fmt(arms.get("local", {}).get("f1_mean")),
            _fmt(arms.get("central", {}).get("f1")),
            _fmt(arms.get("federated", {}).get("f1")),
            arms.get("federated", {}).get("t_star", ""),
        ])
    rows.sort(key=lambda r: (r[0], int(r[1]), int(r[2])))
    path = out_dir / "summary.csv"
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["appliance", "runners", "seed", "local_avg_f1",
                         "central_f1", "fedavg_f1", "fedavg_t_star"])
        writer.writerows(rows)
    return path


def _fmt(value) -> str:
    return "" if value is None else f"{value:.6f}"


# --- reporting -------------------------------------------------------------------


def build_comparison(out_dir) -> list:
    """Mean-over-seeds comparison rows; raises if any cell lacks an arm."""
    out_dir = Path(out_dir)
    cell_files = sorted((out_dir / "cells").glob("*.json"))
    if not cell_files:
        raise ReportError(f"no completed cells under {out_dir / 'cells'}")
    grouped, missing = {}, []
    for path in cell_files:
        rec = json.loads(path.read_text())
        arms = rec.get("arms", {})
        absent = [a for a in ARMS if a not in arms]
        if absent:
            missing.append(f"{path.stem}: missing {', '.join(absent)}")
            continue
        key = (rec["appliance"], rec["runners"])
        grouped.setdefault(key, []).append(rec)
    if missing:
        raise ReportError("incomplete cells:\n  " + "\n  ".join(missing))
    entries = []
    for (appliance, runners), recs in sorted(grouped.items()):
        entries.append({
            "appliance": appliance, "runners": runners,
            "local_avg_f1": float(np.mean(
                [r["arms"]["local"]["f1_mean"] for r in recs])),
            "central_f1": float(np.mean(
                [r["arms"]["central"]["f1"] for r in recs])),
            "fedavg_f1": float(np.mean(
                [r["arms"]["federated"]["f1"] for r in recs])),
            "dataset_scale": 0,  # filled from config in write_report
        })
    return baselines.build_report(entries)


def write_report(config: ExperimentConfig | None, out_dir) -> dict:
    out_dir = Path(out_dir)
    rows = build_comparison(out_dir)
    if config is not None:
        rows = [baselines.ComparisonRow(
            r.appliance, r.runners, r.local_avg_f1, r.central_f1, r.fedavg_f1,
            r.fedavg_over_local_pct, r.fedavg_over_central_pct,
            r.runners * config.per_runner) for r in rows]
    comparison_path = out_dir / "comparison.csv"
    baselines.report_to_csv(rows, comparison_path)

    curves_dir = out_dir / "curves"
    curves_dir.mkdir(parents=True, exist_ok=True)
    curve_paths = []
    grouped = {}
    for path in sorted((out_dir / "cells").glob("*.json")):
        rec = json.loads(path.read_text())
        if "federated" not in rec.get("arms", {}):
            continue
        grouped.setdefault((rec["appliance"], rec["runners"]), []).append(rec)
    for (appliance, runners), recs in sorted(grouped.items()):
        path = curves_dir / f"{appliance}_K{runners}.csv"
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["seed", "round", "mean_train_loss", "global_f1"])
            for rec in sorted(recs, key=lambda r: r["seed"]):
                for row in rec["arms"]["federated"]["rounds"]:
                    writer.writerow([rec["seed"], row["round"],
                                     repr(row["mean_train_loss"]),
                                     repr(row["global_f1"])])
        curve_paths.append(path)
    return {"comparison": comparison_path, "curves": curve_paths}


# --- synth + export helpers ------------------------------------------------------


def synth_households(config: ExperimentConfig, out_dir) -> list:
    """Write one training CSV per household plus a variant test household."""
    if "synthetic" not in config.data:
        raise ConfigError("synth requires a synthetic data section")
    synth = config.data["synthetic"]
    households = int(synth.get("households", 4))
    length = int(synth.get("household_length", 5000))
    if length < 1:
        raise ConfigError("household_length must be >= 1")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    kwargs = {"baseline_watts": synth.get("baseline_watts", 100.0),
              "baseline_noise_std": synth.get("baseline_noise_std", 20.0)}
    base_seed = config.seeds[0]
    written = []
    for h in range(households):
        series = data.synth_generate(config.profiles(), length,
                                     derive_seed("household", base_seed, h), **kwargs)
        path = out_dir / f"household_{h}.csv"
        data.write_csv(series, path)
        written.append((path, series))
    test_series = data.synth_generate(_variant_profiles(config), length,
                                      derive_seed("household", base_seed, "test"),
                                      **kwargs)
    test_path = out_dir / "household_test.csv"
    data.write_csv(test_series, test_path)
    written.append((test_path, test_series))
    return written


def on_fractions(series: data.LoadSeries, thresholds: dict) -> dict:
    return {name: float(np.mean(channel >= thresholds.get(name, np.inf)))
            for name, channel in series.appliances.items()}


def export_windows(config: ExperimentConfig, out_dir) -> list:
    """Debug dump of the full training window set, one CSV per appliance."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    runners = config.runner_counts[0]
    seed = config.seeds[0]
    written = []
    for appliance in config.appliances:
        cell = build_cell(config, appliance, runners, seed)
        path = out_dir / f"windows_{appliance}.csv"
        data.export_windows_csv(cell.pooled_train, path)
        written.append(path)
    return written
