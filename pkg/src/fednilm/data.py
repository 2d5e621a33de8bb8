"""Load-series ingestion, synthetic generation, windowing and partitioning.

A household series is either read from a REFIT-style CSV (one file per
household, header ``timestamp,aggregate,<appliance>,...``) or generated as a
sum of two-state semi-Markov appliance signals over a noisy baseline.  Series
become training material by z-scoring the aggregate channel and cutting
odd-length sliding windows whose target is the on/off status of one appliance
at the window midpoint.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, replace

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .rng import derive_seed

# Common NILM practice; all overridable per run.
DEFAULT_THRESHOLDS = {
    "kettle": 2000.0,
    "microwave": 200.0,
    "washing_machine": 20.0,
    "dishwasher": 10.0,
    "tumble_dryer": 20.0,
}

STD_FLOOR = 1e-6


class DataError(ValueError):
    """Unusable input data (missing columns, gaps, short series, ...)."""


@dataclass(frozen=True)
class LoadSeries:
    """Aligned power channels: whole-house aggregate plus named appliances."""

    timestamps: np.ndarray  # integer seconds, strictly increasing
    aggregate: np.ndarray   # watts
    appliances: dict        # name -> watts array

    def __post_init__(self):
        ts = np.ascontiguousarray(self.timestamps, dtype=np.int64)
        agg = np.ascontiguousarray(self.aggregate, dtype=np.float64)
        apps = {k: np.ascontiguousarray(v, dtype=np.float64)
                for k, v in self.appliances.items()}
        if len(ts) == 0:
            raise DataError("empty series")
        if len(agg) != len(ts) or any(len(v) != len(ts) for v in apps.values()):
            raise DataError("channel lengths differ")
        if len(ts) > 1 and np.any(np.diff(ts) <= 0):
            raise DataError("timestamps are not strictly increasing")
        if np.any(agg < 0) or any(np.any(v < 0) for v in apps.values()):
            raise DataError("negative power values")
        for arr in (ts, agg, *apps.values()):
            arr.flags.writeable = False
        object.__setattr__(self, "timestamps", ts)
        object.__setattr__(self, "aggregate", agg)
        object.__setattr__(self, "appliances", apps)

    def __len__(self) -> int:
        return len(self.timestamps)


@dataclass(frozen=True)
class NormalizationStats:
    mean: float
    std: float

    def __post_init__(self):
        if not self.std > 0:
            raise DataError("std must be > 0")

    def normalize(self, values: np.ndarray) -> np.ndarray:
        return (np.asarray(values, dtype=np.float64) - self.mean) / self.std

    def denormalize(self, values: np.ndarray) -> np.ndarray:
        return np.asarray(values, dtype=np.float64) * self.std + self.mean


@dataclass(frozen=True)
class WindowSample:
    window: np.ndarray
    target: float
    source_index: int


@dataclass(frozen=True)
class WindowDataset:
    """Sliding windows (normalized aggregate) with midpoint on/off targets."""

    windows: np.ndarray       # (n, W) normalized values
    targets: np.ndarray       # (n,) in {0.0, 1.0}
    source_index: np.ndarray  # (n,) window start position in the parent series
    appliance_name: str
    stats: NormalizationStats
    window_size: int

    def __post_init__(self):
        w = np.ascontiguousarray(self.windows, dtype=np.float64)
        t = np.ascontiguousarray(self.targets, dtype=np.float64)
        s = np.ascontiguousarray(self.source_index, dtype=np.int64)
        if w.ndim != 2 or w.shape[1] != self.window_size:
            raise DataError(f"windows must be (n, {self.window_size})")
        if t.shape != (w.shape[0],) or s.shape != (w.shape[0],):
            raise DataError("targets/source_index lengths differ from windows")
        if not np.all(np.isin(t, (0.0, 1.0))):
            raise DataError("targets must be 0.0 or 1.0")
        for arr in (w, t, s):
            arr.flags.writeable = False
        object.__setattr__(self, "windows", w)
        object.__setattr__(self, "targets", t)
        object.__setattr__(self, "source_index", s)

    def __len__(self) -> int:
        return len(self.targets)

    def __getitem__(self, i: int) -> WindowSample:
        return WindowSample(self.windows[i], float(self.targets[i]),
                            int(self.source_index[i]))

    def take(self, rows) -> "WindowDataset":
        rows = np.asarray(rows)
        return replace(self, windows=self.windows[rows], targets=self.targets[rows],
                       source_index=self.source_index[rows])

    def renormalize(self, stats: NormalizationStats) -> "WindowDataset":
        """Re-express the same raw windows under different z-score statistics."""
        raw = self.stats.denormalize(self.windows)
        return replace(self, windows=stats.normalize(raw), stats=stats)

    def raw_stats(self) -> NormalizationStats:
        """Mean/std of this dataset's own raw (denormalized) window values."""
        raw = self.stats.denormalize(self.windows)
        return NormalizationStats(float(np.mean(raw)),
                                  max(float(np.std(raw)), STD_FLOOR))


def concat_datasets(datasets) -> WindowDataset:
    datasets = list(datasets)
    if not datasets:
        raise DataError("nothing to concatenate")
    first = datasets[0]
    if any(d.window_size != first.window_size or d.appliance_name != first.appliance_name
           for d in datasets):
        raise DataError("datasets disagree on window size or appliance")
    aligned = [d if d.stats == first.stats else d.renormalize(first.stats)
               for d in datasets]
    return WindowDataset(
        np.concatenate([d.windows for d in aligned]),
        np.concatenate([d.targets for d in aligned]),
        np.concatenate([d.source_index for d in aligned]),
        first.appliance_name, first.stats, first.window_size)


# --- CSV ---------------------------------------------------------------------

def ingest_csv(path, appliances=None) -> LoadSeries:
    """Read one household CSV; rows with empty cells are dropped, non-numeric
    cells raise with the offending row number."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{path}: empty file") from None
        header = [h.strip() for h in header]
        for required in ("timestamp", "aggregate"):
            if required not in header:
                raise DataError(f"{path}: missing required column {required!r}")
        if appliances is None:
            appliances = [h for h in header if h not in ("timestamp", "aggregate")]
        for name in appliances:
            if name not in header:
                raise DataError(f"{path}: missing appliance column {name!r}")
        cols = ["timestamp", "aggregate", *appliances]
        idx = [header.index(c) for c in cols]
        rows = []
        for line_no, row in enumerate(reader, start=2):
            if not row or all(not cell.strip() for cell in row):
                continue
            cells = [row[i].strip() if i < len(row) else "" for i in idx]
            if any(cell == "" for cell in cells):
                continue  # missing value: drop the row, never interpolate
            try:
                rows.append([float(c) for c in cells])
            except ValueError:
                raise DataError(f"{path}: non-numeric value on row {line_no}") from None
    if not rows:
        raise DataError(f"{path}: empty series")
    table = np.asarray(rows, dtype=np.float64)
    return LoadSeries(table[:, 0].astype(np.int64), table[:, 1],
                      {name: table[:, 2 + i] for i, name in enumerate(appliances)})


def write_csv(series: LoadSeries, path) -> None:
    names = list(series.appliances)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["timestamp", "aggregate", *names])
        for i in range(len(series)):
            # full precision so a written series re-ingests bit-exactly
            writer.writerow([int(series.timestamps[i]),
                             repr(float(series.aggregate[i])),
                             *(repr(float(series.appliances[n][i])) for n in names)])


def export_windows_csv(dataset: WindowDataset, path) -> None:
    """Debug dump: one row per window, target first."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["source_index", "target",
                         *(f"w{i}" for i in range(dataset.window_size))])
        for i in range(len(dataset)):
            writer.writerow([int(dataset.source_index[i]), f"{dataset.targets[i]:.0f}",
                             *(repr(float(v)) for v in dataset.windows[i])])


# --- statistics and windowing --------------------------------------------------

def compute_stats(series: LoadSeries) -> NormalizationStats:
    """Mean and population std of the aggregate channel, std floored at 1e-6."""
    agg = series.aggregate
    return NormalizationStats(float(np.mean(agg)), max(float(np.std(agg)), STD_FLOOR))


def _segment_bounds(timestamps: np.ndarray, gap_factor: float = 10.0):
    """Contiguous index ranges, split wherever the sampling gap exceeds
    gap_factor x the median interval (REFIT has outages; never window across them)."""
    n = len(timestamps)
    if n < 2:
        return [(0, n)]
    dt = np.diff(timestamps)
    cut = np.flatnonzero(dt > gap_factor * float(np.median(dt)))
    starts = [0, *(int(c) + 1 for c in cut)]
    ends = [*(int(c) + 1 for c in cut), n]
    return list(zip(starts, ends))


def make_windows(series: LoadSeries, appliance: str, window_size: int,
                 stats: NormalizationStats, threshold: float,
                 gap_factor: float = 10.0) -> WindowDataset:
    """Cut stride-1 windows; target is appliance power at the midpoint >= threshold."""
    if window_size % 2 == 0:
        raise DataError(f"window size must be odd, got {window_size}")
    if len(series) < window_size:
        raise DataError(f"series length {len(series)} < window size {window_size}")
    if appliance not in series.appliances:
        raise DataError(f"unknown appliance {appliance!r}")
    half = (window_size - 1) // 2
    normalized = stats.normalize(series.aggregate)
    power = series.appliances[appliance]

    windows, targets, sources = [], [], []
    for start, end in _segment_bounds(series.timestamps, gap_factor):
        if end - start < window_size:
            continue
        windows.append(sliding_window_view(normalized[start:end], window_size))
        mids = power[start + half:end - window_size + 1 + half]
        targets.append((mids >= threshold).astype(np.float64))
        sources.append(np.arange(start, end - window_size + 1, dtype=np.int64))
    if not windows:
        raise DataError("no gap-free stretch long enough for a single window")
    return WindowDataset(np.concatenate(windows), np.concatenate(targets),
                         np.concatenate(sources), appliance, stats, window_size)


def partition(dataset: WindowDataset, k: int, per_runner: int, seed: int) -> list:
    """K disjoint contiguous blocks of per_runner samples, block order seeded."""
    if k < 1 or per_runner < 1:
        raise DataError("k and per_runner must be >= 1")
    n_blocks = len(dataset) // per_runner
    if k > n_blocks:
        raise DataError(
            f"need {k} blocks of {per_runner} samples, dataset has only "
            f"{len(dataset)} samples ({n_blocks} blocks)")
    order = np.random.default_rng(seed).permutation(n_blocks)[:k]
    return [dataset.take(np.arange(b * per_runner, (b + 1) * per_runner))
            for b in order]


# --- synthetic generation ------------------------------------------------------

@dataclass(frozen=True)
class ApplianceProfile:
    name: str
    on_threshold: float
    on_power: float
    mean_on_duration: float = 50.0
    mean_off_duration: float = 150.0
    noise_std: float = 0.0

    def __post_init__(self):
        if not self.on_threshold > 0:
            raise DataError("on_threshold must be > 0")
        if not self.on_power > self.on_threshold:
            raise DataError("on_power must exceed on_threshold")


def _on_off_signal(rng: np.random.Generator, length: int, mean_on: float,
                   mean_off: float) -> np.ndarray:
    """Two-state semi-Markov status with geometric dwell times."""
    state = np.zeros(length, dtype=bool)
    t, on = 0, False
    while t < length:
        mean = mean_on if on else mean_off
        dur = int(rng.geometric(min(1.0, 1.0 / mean)))
        if on:
            state[t:t + dur] = True
        t += dur
        on = not on
    return state


def synth_generate(profiles, length: int, seed: int, baseline_watts: float = 100.0,
                   baseline_noise_std: float = 10.0,
                   sample_period_s: int = 8) -> LoadSeries:
    """Deterministic synthetic household: appliances plus a noisy baseline."""
    if length < 1:
        raise DataError("length must be >= 1")
    channels = {}
    for profile in profiles:
        rng = np.random.default_rng(derive_seed("synth", seed, profile.name))
        signal = _on_off_signal(rng, length, profile.mean_on_duration,
                                profile.mean_off_duration).astype(np.float64)
        signal *= profile.on_power
        if profile.noise_std > 0:
            signal += rng.normal(0.0, profile.noise_std, length)
        channels[profile.name] = np.clip(signal, 0.0, None)
    rng = np.random.default_rng(derive_seed("synth", seed, "__baseline__"))
    aggregate = np.full(length, baseline_watts, dtype=np.float64)
    if baseline_noise_std > 0:
        aggregate += rng.normal(0.0, baseline_noise_std, length)
    for signal in channels.values():
        aggregate += signal
    timestamps = np.arange(length, dtype=np.int64) * sample_period_s
    return LoadSeries(timestamps, np.clip(aggregate, 0.0, None), channels)
