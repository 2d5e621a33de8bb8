import numpy as np
import pytest

from fednilm import data
from fednilm.data import (ApplianceProfile, DataError, LoadSeries,
                          NormalizationStats)


def series_of(aggregate, appliances=None, timestamps=None):
    aggregate = np.asarray(aggregate, dtype=float)
    if timestamps is None:
        timestamps = np.arange(len(aggregate)) * 8
    return LoadSeries(timestamps, aggregate, appliances or {})


class TestIngestCsv:
    def test_three_row_fixture(self, tmp_path):
        path = tmp_path / "h.csv"
        path.write_text("timestamp,aggregate,kettle\n"
                        "0,100,0\n8,2100,2000\n16,120,0\n")
        series = data.ingest_csv(path)
        np.testing.assert_array_equal(series.timestamps, [0, 8, 16])
        np.testing.assert_array_equal(series.aggregate, [100, 2100, 120])
        np.testing.assert_array_equal(series.appliances["kettle"], [0, 2000, 0])

    def test_empty_body(self, tmp_path):
        path = tmp_path / "h.csv"
        path.write_text("timestamp,aggregate,kettle\n")
        with pytest.raises(DataError, match="empty series"):
            data.ingest_csv(path)

    def test_missing_aggregate_column(self, tmp_path):
        path = tmp_path / "h.csv"
        path.write_text("timestamp,kettle\n0,0\n")
        with pytest.raises(DataError, match="aggregate"):
            data.ingest_csv(path)

    def test_non_numeric_cell_names_row(self, tmp_path):
        path = tmp_path / "h.csv"
        path.write_text("timestamp,aggregate\n0,100\n8,oops\n")
        with pytest.raises(DataError, match="row 3"):
            data.ingest_csv(path)

    def test_rows_with_missing_values_dropped(self, tmp_path):
        path = tmp_path / "h.csv"
        path.write_text("timestamp,aggregate,kettle\n0,100,0\n8,,0\n16,120,0\n")
        series = data.ingest_csv(path)
        np.testing.assert_array_equal(series.timestamps, [0, 16])

    def test_non_monotone_timestamps(self, tmp_path):
        path = tmp_path / "h.csv"
        path.write_text("timestamp,aggregate\n8,100\n0,100\n")
        with pytest.raises(DataError, match="increasing"):
            data.ingest_csv(path)

    def test_write_then_ingest_roundtrips_exactly(self, tmp_path):
        series = data.synth_generate(
            [ApplianceProfile("kettle", 2000, 2500, 6, 24, 150)], 200, seed=3)
        path = tmp_path / "h.csv"
        data.write_csv(series, path)
        back = data.ingest_csv(path)
        np.testing.assert_array_equal(back.aggregate, series.aggregate)
        np.testing.assert_array_equal(back.appliances["kettle"],
                                      series.appliances["kettle"])


class TestComputeStats:
    def test_constant_series_floors_std(self):
        stats = data.compute_stats(series_of([100.0] * 5))
        assert stats.mean == 100.0
        assert stats.std == 1e-6

    def test_two_values(self):
        stats = data.compute_stats(series_of([0.0, 2.0]))
        assert (stats.mean, stats.std) == (1.0, 1.0)

    def test_matches_two_pass_oracle(self):
        values = np.random.default_rng(0).uniform(0, 3000, 1000)
        stats = data.compute_stats(series_of(values))
        mean = sum(values) / len(values)
        var = sum((v - mean) ** 2 for v in values) / len(values)
        assert stats.mean == pytest.approx(mean, abs=1e-9)
        assert stats.std == pytest.approx(np.sqrt(var), abs=1e-9)

    def test_normalize_roundtrip(self):
        stats = NormalizationStats(700.0, 123.0)
        values = np.random.default_rng(1).uniform(0, 3000, 50)
        np.testing.assert_allclose(stats.denormalize(stats.normalize(values)),
                                   values, atol=1e-9)


class TestMakeWindows:
    def test_paper_window_count(self):
        rng = np.random.default_rng(0)
        series = series_of(rng.uniform(0, 100, 1000),
                           {"kettle": rng.uniform(0, 3000, 1000)})
        stats = data.compute_stats(series)
        ds = data.make_windows(series, "kettle", 599, stats, 2000.0)
        assert len(ds) == 402
        # midpoint offset 299: check every target by brute force
        power = series.appliances["kettle"]
        for i in range(len(ds)):
            assert ds.targets[i] == float(power[i + 299] >= 2000.0)

    def test_series_equal_to_window_gives_one(self):
        series = series_of(np.ones(99), {"a": np.zeros(99)})
        ds = data.make_windows(series, "a", 99, NormalizationStats(0, 1), 1.0)
        assert len(ds) == 1

    def test_even_window_rejected(self):
        series = series_of(np.ones(100), {"a": np.zeros(100)})
        with pytest.raises(DataError, match="odd"):
            data.make_windows(series, "a", 100, NormalizationStats(0, 1), 1.0)

    def test_short_series_rejected(self):
        series = series_of(np.ones(10), {"a": np.zeros(10)})
        with pytest.raises(DataError):
            data.make_windows(series, "a", 11, NormalizationStats(0, 1), 1.0)

    def test_unknown_appliance(self):
        series = series_of(np.ones(99), {"a": np.zeros(99)})
        with pytest.raises(DataError, match="unknown appliance"):
            data.make_windows(series, "b", 99, NormalizationStats(0, 1), 1.0)

    def test_square_wave_targets_match_brute_force(self):
        n, w = 600, 99
        square = (np.arange(n) // 40 % 2).astype(float) * 2500.0
        series = series_of(square + 100.0, {"kettle": square})
        stats = data.compute_stats(series)
        ds = data.make_windows(series, "kettle", w, stats, 2000.0)
        assert len(ds) == n - w + 1
        for i in range(len(ds)):
            assert ds.targets[i] == float(square[i + 49] >= 2000.0)
            np.testing.assert_array_equal(
                ds.windows[i], stats.normalize(series.aggregate[i:i + w]))

    def test_windows_never_span_large_gaps(self):
        ts = np.concatenate([np.arange(60) * 8, 60 * 8 + 1000 + np.arange(60) * 8])
        series = LoadSeries(ts, np.ones(120), {"a": np.zeros(120)})
        ds = data.make_windows(series, "a", 11, NormalizationStats(0, 1), 1.0)
        # two 60-sample segments, each contributing 60-11+1 windows
        assert len(ds) == 2 * 50
        assert not np.any((ds.source_index > 49) & (ds.source_index < 60))

    def test_window_count_law(self):
        rng = np.random.default_rng(5)
        for _ in range(10):
            n = int(rng.integers(30, 300))
            w = int(rng.integers(3, 15)) * 2 + 1
            if n < w:
                continue
            series = series_of(rng.uniform(0, 10, n), {"a": rng.uniform(0, 10, n)})
            ds = data.make_windows(series, "a", w, NormalizationStats(0, 1), 5.0)
            assert len(ds) == n - w + 1


class TestPartition:
    def make(self, n, w=9):
        rng = np.random.default_rng(7)
        return data.WindowDataset(rng.normal(0, 1, (n, w)),
                                  rng.integers(0, 2, n).astype(float),
                                  np.arange(n), "a", NormalizationStats(0, 1), w)

    def test_paper_scale_partition(self):
        ds = self.make(4200)
        parts = data.partition(ds, 4, 1024, seed=0)
        assert [len(p) for p in parts] == [1024] * 4
        ranges = sorted((p.source_index.min(), p.source_index.max()) for p in parts)
        for (lo1, hi1), (lo2, _hi2) in zip(ranges, ranges[1:]):
            assert hi1 < lo2

    def test_single_runner(self):
        ds = self.make(100)
        (part,) = data.partition(ds, 1, 40, seed=1)
        assert len(part) == 40

    def test_union_has_no_duplicates(self):
        ds = self.make(1000)
        parts = data.partition(ds, 5, 150, seed=2)
        union = set()
        for p in parts:
            union.update(int(i) for i in p.source_index)
        assert len(union) == 5 * 150

    def test_insufficient_data(self):
        ds = self.make(100)
        with pytest.raises(DataError):
            data.partition(ds, 3, 40, seed=0)


class TestSynthGenerate:
    def test_no_appliances(self):
        series = data.synth_generate([], 500, seed=0, baseline_watts=50.0)
        assert series.appliances == {}
        assert np.all(series.aggregate >= 0)
        assert abs(series.aggregate.mean() - 50.0) < 5.0

    def test_noiseless_appliance_is_two_level(self):
        profile = ApplianceProfile("a", 100.0, 400.0, 50.0, 50.0, 0.0)
        series = data.synth_generate([profile], 10_000, seed=1)
        channel = series.appliances["a"]
        assert set(np.unique(channel)) == {0.0, 400.0}
        assert abs(np.mean(channel == 400.0) - 0.5) <= 0.1

    def test_same_seed_identical(self):
        profile = ApplianceProfile("a", 100.0, 400.0, 10.0, 30.0, 25.0)
        s1 = data.synth_generate([profile], 300, seed=9)
        s2 = data.synth_generate([profile], 300, seed=9)
        np.testing.assert_array_equal(s1.aggregate, s2.aggregate)
        np.testing.assert_array_equal(s1.appliances["a"], s2.appliances["a"])

    def test_invalid_profile(self):
        with pytest.raises(DataError):
            ApplianceProfile("a", 500.0, 400.0)

    def test_zero_length_rejected(self):
        with pytest.raises(DataError):
            data.synth_generate([], 0, seed=0)


class TestDatasetViews:
    def test_renormalize_preserves_raw_values(self):
        rng = np.random.default_rng(3)
        ds = data.WindowDataset(rng.normal(0, 1, (20, 5)),
                                rng.integers(0, 2, 20).astype(float),
                                np.arange(20), "a", NormalizationStats(10.0, 2.0), 5)
        other = ds.renormalize(NormalizationStats(50.0, 7.0))
        np.testing.assert_allclose(
            other.stats.denormalize(other.windows),
            ds.stats.denormalize(ds.windows), atol=1e-9)

    def test_concat_and_take(self):
        ds = TestPartition().make(30)
        parts = data.partition(ds, 3, 10, seed=4)
        merged = data.concat_datasets(parts)
        assert len(merged) == 30
        sample = merged[0]
        assert sample.window.shape == (9,)
        assert sample.target in (0.0, 1.0)
