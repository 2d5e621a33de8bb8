import numpy as np
import pytest
from hypothesis import given, strategies as st

from fednilm import metrics
from fednilm.metrics import ConfusionCounts


class TestClassifyAndCount:
    def test_cutoff_is_inclusive(self):
        labels = metrics.classify(np.array([0.49, 0.5, 0.51]), 0.5)
        np.testing.assert_array_equal(labels, [0, 1, 1])

    def test_count_known_table(self):
        preds = np.array([0.9, 0.9, 0.1, 0.1, 0.9, 0.1])
        truth = np.array([1.0, 1.0, 1.0, 0.0, 0.0, 0.0])
        counts = metrics.count(metrics.classify(preds, 0.5), truth)
        assert (counts.tp, counts.fp, counts.fn, counts.tn) == (2, 1, 1, 2)

    def test_length_mismatch(self):
        with pytest.raises(ValueError):
            metrics.count(np.zeros(3), np.zeros(2))

    def test_negative_counts_rejected(self):
        with pytest.raises(ValueError):
            ConfusionCounts(-1, 0, 0, 0)


class TestF1:
    def test_perfect_predictions(self):
        assert metrics.f1(ConfusionCounts(10, 0, 0, 10)) == 1.0

    def test_all_wrong(self):
        assert metrics.f1(ConfusionCounts(0, 5, 5, 0)) == 0.0

    def test_no_positives_anywhere_is_zero(self):
        assert metrics.f1(ConfusionCounts(0, 0, 0, 20)) == 0.0

    def test_closed_form(self):
        # 2*7 / (2*7 + 3 + 2) = 14/19
        assert metrics.f1(ConfusionCounts(7, 2, 3, 8)) == pytest.approx(14 / 19)

    def test_agrees_with_precision_recall_form(self):
        rng = np.random.default_rng(0)
        for _ in range(50):
            tp, fp, fn, tn = (int(v) for v in rng.integers(0, 100, 4))
            if tp == 0:
                continue
            precision = tp / (tp + fp)
            recall = tp / (tp + fn)
            harmonic = 2 * precision * recall / (precision + recall)
            assert metrics.f1(ConfusionCounts(tp, fp, fn, tn)) == pytest.approx(harmonic)


class TestMerge:
    def test_fieldwise_sum(self):
        merged = metrics.merge([ConfusionCounts(1, 2, 3, 4),
                                ConfusionCounts(10, 20, 30, 40)])
        assert merged == ConfusionCounts(11, 22, 33, 44)

    def test_empty_merge_rejected(self):
        with pytest.raises(ValueError):
            metrics.merge([])

    @given(st.lists(st.tuples(*[st.integers(0, 500)] * 4), min_size=1, max_size=8),
           st.integers(0, 2 ** 32))
    def test_micro_average_equals_pooled_count(self, tuples, seed):
        """Merging counts then scoring equals scoring one pooled prediction set."""
        parts = [ConfusionCounts(*t) for t in tuples]
        preds, truth = [], []
        for c in parts:
            preds += [1.0] * c.tp + [1.0] * c.fp + [0.0] * c.fn + [0.0] * c.tn
            truth += [1.0] * c.tp + [0.0] * c.fp + [1.0] * c.fn + [0.0] * c.tn
        order = np.random.default_rng(seed).permutation(len(preds))
        labels = metrics.classify(np.array(preds)[order], 0.5)
        pooled = metrics.count(labels, np.array(truth)[order])
        assert pooled == metrics.merge(parts)
        assert metrics.f1(pooled) == metrics.f1(metrics.merge(parts))

    def test_total_property(self):
        assert ConfusionCounts(1, 2, 3, 4).total == 10

    def test_dict_roundtrip(self):
        counts = ConfusionCounts(5, 6, 7, 8)
        assert ConfusionCounts.from_dict(counts.to_dict()) == counts


class TestImprovementPct:
    def test_doubling_is_plus_hundred(self):
        assert metrics.improvement_pct(0.8, 0.4) == pytest.approx(100.0)

    def test_drop_is_negative(self):
        assert metrics.improvement_pct(0.963, 0.986) == pytest.approx(-2.333, abs=5e-4)

    def test_zero_baseline_rejected(self):
        with pytest.raises(ValueError):
            metrics.improvement_pct(0.5, 0.0)
