"""Pixel and component metrics against brute-force counting oracles."""

import numpy as np
import pytest

from sketchseg.errors import DataError, UndefinedMetricError
from sketchseg.metrics import (
    CategoryResult,
    EvalReport,
    c_metric,
    label_components_8,
    p_metric,
)
from sketchseg.schema import LabelMap, builtin_palette

PALETTE = builtin_palette()


def lm(classes) -> LabelMap:
    return LabelMap(np.asarray(classes, dtype=np.int64), PALETTE)


def oracle_p(pred, truth) -> float:
    correct = total = 0
    h, w = truth.shape
    for i in range(h):
        for j in range(w):
            if truth[i, j] != 0:
                total += 1
                if pred[i, j] == truth[i, j]:
                    correct += 1
    return correct / total


def oracle_c(pred, truth) -> float:
    correct = total = 0
    for cls in sorted(set(truth.ravel().tolist()) - {0}):
        pixels = [(i, j) for i in range(truth.shape[0]) for j in range(truth.shape[1])
                  if truth[i, j] == cls]
        hits = sum(1 for i, j in pixels if pred[i, j] == cls)
        total += 1
        if hits / len(pixels) >= 0.75:
            correct += 1
    return correct / total


class TestPMetric:
    def test_perfect_prediction(self):
        truth = np.zeros((6, 6), dtype=np.int64)
        truth[2, 2:5] = 3
        assert p_metric(lm(truth), lm(truth)) == 1.0

    def test_half_correct(self):
        truth = np.zeros((4, 4), dtype=np.int64)
        truth[1, 0:4] = 2
        pred = truth.copy()
        pred[1, 0:2] = 5
        assert p_metric(lm(pred), lm(truth)) == 0.5

    def test_background_prediction_errors_dont_count(self):
        truth = np.zeros((4, 4), dtype=np.int64)
        truth[0, 0] = 1
        pred = truth.copy()
        pred[3, 3] = 7  # wrong on background: irrelevant to the metric
        assert p_metric(lm(pred), lm(truth)) == 1.0

    def test_shape_mismatch(self):
        with pytest.raises(DataError):
            p_metric(lm(np.zeros((3, 3))), lm(np.zeros((4, 4))))

    def test_empty_truth_undefined(self):
        with pytest.raises(UndefinedMetricError):
            p_metric(lm(np.zeros((3, 3))), lm(np.zeros((3, 3))))

    def test_random_pairs_match_oracle(self):
        rng = np.random.default_rng(40)
        for _ in range(50):
            truth = rng.integers(0, 6, size=(16, 16))
            if not (truth != 0).any():
                continue
            pred = np.where(rng.random((16, 16)) < 0.5, truth, rng.integers(0, 6, size=(16, 16)))
            assert p_metric(lm(pred), lm(truth)) == oracle_p(pred, truth)


class TestCMetric:
    def test_perfect_prediction(self):
        truth = np.zeros((5, 5), dtype=np.int64)
        truth[0] = 1
        truth[4] = 2
        assert c_metric(lm(truth), lm(truth)) == 1.0

    def test_75_percent_is_inclusive(self):
        truth = np.zeros((4, 4), dtype=np.int64)
        truth[0, 0:4] = 3  # one component of exactly 4 pixels
        pred = truth.copy()
        pred[0, 0] = 1  # 3 of 4 correct
        assert c_metric(lm(pred), lm(truth)) == 1.0

    def test_below_threshold_fails(self):
        truth = np.zeros((4, 4), dtype=np.int64)
        truth[0, 0:4] = 3
        pred = truth.copy()
        pred[0, 0:2] = 1  # 2 of 4 correct
        assert c_metric(lm(pred), lm(truth)) == 0.0

    def test_two_components_one_bad(self):
        truth = np.zeros((6, 6), dtype=np.int64)
        truth[0, 0:4] = 1
        truth[5, 0:4] = 2
        pred = truth.copy()
        pred[0, 0:2] = 9  # first component at 50%
        assert c_metric(lm(pred), lm(truth)) == 0.5

    def test_random_pairs_match_oracle(self):
        rng = np.random.default_rng(41)
        for _ in range(50):
            truth = rng.integers(0, 5, size=(16, 16))
            if not (truth != 0).any():
                continue
            pred = np.where(rng.random((16, 16)) < 0.6, truth, rng.integers(0, 5, size=(16, 16)))
            assert c_metric(lm(pred), lm(truth)) == oracle_c(pred, truth)

    def test_connected_mode_splits_regions(self):
        truth = np.zeros((5, 7), dtype=np.int64)
        truth[0, 0:3] = 1
        truth[4, 4:7] = 1  # same label, two separate regions
        pred = truth.copy()
        pred[4, 4:7] = 2  # second region fully wrong
        assert c_metric(lm(pred), lm(truth)) == 0.0  # per-label: one bad component
        assert c_metric(lm(pred), lm(truth), connected=True) == 0.5


class TestMonotonicity:
    def test_fixing_a_pixel_never_hurts(self):
        rng = np.random.default_rng(42)
        truth = rng.integers(0, 4, size=(12, 12))
        truth[0, 0] = 1  # guarantee at least one stroke pixel
        pred = np.where(rng.random((12, 12)) < 0.5, truth, rng.integers(0, 4, size=(12, 12)))
        wrong = np.argwhere((truth != 0) & (pred != truth))
        p0, c0 = p_metric(lm(pred), lm(truth)), c_metric(lm(pred), lm(truth))
        for i, j in wrong[:20]:
            fixed = pred.copy()
            fixed[i, j] = truth[i, j]
            assert p_metric(lm(fixed), lm(truth)) >= p0
            assert c_metric(lm(fixed), lm(truth)) >= c0

    def test_metrics_bounded(self):
        rng = np.random.default_rng(43)
        for _ in range(20):
            truth = rng.integers(0, 3, size=(10, 10))
            truth[5, 5] = 1
            pred = rng.integers(0, 3, size=(10, 10))
            assert 0.0 <= p_metric(lm(pred), lm(truth)) <= 1.0
            assert 0.0 <= c_metric(lm(pred), lm(truth)) <= 1.0


class TestComponents8:
    def test_counts_diagonal_as_connected(self):
        mask = np.zeros((4, 4), dtype=bool)
        mask[0, 0] = mask[1, 1] = mask[2, 2] = True
        labels, count = label_components_8(mask)
        assert count == 1
        assert labels.max() == 1

    def test_separate_regions(self):
        mask = np.zeros((5, 5), dtype=bool)
        mask[0, 0] = True
        mask[4, 4] = True
        mask[0, 4] = True
        _, count = label_components_8(mask)
        assert count == 3


class TestEvalReport:
    def test_average_is_mean_of_categories(self):
        report = EvalReport(
            categories=[
                CategoryResult("A", 80, 100, 3, 4),
                CategoryResult("B", 50, 100, 1, 4),
            ]
        )
        assert report.average_p == pytest.approx((0.8 + 0.5) / 2)
        assert report.average_c == pytest.approx((0.75 + 0.25) / 2)

    def test_csv_has_average_row(self):
        report = EvalReport(categories=[CategoryResult("A", 10, 10, 2, 2)])
        lines = report.to_csv().strip().splitlines()
        assert lines[0].startswith("category,")
        assert lines[-1].startswith("average,")
        assert len(lines) == 3

    def test_text_table_renders(self):
        report = EvalReport(categories=[CategoryResult("Gridiron", 5, 10, 1, 2)])
        text = report.to_text()
        assert "Gridiron" in text and "average" in text
