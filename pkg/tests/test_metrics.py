from __future__ import annotations

import csv

import numpy as np
import pytest

from hspi.errors import ShapeError
from hspi.metrics import random_guess_f1, report_metrics


def test_perfect_predictions():
    labels = [0, 1, 2, 0, 1, 2]
    report = report_metrics(labels, labels, ["fp32", "fp16", "int8"])
    assert report.accuracy == 1.0 and report.macro_f1 == 1.0
    np.testing.assert_array_equal(report.per_class_f1, [1.0, 1.0, 1.0])
    assert report.classes_above_random == 3


def test_constant_predictor():
    report = report_metrics([0, 0, 0, 0], [0, 0, 1, 1])
    assert report.accuracy == 0.5
    np.testing.assert_allclose(report.per_class_accuracy, [1.0, 0.0])
    np.testing.assert_allclose(report.per_class_f1, [2 / 3, 0.0])
    assert report.class_names == ["0", "1"]


def test_random_guess_baseline():
    np.testing.assert_allclose(random_guess_f1(np.array([10, 10, 10, 10])), [0.25] * 4)
    prior, c = 0.75, 2
    np.testing.assert_allclose(random_guess_f1(np.array([30, 10]))[0], 2 * prior / c / (prior + 1 / c))
    report = report_metrics([0, 1], [0, 1], num_classes=4)
    assert report.random_accuracy == 0.25
    np.testing.assert_allclose(report.random_f1[2:], [0.0, 0.0])


def test_table_and_csv(tmp_path):
    report = report_metrics([0, 1, 1], [0, 1, 0], ["mxint8", "fp8-e4"])
    text = report.table()
    assert "mxint8" in text and "overall" in text and "random-guess accuracy 0.500" in text
    report.write_csv(tmp_path / "m.csv")
    with open(tmp_path / "m.csv", newline="") as fh:
        rows = list(csv.DictReader(fh))
    assert [r["class"] for r in rows] == ["mxint8", "fp8-e4", "overall"]
    assert rows[-1]["accuracy"] == f"{2 / 3:.6f}"


def test_length_mismatch():
    with pytest.raises(ShapeError):
        report_metrics([0, 1], [0])
    with pytest.raises(ShapeError):
        report_metrics([], [])


def test_confusion_counts_rows_by_true_class():
    report = report_metrics([0, 2, 2, 1, 0], [0, 2, 1, 1, 2], ["fp32", "fp16", "int8"])
    np.testing.assert_array_equal(report.confusion, [[1, 0, 0], [0, 1, 1], [1, 0, 1]])
    np.testing.assert_array_equal(report.support, [1, 2, 2])
    np.testing.assert_allclose(report.per_class_accuracy, [1.0, 0.5, 0.5])
    # int8: precision 1/2, recall 1/2
    assert report.per_class_f1[2] == pytest.approx(0.5)


def test_class_never_seen_scores_zero():
    report = report_metrics([0, 0], [0, 0], num_classes=3)
    np.testing.assert_array_equal(report.per_class_f1, [1.0, 0.0, 0.0])
    np.testing.assert_array_equal(report.confusion.sum(axis=1), [2, 0, 0])
