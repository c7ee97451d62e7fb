import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mamkit.errors import InvalidInput
from mamkit.evaluation import (
    MetricReport,
    PredictionSet,
    chunk_accuracy,
    file_accuracy,
    file_level_aggregate,
    format_table,
    majority_baseline,
    repetition_stats,
    report_json,
    summarize_runs,
)


def one_hot_preds(predicted, labels, files=None, n_classes=2):
    probs = np.full((len(predicted), n_classes), 0.1 / max(n_classes - 1, 1))
    probs[np.arange(len(predicted)), predicted] = 0.9
    files = files or [f"f{i}" for i in range(len(predicted))]
    return PredictionSet(probs, labels, files)


def values_with(mean, std, n=10):
    z = np.linspace(-1.0, 1.0, n)
    z = (z - z.mean()) / z.std(ddof=1)
    return list(mean + std * z)


# -- chunk accuracy ------------------------------------------------------------


def test_three_of_four():
    assert chunk_accuracy(one_hot_preds([0, 1, 1, 0], [0, 1, 1, 1])) == 0.75


def test_all_correct_and_empty():
    assert chunk_accuracy(one_hot_preds([1, 0, 1], [1, 0, 1])) == 1.0
    with pytest.raises(InvalidInput):
        chunk_accuracy(PredictionSet(np.zeros((0, 2)), [], []))


def test_probability_validation():
    with pytest.raises(InvalidInput):
        PredictionSet(np.array([[0.7, 0.7]]), [0], ["a"])
    with pytest.raises(InvalidInput):
        PredictionSet(np.array([[1.2, -0.2]]), [0], ["a"])


def test_tie_goes_to_lowest_class():
    preds = PredictionSet(np.array([[0.5, 0.5], [0.25, 0.25 + 0.5]]), [0, 1], ["a", "b"])
    np.testing.assert_array_equal(preds.predicted, [0, 1])


def test_matches_recount_oracle():
    rng = np.random.default_rng(0)
    for _ in range(1000):
        n, c = int(rng.integers(1, 30)), int(rng.integers(2, 5))
        raw = rng.random((n, c))
        raw[rng.random(n) < 0.2, :] = 1.0  # exact ties
        probs = raw / raw.sum(axis=1, keepdims=True)
        labels = rng.integers(0, c, n)
        correct = 0
        for row, y in zip(probs.tolist(), labels.tolist()):
            best = 0
            for k in range(1, c):
                if row[k] > row[best]:
                    best = k
            correct += best == y
        assert chunk_accuracy(PredictionSet(probs, labels, [str(i) for i in range(n)])) == correct / n


def test_weighted_accuracy():
    preds = one_hot_preds([0, 0, 0, 1, 2, 2], [0, 0, 1, 1, 2, 2], n_classes=3)
    # per-class accuracies 1.0, 0.5, 1.0
    assert chunk_accuracy(preds, weighted=True) == pytest.approx(2.5 / 3)
    expected = (0.25 * 1.0 + 0.2 * 0.5 + 0.55 * 1.0) / 1.0
    assert chunk_accuracy(preds, weighted=True, class_weights=[0.25, 0.2, 0.55]) == pytest.approx(expected)


# -- file aggregation ----------------------------------------------------------


def test_soft_vote_example():
    probs = np.array([[0.9, 0.1], [0.2, 0.8], [0.8, 0.2]])
    (fp,) = file_level_aggregate(PredictionSet(probs, [0, 0, 0], ["a"] * 3))
    np.testing.assert_allclose(fp.probabilities, [0.6333333, 0.3666667], atol=1e-6)
    assert fp.predicted == 0 and fp.n_chunks == 3


def test_single_chunk_file_and_tie():
    single = PredictionSet(np.array([[0.3, 0.7]]), [1], ["a"])
    assert file_level_aggregate(single)[0].predicted == int(single.predicted[0])
    tie = PredictionSet(np.array([[0.8, 0.2], [0.2, 0.8]]), [1, 1], ["a", "a"])
    assert file_level_aggregate(tie)[0].predicted == 0


def test_file_accuracy_counts_files():
    probs = np.array([[0.9, 0.1], [0.4, 0.6], [0.45, 0.55], [0.1, 0.9]])
    preds = PredictionSet(probs, [0, 0, 1, 1], ["a", "a", "b", "b"])
    assert chunk_accuracy(preds) == 0.75
    assert file_accuracy(preds) == 1.0


def test_mixed_labels_within_file_rejected():
    with pytest.raises(InvalidInput):
        file_level_aggregate(one_hot_preds([0, 1], [0, 1], files=["a", "a"]))


@settings(max_examples=50, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 2), st.integers(0, 2)), min_size=1, max_size=40))
def test_file_and_chunk_accuracy_coincide_for_single_chunk_files(pairs):
    predicted, labels = zip(*pairs)
    preds = one_hot_preds(list(predicted), list(labels), n_classes=3)
    assert file_accuracy(preds) == chunk_accuracy(preds)


# -- repetition statistics -----------------------------------------------------


def test_three_values():
    s = repetition_stats([96, 97, 98])
    assert (s.n, s.mean, s.std) == (3, 97.0, 1.0)
    assert s.std_of_mean == pytest.approx(1 / math.sqrt(3))


def test_std_of_mean_for_ten_repetitions():
    s = repetition_stats(values_with(90.25, 3.09))
    assert s.mean == pytest.approx(90.25)
    assert s.std == pytest.approx(3.09)
    assert s.std_of_mean == pytest.approx(0.977, abs=5e-4)


def test_single_and_empty():
    s = repetition_stats([0.9])
    assert s.mean == 0.9 and s.std is None and s.std_of_mean is None
    with pytest.raises(InvalidInput):
        repetition_stats([])


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(0, 1), min_size=2, max_size=12), st.randoms())
def test_stats_permutation_invariant(values, rnd):
    shuffled = list(values)
    rnd.shuffle(shuffled)
    a, b = repetition_stats(values), repetition_stats(shuffled)
    assert a.mean == b.mean
    assert a.std == pytest.approx(b.std, abs=1e-15)
    assert a.std >= 0


# -- majority baseline ---------------------------------------------------------


def test_majority_splits():
    assert majority_baseline([0] * 35 + [1] * 45 + [2] * 20) == 0.45
    assert majority_baseline([0] * 62 + [1] * 34 + [2] * 4) == 0.62
    assert majority_baseline([1, 1, 1]) == 1.0
    with pytest.raises(InvalidInput):
        majority_baseline([])


@settings(max_examples=50, deadline=None)
@given(st.lists(st.integers(0, 4), min_size=1, max_size=50))
def test_majority_at_least_one_over_classes(labels):
    assert majority_baseline(labels) >= 1 / len(set(labels))


# -- reports -------------------------------------------------------------------


def test_metric_report_json():
    probs = np.array([[0.9, 0.1], [0.4, 0.6], [0.45, 0.55], [0.1, 0.9]])
    report = MetricReport.from_predictions(PredictionSet(probs, [0, 0, 1, 1], ["a", "a", "b", "b"]))
    data = json.loads(report_json(report.to_dict()))
    assert data["chunk_accuracy"] == 0.75 and data["file_accuracy"] == 1.0
    assert data["per_class"]["1"] == {"true": 2, "predicted": 3}
    assert data["majority_baseline"] == 0.5


def test_table_layout():
    rows = [
        {"task": "Gender", "model": "MFCC", "technique": "Baseline", **summarize_runs(values_with(0.9025, 0.0309), "file")},
        {"task": "Gender", "model": "MFCC", "technique": "Time", **summarize_runs([0.95], "file")},
    ]
    table = format_table(rows)
    lines = table.splitlines()
    assert len({len(line) for line in lines}) == 1
    assert "90.25 ± 3.09" in table
    assert "95.00 " in table
