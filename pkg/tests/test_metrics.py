"""Tests for average precision and the stratified report."""

import json

import numpy as np
import pytest

from ltml import metrics
from ltml.data import Stratification
from ltml.metrics import UndefinedAPError, average_precision, stratified_map


def brute_force_ap(scores, labels):
    """Independent AP: explicit ranking loop, same deterministic tie rule."""
    order = sorted(range(len(scores)), key=lambda i: (-scores[i], i))
    hits = 0
    total = 0.0
    for rank, idx in enumerate(order, start=1):
        if labels[idx] == 1:
            hits += 1
            total += hits / rank
    positives = sum(labels)
    return total / positives


# ---------------------------------------------------------------------------
# average_precision
# ---------------------------------------------------------------------------


def test_perfect_ranking():
    assert average_precision([0.9, 0.2], [1, 0]) == 1.0


def test_hand_ranked_case():
    ap = average_precision([0.9, 0.8, 0.1], [1, 0, 1])
    np.testing.assert_allclose(ap, (1.0 + 2.0 / 3.0) / 2.0, atol=1e-15)


def test_all_positive_labels():
    rng = np.random.default_rng(0)
    assert average_precision(rng.random(10), np.ones(10, dtype=int)) == 1.0


def test_no_positives_is_undefined():
    with pytest.raises(UndefinedAPError):
        average_precision([0.1, 0.9], [0, 0])


def test_ties_break_by_sample_index():
    # equal scores: sample 0 ranks first, so a positive there scores best
    assert average_precision([0.5, 0.5], [1, 0]) == 1.0
    assert average_precision([0.5, 0.5], [0, 1]) == 0.5


def test_invariant_under_monotone_transform():
    rng = np.random.default_rng(1)
    scores = rng.random(30)
    labels = (rng.random(30) < 0.4).astype(int)
    labels[0] = 1
    base = average_precision(scores, labels)
    warped = average_precision(np.exp(5 * scores) + 3, labels)
    np.testing.assert_allclose(base, warped, atol=1e-15)


def test_ap_bounds_and_perfection_condition():
    rng = np.random.default_rng(2)
    for _ in range(50):
        scores = rng.random(20)
        labels = (rng.random(20) < 0.3).astype(int)
        if labels.sum() == 0:
            labels[int(rng.integers(20))] = 1
        ap = average_precision(scores, labels)
        assert 0.0 < ap <= 1.0
        pos_scores = scores[labels == 1]
        neg_scores = scores[labels == 0]
        perfectly_ranked = neg_scores.size == 0 or pos_scores.min() > neg_scores.max()
        if perfectly_ranked:
            assert ap == 1.0
        if ap == 1.0 and neg_scores.size:
            assert pos_scores.min() >= neg_scores.max()


def test_matches_bruteforce_with_ties():
    rng = np.random.default_rng(3)
    for _ in range(100):
        # coarse quantization forces plenty of ties
        scores = np.round(rng.random(15), 1)
        labels = (rng.random(15) < 0.4).astype(int)
        if labels.sum() == 0:
            labels[3] = 1
        np.testing.assert_allclose(
            average_precision(scores, labels),
            brute_force_ap(list(scores), list(labels)),
            atol=1e-12,
        )


# ---------------------------------------------------------------------------
# stratified_map
# ---------------------------------------------------------------------------


def strat_for(names):
    return Stratification(assignment=list(names))


def test_perfect_predictor_scores_one_everywhere():
    labels = np.array([[1, 0, 1], [0, 1, 0], [1, 1, 0]])
    report = stratified_map(labels.astype(float), labels, strat_for(["head", "medium", "tail"]))
    assert report.total_map == 1.0
    assert report.head_map == 1.0
    assert report.medium_map == 1.0
    assert report.tail_map == 1.0


def test_singleton_groups_equal_their_class_ap():
    rng = np.random.default_rng(4)
    probs = rng.random((10, 3))
    labels = (rng.random((10, 3)) < 0.5).astype(int)
    labels[0] = 1
    report = stratified_map(probs, labels, strat_for(["head", "medium", "tail"]))
    for c, value in enumerate([report.head_map, report.medium_map, report.tail_map]):
        np.testing.assert_allclose(value, report.per_class_ap[c], atol=1e-15)


def test_total_is_mean_over_classes_not_group_means():
    probs = np.array([[0.9, 0.1, 0.5], [0.2, 0.8, 0.4]])
    labels = np.array([[1, 0, 1], [0, 1, 0]])
    report = stratified_map(probs, labels, strat_for(["head", "head", "tail"]))
    expected_total = np.mean([ap for ap in report.per_class_ap])
    np.testing.assert_allclose(report.total_map, expected_total, atol=1e-15)


def test_matches_independent_implementation_on_random_instances():
    rng = np.random.default_rng(5)
    names = ["head", "medium", "tail"]
    for _ in range(50):
        probs = np.round(rng.random((10, 6)), 1)
        labels = (rng.random((10, 6)) < 0.35).astype(int)
        labels[0] = 1
        strat = strat_for([names[i % 3] for i in range(6)])
        report = stratified_map(probs, labels, strat)
        for c in range(6):
            np.testing.assert_allclose(
                report.per_class_ap[c],
                brute_force_ap(list(probs[:, c]), list(labels[:, c])),
                atol=1e-12,
            )


def test_class_without_positives_is_excluded_and_reported():
    probs = np.array([[0.9, 0.4], [0.1, 0.6]])
    labels = np.array([[1, 0], [0, 0]])
    report = stratified_map(probs, labels, strat_for(["head", "tail"]))
    assert report.skipped_classes == [1]
    assert report.per_class_ap[1] is None
    assert report.tail_map is None
    np.testing.assert_allclose(report.total_map, report.per_class_ap[0], atol=1e-15)


def test_empty_group_reported_absent_not_zero():
    probs = np.array([[0.9], [0.1]])
    labels = np.array([[1], [0]])
    report = stratified_map(probs, labels, strat_for(["head"]))
    assert report.medium_map is None
    assert report.tail_map is None
    assert report.group_sizes == {"head": 1, "medium": 0, "tail": 0}


def test_report_serialization_roundtrip():
    probs = np.array([[0.9, 0.4], [0.1, 0.6]])
    labels = np.array([[1, 0], [0, 1]])
    report = stratified_map(probs, labels, strat_for(["head", "tail"]))
    payload = json.loads(report.to_json())
    assert payload["total_map"] == report.total_map
    table = report.to_table()
    assert "Total" in table and "Tail" in table
    assert f"{report.total_map:.4f}" in table
