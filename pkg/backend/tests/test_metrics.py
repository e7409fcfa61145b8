import numpy as np
import pytest

from errors import DomainError
from models.reports import PredictionCorpus
from services.metrics import (
    accuracy,
    aggregate_reports,
    bootstrap_metrics,
    build_report,
    calibration_curve,
    calibration_rows,
    confusion_matrix,
    confusion_rows,
    ece,
    log_score,
    mae,
    rmse,
    sbc,
)
from services.trainer import log_loss


def _corpus(first_column, labels):
    p = np.asarray(first_column, dtype=np.float64)
    return PredictionCorpus(preds=np.column_stack([p, 1 - p]), labels=labels)


def _random_corpus(rng, size=300, n_models=3):
    labels = rng.integers(0, n_models, size=size)
    logits = rng.normal(size=(size, n_models)) + 2.0 * np.eye(n_models)[labels]
    preds = np.exp(logits) / np.exp(logits).sum(axis=1, keepdims=True)
    return PredictionCorpus(preds=preds, labels=labels)


HAND = _corpus([0.9, 0.8, 0.2], [0, 0, 1])


# --- calibration ---

def test_perfect_confident_corpus_has_one_bin():
    corpus = _corpus([1.0] * 4, [0] * 4)
    curve = calibration_curve(corpus, 0, bins=15)
    assert [(b.predicted, b.observed, b.count) for b in curve] == [(1.0, 1.0, 4)]
    assert curve[0].index == 14


def test_hand_evaluated_curve_and_ece():
    curve = calibration_curve(HAND, 0, bins=2)
    assert [(b.index, b.count) for b in curve] == [(0, 1), (1, 2)]
    assert curve[0].predicted == pytest.approx(0.2)
    assert curve[0].observed == 0.0
    assert curve[1].predicted == pytest.approx(0.85)
    assert curve[1].observed == 1.0
    assert ece(HAND, 0, bins=2) == pytest.approx(1 / 6)


def test_ece_zero_when_predictions_match_frequencies():
    corpus = _corpus([0.5] * 4, [0, 1, 0, 1])
    assert ece(corpus, 0, bins=1) == 0.0


def test_ece_ignores_row_order(rng):
    corpus = _random_corpus(rng)
    perm = rng.permutation(corpus.size)
    shuffled = PredictionCorpus(preds=corpus.preds[perm], labels=corpus.labels[perm])
    for j in range(3):
        assert ece(shuffled, j) == pytest.approx(ece(corpus, j), abs=1e-12)
        assert 0.0 <= ece(corpus, j) <= 1.0


# --- performance ---

def test_accuracy_tie_goes_to_lower_index():
    corpus = _corpus([0.5] * 4, [0, 1, 0, 1])
    assert accuracy(corpus, 0) == 0.5
    assert accuracy(_corpus([0.7], [0]), 0) == 1.0


def test_two_model_accuracies_agree(rng):
    corpus = _random_corpus(rng, n_models=2)
    assert accuracy(corpus, 0) == accuracy(corpus, 1)


def test_perfect_predictions_score_zero():
    corpus = _corpus([1.0, 0.0, 1.0], [0, 1, 0])
    for j in range(2):
        assert mae(corpus, j) == 0.0
        assert rmse(corpus, j) == 0.0
        assert log_score(corpus, j) == 0.0
    assert log_score(corpus) == 0.0


def test_hand_evaluated_errors():
    assert mae(HAND, 0) == pytest.approx((0.1 + 0.2 + 0.2) / 3)
    assert rmse(HAND, 0) == pytest.approx(np.sqrt((0.01 + 0.04 + 0.04) / 3))


def test_log_score_matches_trainer_loss(rng):
    corpus = _random_corpus(rng)
    expected = np.mean([log_loss(p, y) for p, y in zip(corpus.preds, corpus.labels)])
    assert log_score(corpus) == pytest.approx(expected, rel=1e-12)


def test_hand_evaluated_log_scores():
    # rows of the other model add nothing to model 0's score
    assert log_score(HAND, 0) == pytest.approx(-(np.log(0.9) + np.log(0.8)) / 3, abs=1e-12)
    assert log_score(HAND, 1) == pytest.approx(-np.log(0.8) / 3, abs=1e-12)
    assert log_score(HAND) == pytest.approx(-(np.log(0.9) + 2 * np.log(0.8)) / 3, abs=1e-12)


@pytest.mark.parametrize("n_models", [2, 3, 5])
def test_per_model_log_scores_sum_to_multiclass_score(rng, n_models):
    corpus = _random_corpus(rng, n_models=n_models)
    total = sum(log_score(corpus, j) for j in range(n_models))
    assert total == pytest.approx(log_score(corpus), rel=1e-12)


def test_report_carries_per_model_log_scores(rng):
    corpus = _random_corpus(rng)
    report = build_report(corpus)
    assert [m.log_score for m in report.models] == pytest.approx([log_score(corpus, j) for j in range(3)])
    assert sum(m.log_score for m in report.models) == pytest.approx(report.log_score)


@pytest.mark.parametrize("mean_pred, expected", [(0.5, 0.0), (0.52, -0.02)])
def test_sbc_sign(mean_pred, expected):
    corpus = _corpus([mean_pred] * 2, [0, 1])
    assert sbc(corpus, 0, prior_j=0.5) == pytest.approx(expected)


def test_confusion_matrix():
    corpus = _corpus([0.9, 0.6, 0.3, 0.2, 0.8], [0, 0, 0, 1, 1])
    np.testing.assert_allclose(confusion_matrix(corpus), [[2 / 3, 1 / 3], [0.5, 0.5]])
    perfect = _corpus([0.9, 0.1], [0, 1])
    np.testing.assert_array_equal(confusion_matrix(perfect), np.eye(2))


def test_confusion_rows_sum_to_one(rng):
    np.testing.assert_allclose(confusion_matrix(_random_corpus(rng)).sum(axis=1), 1.0, atol=1e-9)


# --- reports ---

def test_build_report(rng):
    corpus = _random_corpus(rng)
    report = build_report(corpus, bins=10, labels={"repetition": "0"})
    assert report.n_datasets == 300
    assert [m.model_index for m in report.models] == [0, 1, 2]
    assert report.models[1].ece == pytest.approx(ece(corpus, 1, bins=10))
    assert report.log_score == pytest.approx(log_score(corpus))
    assert len(calibration_rows(report)) == sum(len(m.calibration) for m in report.models)
    assert [row["true_model"] for row in confusion_rows(report)] == [0, 1, 2]


def test_bootstrap_of_identical_rows_has_no_spread(rng):
    corpus = _corpus([0.7] * 20, [0] * 20)
    summary = bootstrap_metrics(corpus, n_boot=50, rng=rng)
    assert summary["log_score"].stderr == pytest.approx(0.0, abs=1e-12)
    assert summary["model0.ece"].point == pytest.approx(0.3)
    assert summary["model0.ece"].bootstrap_mean == pytest.approx(0.3)


def test_bootstrap_point_and_resample_mean(rng):
    corpus = _random_corpus(rng, size=200)
    summary = bootstrap_metrics(corpus, n_boot=300, rng=rng)
    assert summary["log_score"].point == log_score(corpus)
    assert summary["model1.accuracy"].point == accuracy(corpus, 1)
    band = 4 * summary["log_score"].stderr
    assert abs(summary["log_score"].bootstrap_mean - summary["log_score"].point) < band


def test_bootstrap_rejects_empty_corpus(rng):
    empty = PredictionCorpus(preds=np.zeros((0, 2)), labels=[])
    with pytest.raises(DomainError):
        bootstrap_metrics(empty, n_boot=10, rng=rng)


def test_bootstrap_stderr_shrinks_with_corpus_size(rng):
    small = _random_corpus(rng, size=200)
    big = PredictionCorpus(preds=np.tile(small.preds, (4, 1)), labels=np.tile(small.labels, 4))
    se_small = bootstrap_metrics(small, n_boot=400, rng=rng)["log_score"].stderr
    se_big = bootstrap_metrics(big, n_boot=400, rng=rng)["log_score"].stderr
    assert 1.6 < se_small / se_big < 2.5


def test_aggregate_bands(rng):
    reports = [build_report(_random_corpus(rng), bins=10) for _ in range(5)]
    agg = aggregate_reports(reports, labels={"family": "normal"})
    assert agg.repetitions == 5
    band = agg.models[0]["accuracy"]
    values = [r.models[0].accuracy for r in reports]
    assert band.median == pytest.approx(np.median(values))
    assert band.low <= band.median <= band.high
    assert min(values) <= band.low
    assert {row["model"] for row in agg.calibration} == {0, 1, 2}


def test_aggregate_needs_reports():
    with pytest.raises(ValueError):
        aggregate_reports([])
