# services/metrics.py
# Calibration and performance diagnostics over corpora of (predicted PMPs, true model) pairs.

import logging
from typing import Sequence

import numpy as np

from config.settings import CALIBRATION_BINS, DEFAULT_BOOTSTRAP, PMP_FLOOR
from errors import DomainError
from models.reports import (
    AggregateReport,
    CalibrationBin,
    MetricBand,
    MetricsReport,
    MetricSummary,
    ModelMetrics,
    PredictionCorpus,
)

logger = logging.getLogger(__name__)

SCALAR_METRICS = ("ece", "accuracy", "mae", "rmse", "log_score", "sbc")


def _bin_index(p: np.ndarray, bins: int) -> np.ndarray:
    return np.minimum(np.floor(p * bins).astype(np.int64), bins - 1)


def calibration_curve(corpus: PredictionCorpus, j: int, bins: int = CALIBRATION_BINS) -> list[CalibrationBin]:
    """
    Equally spaced bins over the predicted probability of model j. For every non-empty bin:
    PP = mean prediction, TP = fraction of rows whose true model is j.
    """
    if bins < 1:
        raise ValueError("need at least one bin")
    p = corpus.preds[:, j]
    hit = (corpus.labels == j).astype(np.float64)
    idx = _bin_index(p, bins)
    out = []
    for i in np.unique(idx):
        sel = idx == i
        out.append(CalibrationBin(index=int(i), predicted=float(p[sel].mean()), observed=float(hit[sel].mean()),
                                  count=int(sel.sum())))
    return out


def ece(corpus: PredictionCorpus, j: int, bins: int = CALIBRATION_BINS) -> float:
    """sum_i |B_i| / S * |PP_i - TP_i|."""
    if corpus.size == 0:
        return 0.0
    curve = calibration_curve(corpus, j, bins)
    return float(sum(b.count * abs(b.predicted - b.observed) for b in curve) / corpus.size)


def predicted_labels(corpus: PredictionCorpus) -> np.ndarray:
    """Argmax prediction per row; ties go to the lower model index."""
    return np.argmax(corpus.preds, axis=1)


def accuracy(corpus: PredictionCorpus, j: int) -> float:
    """Fraction of rows where (argmax == j) agrees with (label == j)."""
    return float(np.mean((predicted_labels(corpus) == j) == (corpus.labels == j)))


def mae(corpus: PredictionCorpus, j: int) -> float:
    return float(np.mean(np.abs((corpus.labels == j) - corpus.preds[:, j])))


def rmse(corpus: PredictionCorpus, j: int) -> float:
    return float(np.sqrt(np.mean(((corpus.labels == j) - corpus.preds[:, j]) ** 2)))


def log_score(corpus: PredictionCorpus, j: int | None = None) -> float:
    """
    j=None: mean multiclass log loss -log p_label.
    j given: -(1/S) * sum of log p_j over the rows whose true model is j. Other rows add
    nothing, so the per-model scores sum to the multiclass score.
    """
    if j is None:
        p = corpus.preds[np.arange(corpus.size), corpus.labels]
        return float(-np.mean(np.log(np.maximum(p, PMP_FLOOR))))
    logp = np.log(np.maximum(corpus.preds[:, j], PMP_FLOOR))
    return float(-np.sum(np.where(corpus.labels == j, logp, 0.0)) / corpus.size)


def sbc(corpus: PredictionCorpus, j: int, prior_j: float | None = None) -> float:
    """Prior probability of model j minus its mean predicted probability."""
    prior = 1.0 / corpus.n_models if prior_j is None else prior_j
    return float(prior - corpus.preds[:, j].mean())


def confusion_matrix(corpus: PredictionCorpus) -> np.ndarray:
    """Row = true model, column = argmax prediction, rows normalised (all zero for absent models)."""
    n = corpus.n_models
    counts = np.zeros((n, n))
    np.add.at(counts, (corpus.labels, predicted_labels(corpus)), 1.0)
    totals = counts.sum(axis=1, keepdims=True)
    return np.divide(counts, totals, out=np.zeros_like(counts), where=totals > 0)


def model_metrics(corpus: PredictionCorpus, j: int, bins: int = CALIBRATION_BINS, prior_j: float | None = None) -> ModelMetrics:
    return ModelMetrics(
        model_index=j,
        ece=ece(corpus, j, bins),
        accuracy=accuracy(corpus, j),
        mae=mae(corpus, j),
        rmse=rmse(corpus, j),
        log_score=log_score(corpus, j),
        sbc=sbc(corpus, j, prior_j),
        calibration=calibration_curve(corpus, j, bins),
    )


def build_report(
    corpus: PredictionCorpus,
    bins: int = CALIBRATION_BINS,
    prior: Sequence[float] | None = None,
    labels: dict[str, str] | None = None,
) -> MetricsReport:
    """Full per-model metrics, multiclass log score and confusion matrix for one corpus."""
    priors = [None] * corpus.n_models if prior is None else list(prior)
    return MetricsReport(
        n_datasets=corpus.size,
        bins=bins,
        models=[model_metrics(corpus, j, bins, priors[j]) for j in range(corpus.n_models)],
        log_score=log_score(corpus),
        confusion=confusion_matrix(corpus).tolist(),
        labels=labels or {},
    )


def _scalar_metrics(corpus: PredictionCorpus, bins: int) -> dict[str, float]:
    out = {"log_score": log_score(corpus)}
    for j in range(corpus.n_models):
        out[f"model{j}.ece"] = ece(corpus, j, bins)
        out[f"model{j}.accuracy"] = accuracy(corpus, j)
        out[f"model{j}.mae"] = mae(corpus, j)
        out[f"model{j}.rmse"] = rmse(corpus, j)
        out[f"model{j}.log_score"] = log_score(corpus, j)
        out[f"model{j}.sbc"] = sbc(corpus, j)
    return out


def bootstrap_metrics(
    corpus: PredictionCorpus,
    n_boot: int = DEFAULT_BOOTSTRAP,
    rng: np.random.Generator | None = None,
    bins: int = CALIBRATION_BINS,
) -> dict[str, MetricSummary]:
    """
    Resample rows with replacement n_boot times. Keys are "log_score" and "model<j>.<metric>";
    point is the full-corpus value, bootstrap_mean and stderr the mean and standard deviation
    over the resampled corpora.
    """
    if corpus.size == 0:
        raise DomainError("cannot bootstrap an empty corpus")
    if n_boot < 1:
        raise DomainError(f"n_boot must be positive, got {n_boot}")
    rng = rng if rng is not None else np.random.default_rng()
    point = _scalar_metrics(corpus, bins)
    draws: dict[str, list[float]] = {k: [] for k in point}
    for _ in range(n_boot):
        idx = rng.integers(0, corpus.size, size=corpus.size)
        sample = PredictionCorpus(preds=corpus.preds[idx], labels=corpus.labels[idx])
        for k, v in _scalar_metrics(sample, bins).items():
            draws[k].append(v)
    return {
        k: MetricSummary(
            point=point[k],
            bootstrap_mean=float(np.mean(draws[k])),
            stderr=float(np.std(draws[k], ddof=1)) if n_boot > 1 else 0.0,
        )
        for k in point
    }


def _band(values: Sequence[float]) -> MetricBand:
    v = np.asarray(values, dtype=np.float64)
    return MetricBand(median=float(np.median(v)), low=float(np.percentile(v, 2.5)), high=float(np.percentile(v, 97.5)))


def aggregate_reports(reports: Sequence[MetricsReport], labels: dict[str, str] | None = None) -> AggregateReport:
    """Median and 2.5/97.5 percentile bands over repetitions, for scalars and calibration bins."""
    if not reports:
        raise ValueError("nothing to aggregate")
    n_models = len(reports[0].models)
    models = []
    for j in range(n_models):
        models.append({name: _band([getattr(r.models[j], name) for r in reports]) for name in SCALAR_METRICS})
    calibration = []
    for j in range(n_models):
        per_bin: dict[int, list[CalibrationBin]] = {}
        for r in reports:
            for b in r.models[j].calibration:
                per_bin.setdefault(b.index, []).append(b)
        for i in sorted(per_bin):
            observed = _band([b.observed for b in per_bin[i]])
            calibration.append({
                "model": j,
                "bin": i,
                "predicted_median": float(np.median([b.predicted for b in per_bin[i]])),
                "observed_median": observed.median,
                "observed_low": observed.low,
                "observed_high": observed.high,
                "repetitions": len(per_bin[i]),
            })
    return AggregateReport(
        repetitions=len(reports),
        n_datasets=reports[0].n_datasets,
        bins=reports[0].bins,
        models=models,
        log_score=_band([r.log_score for r in reports]),
        calibration=calibration,
        labels=labels or {},
    )


def calibration_rows(report: MetricsReport) -> list[dict]:
    """Flat CSV rows of every calibration bin in a report."""
    return [
        {"model": m.model_index, "bin": b.index, "predicted": b.predicted, "observed": b.observed, "count": b.count}
        for m in report.models for b in m.calibration
    ]


def confusion_rows(report: MetricsReport) -> list[dict]:
    return [
        {"true_model": i, **{f"pred_{k}": v for k, v in enumerate(row)}}
        for i, row in enumerate(report.confusion)
    ]
