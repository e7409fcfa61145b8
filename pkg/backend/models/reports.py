# models/reports.py
# Output schemas: PMP vectors, prediction corpora, metrics reports, oracle results, loss traces.

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from config.settings import SCHEMA_VERSION


class PmpVector(BaseModel):
    """Posterior model probabilities over J candidate models."""
    model_config = ConfigDict(arbitrary_types_allowed=True)

    probs: np.ndarray = Field(..., description="Length-J probability vector")

    @field_validator("probs", mode="before")
    @classmethod
    def _as_vector(cls, v) -> np.ndarray:
        return np.asarray(v, dtype=np.float64).reshape(-1)

    @model_validator(mode="after")
    def _check(self) -> "PmpVector":
        p = self.probs
        if np.any(p < 0) or np.any(p > 1):
            raise ValueError("probabilities must lie in [0, 1]")
        if abs(p.sum() - 1.0) > 1e-9:
            raise ValueError(f"probabilities sum to {p.sum()}, not 1")
        return self

    def __len__(self) -> int:
        return int(self.probs.shape[0])


class PredictionCorpus(BaseModel):
    """S predicted PMP rows with their true model indices."""
    model_config = ConfigDict(arbitrary_types_allowed=True)

    preds: np.ndarray = Field(..., description="S x J predicted PMPs")
    labels: np.ndarray = Field(..., description="S true model indices in [0, J)")

    @field_validator("preds", mode="before")
    @classmethod
    def _as_matrix(cls, v) -> np.ndarray:
        return np.atleast_2d(np.asarray(v, dtype=np.float64))

    @field_validator("labels", mode="before")
    @classmethod
    def _as_labels(cls, v) -> np.ndarray:
        return np.asarray(v, dtype=np.int64).reshape(-1)

    @model_validator(mode="after")
    def _check(self) -> "PredictionCorpus":
        if self.preds.shape[0] != self.labels.shape[0]:
            raise ValueError("preds and labels must have the same number of rows")
        if np.any(np.abs(self.preds.sum(axis=1) - 1.0) > 1e-9):
            raise ValueError("every prediction row must sum to 1")
        if np.any(self.labels < 0) or np.any(self.labels >= self.n_models):
            raise ValueError("labels must lie in [0, J)")
        return self

    @property
    def n_models(self) -> int:
        return int(self.preds.shape[1])

    @property
    def size(self) -> int:
        return int(self.preds.shape[0])


class CalibrationBin(BaseModel):
    """One non-empty bin of a calibration curve."""
    index: int = Field(..., ge=0, description="Position of the bin on the equally spaced grid")
    predicted: float = Field(..., description="PP: mean predicted probability in the bin")
    observed: float = Field(..., description="TP: fraction of rows whose true model is j")
    count: int = Field(..., ge=1)


class ModelMetrics(BaseModel):
    """Calibration and performance of the predictions for one model."""
    model_index: int
    ece: float = Field(..., ge=0, le=1)
    accuracy: float
    mae: float
    rmse: float
    log_score: float
    sbc: float
    calibration: list[CalibrationBin] = Field(default_factory=list)


class MetricsReport(BaseModel):
    """Per-model metrics plus the confusion matrix for one validation corpus."""
    schema_version: int = SCHEMA_VERSION
    n_datasets: int
    bins: int
    models: list[ModelMetrics]
    log_score: float = Field(..., description="Mean multiclass log loss over the corpus")
    confusion: list[list[float]] = Field(..., description="Row = true model, column = argmax prediction")
    labels: dict[str, str] = Field(default_factory=dict, description="Free-form tags (repetition, grid cell)")


class MetricSummary(BaseModel):
    """One metric on the full corpus, with its bootstrap mean and standard error."""
    point: float = Field(..., description="Value on the full (unresampled) corpus")
    bootstrap_mean: float = Field(..., description="Mean over the bootstrap resamples")
    stderr: float = Field(..., description="Standard deviation over the bootstrap resamples")


class LogMarginal(BaseModel):
    """Natural log of p(x | M_j)."""
    value: float
    model_index: int

    @field_validator("value")
    @classmethod
    def _finite(cls, v: float) -> float:
        if not np.isfinite(v):
            raise ValueError("log marginal likelihood must be finite")
        return v


class BayesFactorMatrix(BaseModel):
    """BF_jk for every ordered pair; `saturated` marks clamped entries."""
    model_config = ConfigDict(arbitrary_types_allowed=True)

    values: np.ndarray = Field(..., description="J x J Bayes factors")
    saturated: bool = False


class TraceRow(BaseModel):
    """One row of the training loss trace."""
    step: int
    lr: float
    train_loss: float
    val_loss: float | None = None


class MetricBand(BaseModel):
    """Median and 2.5 / 97.5 percentile band of one metric across repetitions."""
    median: float
    low: float
    high: float


class AggregateReport(BaseModel):
    """Repetition summary written next to the per-repetition reports."""
    schema_version: int = SCHEMA_VERSION
    repetitions: int
    n_datasets: int
    bins: int
    models: list[dict[str, MetricBand]] = Field(..., description="Per model: metric name -> band")
    log_score: MetricBand
    calibration: list[dict] = Field(default_factory=list, description="Rows of per-bin percentile bands")
    labels: dict[str, str] = Field(default_factory=dict)
