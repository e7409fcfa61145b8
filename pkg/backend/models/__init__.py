# models package – pydantic schemas for datasets, networks, configs and reports
from .configs import (
    MaskAugmentation,
    QuadratureConfig,
    RunConfig,
    SizeDistribution,
    SummaryConfig,
    TrainingConfig,
    ValidationConfig,
)
from .dataset import DatasetMeta, HierarchicalDataset
from .model_spec import EamParams, ModelSpec, model_spec
from .network import AdamState, LayerSpec, LrSchedule, NetworkParams, RmspropState
from .reports import (
    AggregateReport,
    BayesFactorMatrix,
    CalibrationBin,
    LogMarginal,
    MetricsReport,
    ModelMetrics,
    PmpVector,
    PredictionCorpus,
    TraceRow,
)

__all__ = [
    "MaskAugmentation",
    "QuadratureConfig",
    "RunConfig",
    "SizeDistribution",
    "SummaryConfig",
    "TrainingConfig",
    "ValidationConfig",
    "DatasetMeta",
    "HierarchicalDataset",
    "EamParams",
    "ModelSpec",
    "model_spec",
    "AdamState",
    "LayerSpec",
    "LrSchedule",
    "NetworkParams",
    "RmspropState",
    "AggregateReport",
    "BayesFactorMatrix",
    "CalibrationBin",
    "LogMarginal",
    "MetricsReport",
    "ModelMetrics",
    "PmpVector",
    "PredictionCorpus",
    "TraceRow",
]
