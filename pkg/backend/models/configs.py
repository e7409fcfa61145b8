# models/configs.py
# Configuration schemas: summary network, training, quadrature, validation and the full run config.

from typing import Literal

from pydantic import BaseModel, Field, field_validator, model_validator

from config.settings import (
    CALIBRATION_BINS,
    DEFAULT_ADAM_LR,
    DEFAULT_BATCH_SIZE,
    DEFAULT_CHECKPOINT_EVERY,
    SCHEMA_VERSION,
)
from models.model_spec import FAMILIES

Pooling = Literal["mean", "sum"]


class SummaryConfig(BaseModel):
    """Hierarchical summary network + softmax head architecture."""
    level1_modules: int = Field(2, ge=0, description="K: equivariant modules at the observation level")
    level2_modules: int = Field(2, ge=0, description="K': equivariant modules at the group level")
    hidden_width: int = Field(64, gt=0, description="Width of every hidden layer of the h-nets")
    hidden_layers: int = Field(2, gt=0, description="Dense layers per h-net")
    group_embedding_dim: int = Field(32, gt=0, description="Dimension of each group summary")
    summary_dim: int = Field(64, gt=0, description="Dimension of the dataset summary z")
    head_width: int = Field(64, gt=0, description="Width of the three head layers")
    head_layers: int = Field(3, gt=0, description="Fully connected layers before the softmax output")
    pooling: Pooling = Field("mean", description="Pooling inside invariant/equivariant modules")


class SizeDistribution(BaseModel):
    """Discrete-uniform size on [low, high]; fixed when low == high."""
    low: int = Field(..., ge=1)
    high: int = Field(..., ge=1)

    @model_validator(mode="after")
    def _ordered(self) -> "SizeDistribution":
        if self.low > self.high:
            raise ValueError(f"low={self.low} exceeds high={self.high}")
        return self

    @classmethod
    def fixed(cls, n: int) -> "SizeDistribution":
        return cls(low=n, high=n)

    def draw(self, rng) -> int:
        return self.low if self.low == self.high else int(rng.integers(self.low, self.high + 1))


class MaskAugmentation(BaseModel):
    """Discretised normal count of masked trials per group."""
    mean: float = Field(..., ge=0)
    sd: float = Field(0.0, ge=0)


class TrainingConfig(BaseModel):
    """Simulation-based training settings."""
    batch_size: int = Field(DEFAULT_BATCH_SIZE, ge=1)
    steps: int = Field(1000, ge=0, description="Online steps (ignored when epochs is set)")
    epochs: int | None = Field(None, ge=0, description="Offline passes over the store")
    optimizer: Literal["adam", "rmsprop"] = "adam"
    initial_lr: float = Field(DEFAULT_ADAM_LR, gt=0)
    schedule: Literal["cosine", "constant"] = "cosine"
    regime: Literal["online", "offline"] = "online"
    groups: SizeDistribution = Field(default_factory=lambda: SizeDistribution.fixed(25))
    observations: SizeDistribution = Field(default_factory=lambda: SizeDistribution.fixed(25))
    mask: MaskAugmentation | None = None
    store_per_model: int = Field(1000, ge=1, description="Offline datasets simulated per model")
    validation_size: int = Field(0, ge=0, description="Held-out datasets evaluated at each checkpoint")
    checkpoint_every: int = Field(DEFAULT_CHECKPOINT_EVERY, ge=1)
    seed: int = 0


class QuadratureConfig(BaseModel):
    """Tensor-product Gauss-Legendre settings for the normal-model oracle."""
    nodes: int = Field(64, ge=16, description="Nodes per dimension")
    prior_mass: float = Field(0.99999, gt=0.9999, lt=1, description="Prior mass covered by the initial bounds")
    zoom_iterations: int = Field(3, ge=0)
    zoom_nats: float = Field(40.0, gt=0, description="Keep the region within this many nats of the maximum")
    tolerance: float = Field(1e-3, gt=0, description="Allowed change in nats under node doubling")


class ValidationConfig(BaseModel):
    """Held-out calibration protocol."""
    datasets: int = Field(5000, ge=1, description="S: validation datasets per repetition")
    repetitions: int = Field(25, ge=1)
    groups: SizeDistribution = Field(default_factory=lambda: SizeDistribution.fixed(25))
    observations: SizeDistribution = Field(default_factory=lambda: SizeDistribution.fixed(25))
    bins: int = Field(CALIBRATION_BINS, ge=1)
    grid_groups: list[int] = Field(default_factory=list, description="M values for grid mode")
    grid_observations: list[int] = Field(default_factory=list, description="N_m values for grid mode")


class RunConfig(BaseModel):
    """Everything one experiment needs; echoed into every run directory."""
    schema_version: int = Field(SCHEMA_VERSION)
    experiment: str = Field("default", min_length=1)
    model_set: list[str] = Field(default_factory=lambda: ["normal-M1", "normal-M2"])
    summary: SummaryConfig = Field(default_factory=SummaryConfig)
    training: TrainingConfig = Field(default_factory=TrainingConfig)
    finetune: TrainingConfig | None = Field(None, description="Used instead of `training` with --pretrained")
    validation: ValidationConfig = Field(default_factory=ValidationConfig)
    quadrature: QuadratureConfig = Field(default_factory=QuadratureConfig)
    output_dir: str | None = None
    seed: int = 0

    @field_validator("schema_version")
    @classmethod
    def _known_version(cls, v: int) -> int:
        if v != SCHEMA_VERSION:
            raise ValueError(f"unsupported schema_version {v} (expected {SCHEMA_VERSION})")
        return v

    @field_validator("model_set")
    @classmethod
    def _known_families(cls, v: list[str]) -> list[str]:
        unknown = [f for f in v if f not in FAMILIES]
        if unknown:
            raise ValueError(f"unknown families: {', '.join(unknown)}")
        if len(v) < 2:
            raise ValueError("model comparison needs at least two families")
        return v
