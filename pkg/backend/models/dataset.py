# models/dataset.py
# HierarchicalDataset schema: ragged groups of observations, optional per-observation mask, meta.

from typing import Any

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator


class DatasetMeta(BaseModel):
    """Provenance of a dataset: generating family, true model index, seed."""
    family: str | None = Field(None, description="Generating model family, e.g. 'normal-M1'")
    model_index: int | None = Field(None, description="Index of the true model in the model set")
    seed: int | None = Field(None, description="Seed of the RNG substream that produced it")


class HierarchicalDataset(BaseModel):
    """
    Two-level data {x_mn}: `groups[m]` is an N_m x D array of observations.
    `mask[m]` (optional) is a length-N_m 0/1 vector, 1 = observed. Masked observations
    carry value 0 and are excluded from every pooling step.
    """
    model_config = ConfigDict(arbitrary_types_allowed=True)

    groups: list[np.ndarray] = Field(..., description="M arrays of shape N_m x D")
    mask: list[np.ndarray] | None = Field(None, description="Optional M vectors of length N_m (1 = observed)")
    meta: DatasetMeta = Field(default_factory=DatasetMeta)

    @field_validator("groups", mode="before")
    @classmethod
    def _as_float_groups(cls, v: Any) -> list[np.ndarray]:
        out = []
        for g in v:
            arr = np.asarray(g, dtype=np.float64)
            if arr.ndim == 1:
                arr = arr[:, None]
            out.append(arr)
        return out

    @field_validator("mask", mode="before")
    @classmethod
    def _as_float_mask(cls, v: Any) -> list[np.ndarray] | None:
        if v is None:
            return None
        return [np.asarray(m, dtype=np.float64).reshape(-1) for m in v]

    @model_validator(mode="after")
    def _check_shapes(self) -> "HierarchicalDataset":
        if not self.groups:
            raise ValueError("dataset needs at least one group")
        dim = self.groups[0].shape[1]
        for m, g in enumerate(self.groups):
            if g.ndim != 2 or g.shape[0] < 1:
                raise ValueError(f"group {m} must be a non-empty N_m x D array")
            if g.shape[1] != dim:
                raise ValueError(f"group {m} has {g.shape[1]} features, expected {dim}")
        if self.mask is not None:
            if len(self.mask) != len(self.groups):
                raise ValueError("mask must have one vector per group")
            for m, (g, f) in enumerate(zip(self.groups, self.mask)):
                if f.shape[0] != g.shape[0]:
                    raise ValueError(f"mask of group {m} has length {f.shape[0]}, expected {g.shape[0]}")
                if not np.all((f == 0.0) | (f == 1.0)):
                    raise ValueError(f"mask of group {m} must be 0/1")
                if f.sum() < 1:
                    raise ValueError(f"group {m} has no observed entries")
        return self

    @property
    def n_groups(self) -> int:
        return len(self.groups)

    @property
    def feature_dim(self) -> int:
        return int(self.groups[0].shape[1])

    @property
    def group_sizes(self) -> list[int]:
        return [int(g.shape[0]) for g in self.groups]

    def mask_or_ones(self) -> list[np.ndarray]:
        """Per-group 0/1 vectors; all ones when the dataset has no mask."""
        if self.mask is not None:
            return self.mask
        return [np.ones(g.shape[0]) for g in self.groups]

    def observed(self, m: int) -> np.ndarray:
        """Rows of group m that are observed."""
        if self.mask is None:
            return self.groups[m]
        return self.groups[m][self.mask[m] > 0]

    def to_document(self) -> dict:
        """JSON-ready dict: {"meta": {...}, "groups": [[[f, ...], ...], ...], "mask": optional}."""
        doc: dict[str, Any] = {
            "meta": self.meta.model_dump(),
            "groups": [g.tolist() for g in self.groups],
        }
        if self.mask is not None:
            doc["mask"] = [[int(v) for v in f] for f in self.mask]
        return doc

    @classmethod
    def from_document(cls, doc: dict) -> "HierarchicalDataset":
        return cls(
            groups=doc["groups"],
            mask=doc.get("mask"),
            meta=DatasetMeta(**(doc.get("meta") or {})),
        )
