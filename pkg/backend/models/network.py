# models/network.py
# Network manifest (named dense layers over one flat float64 vector) and optimizer state schemas.

from typing import Literal

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

Activation = Literal["relu", "linear"]


class LayerSpec(BaseModel):
    """One dense layer: out = act(W @ x + b) with W of shape out_dim x in_dim."""
    name: str = Field(..., description="Dotted name; the part before the last dot is the subnet")
    in_dim: int = Field(..., gt=0)
    out_dim: int = Field(..., gt=0)
    activation: Activation = Field("relu")

    @property
    def subnet(self) -> str:
        return self.name.rsplit(".", 1)[0] if "." in self.name else ""

    @property
    def size(self) -> int:
        return self.out_dim * self.in_dim + self.out_dim


class NetworkParams(BaseModel):
    """
    All trainable weights and biases phi. Layers are stored back to back in `values`:
    W (row-major, out x in) followed by b, in declaration order.
    """
    model_config = ConfigDict(arbitrary_types_allowed=True)

    layers: list[LayerSpec] = Field(..., description="Structural manifest in declaration order")
    values: np.ndarray = Field(..., description="Flat float64 vector of length total_count")

    @field_validator("values", mode="before")
    @classmethod
    def _as_vector(cls, v) -> np.ndarray:
        return np.ascontiguousarray(np.asarray(v, dtype=np.float64).reshape(-1))

    @model_validator(mode="after")
    def _check(self) -> "NetworkParams":
        expected = sum(layer.size for layer in self.layers)
        if self.values.shape[0] != expected:
            raise ValueError(f"values has {self.values.shape[0]} entries, manifest needs {expected}")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("parameters must be finite")
        for prev, nxt in zip(self.layers, self.layers[1:]):
            if prev.subnet == nxt.subnet and prev.out_dim != nxt.in_dim:
                raise ValueError(f"{prev.name} outputs {prev.out_dim} but {nxt.name} expects {nxt.in_dim}")
        return self

    @property
    def total_count(self) -> int:
        return int(self.values.shape[0])

    def offsets(self) -> list[int]:
        out, pos = [], 0
        for layer in self.layers:
            out.append(pos)
            pos += layer.size
        return out

    def weight(self, i: int) -> np.ndarray:
        layer, start = self.layers[i], self.offsets()[i]
        return self.values[start:start + layer.out_dim * layer.in_dim].reshape(layer.out_dim, layer.in_dim)

    def bias(self, i: int) -> np.ndarray:
        layer, start = self.layers[i], self.offsets()[i]
        start += layer.out_dim * layer.in_dim
        return self.values[start:start + layer.out_dim]

    def layer_indices(self, prefix: str) -> list[int]:
        return [i for i, layer in enumerate(self.layers) if layer.subnet == prefix]

    def subnet(self, prefix: str) -> "NetworkParams":
        """Copy of the layers whose subnet name equals `prefix`."""
        idx = self.layer_indices(prefix)
        if not idx:
            raise KeyError(f"no subnet named {prefix!r}")
        offs = self.offsets()
        chunks = [self.values[offs[i]:offs[i] + self.layers[i].size] for i in idx]
        return NetworkParams(layers=[self.layers[i] for i in idx], values=np.concatenate(chunks))

    def with_values(self, values: np.ndarray) -> "NetworkParams":
        return NetworkParams(layers=self.layers, values=values)

    def copy(self) -> "NetworkParams":
        return self.with_values(self.values.copy())


def dense_params(name: str, weights: list, biases: list, activations: list[str]) -> NetworkParams:
    """Build a NetworkParams chain from explicit weight matrices and bias vectors."""
    layers, chunks = [], []
    for k, (w, b, act) in enumerate(zip(weights, biases, activations)):
        w = np.atleast_2d(np.asarray(w, dtype=np.float64))
        b = np.asarray(b, dtype=np.float64).reshape(-1)
        layers.append(LayerSpec(name=f"{name}.{k}", in_dim=w.shape[1], out_dim=w.shape[0], activation=act))
        chunks += [w.reshape(-1), b]
    return NetworkParams(layers=layers, values=np.concatenate(chunks))


class LrSchedule(BaseModel):
    """Cosine decay from initial_lr to 0 over total_steps."""
    initial_lr: float = Field(..., gt=0)
    total_steps: int = Field(..., gt=0)


class AdamState(BaseModel):
    """First/second moments of Adam, one entry per parameter."""
    model_config = ConfigDict(arbitrary_types_allowed=True)

    first_moment: np.ndarray
    second_moment: np.ndarray
    step: int = Field(0, ge=0)
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @property
    def tag(self) -> str:
        return "adam"


class RmspropState(BaseModel):
    """Running mean of squared gradients for RMSprop."""
    model_config = ConfigDict(arbitrary_types_allowed=True)

    second_moment: np.ndarray
    step: int = Field(0, ge=0)
    decay: float = 0.9
    eps: float = 1e-8

    @property
    def tag(self) -> str:
        return "rmsprop"


OptimizerState = AdamState | RmspropState
