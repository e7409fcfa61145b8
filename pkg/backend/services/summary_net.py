# services/summary_net.py
# Hierarchical permutation-invariant summary network and softmax head.
# Level 1 pools observations within each group, level 2 pools group summaries into z,
# and a dense head maps z to posterior model probabilities.

from __future__ import annotations

from typing import Sequence

import numpy as np

from errors import StructuralError
from models.configs import SummaryConfig
from models.dataset import HierarchicalDataset
from models.network import LayerSpec, NetworkParams
from models.reports import PmpVector
from services import autodiff as ad
from services.autodiff import BoundParams, Segments, Tensor

Layers = list[tuple[Tensor, Tensor, str]]


# --- network construction ---

def _dense_specs(prefix: str, dims: Sequence[int], last_activation: str = "relu") -> list[LayerSpec]:
    specs = []
    for k, (d_in, d_out) in enumerate(zip(dims[:-1], dims[1:])):
        act = last_activation if k == len(dims) - 2 else "relu"
        specs.append(LayerSpec(name=f"{prefix}.{k}", in_dim=d_in, out_dim=d_out, activation=act))
    return specs


def _level_specs(level: str, n_modules: int, d_in: int, d_out: int, cfg: SummaryConfig) -> list[LayerSpec]:
    """K equivariant modules followed by one invariant module."""
    w, depth = cfg.hidden_width, cfg.hidden_layers
    specs: list[LayerSpec] = []
    d = d_in
    for k in range(n_modules):
        p = f"{level}.eq{k}"
        specs += _dense_specs(f"{p}.h1", [d] + [w] * depth)
        specs += _dense_specs(f"{p}.h2", [w] + [w] * depth)
        specs += _dense_specs(f"{p}.h3", [d + w] + [w] * depth)
        d = w
    specs += _dense_specs(f"{level}.inv.h1", [d] + [w] * depth)
    specs += _dense_specs(f"{level}.inv.h2", [w] * depth + [d_out], last_activation="linear")
    return specs


def network_layout(cfg: SummaryConfig, input_dim: int, n_models: int) -> list[LayerSpec]:
    specs = _level_specs("level1", cfg.level1_modules, input_dim, cfg.group_embedding_dim, cfg)
    specs += _level_specs("level2", cfg.level2_modules, cfg.group_embedding_dim, cfg.summary_dim, cfg)
    specs += _dense_specs("head", [cfg.summary_dim] + [cfg.head_width] * cfg.head_layers + [n_models],
                          last_activation="linear")
    return specs


def init_params(layers: list[LayerSpec], rng: np.random.Generator) -> NetworkParams:
    """He-style uniform weights U(-sqrt(6/fan_in), sqrt(6/fan_in)), zero biases."""
    chunks = []
    for layer in layers:
        limit = np.sqrt(6.0 / layer.in_dim)
        chunks.append(rng.uniform(-limit, limit, size=layer.out_dim * layer.in_dim))
        chunks.append(np.zeros(layer.out_dim))
    return NetworkParams(layers=layers, values=np.concatenate(chunks))


def build_network(cfg: SummaryConfig, input_dim: int, n_models: int, rng: np.random.Generator) -> NetworkParams:
    """Fresh summary + head parameters in one manifest."""
    if n_models < 2:
        raise StructuralError("a classifier needs at least two models")
    return init_params(network_layout(cfg, input_dim, n_models), rng)


# --- graph building blocks ---

def _invariant(h1: Layers, h2: Layers, x: Tensor, seg: Segments) -> Tensor:
    return ad.mlp(h2, ad.segment_pool(ad.mlp(h1, x), seg))


def _equivariant(h1: Layers, h2: Layers, h3: Layers, x: Tensor, seg: Segments) -> Tensor:
    context = ad.gather(_invariant(h1, h2, x, seg), seg)
    return ad.mlp(h3, ad.concat([x, context], axis=1))


def _deep_invariant(bound: BoundParams, level: str, n_modules: int, x: Tensor, seg: Segments) -> Tensor:
    for k in range(n_modules):
        p = f"{level}.eq{k}"
        x = _equivariant(bound.layers(f"{p}.h1"), bound.layers(f"{p}.h2"), bound.layers(f"{p}.h3"), x, seg)
    return _invariant(bound.layers(f"{level}.inv.h1"), bound.layers(f"{level}.inv.h2"), x, seg)


def _pool_weights(mask: np.ndarray, pooling: str) -> np.ndarray:
    if pooling == "mean":
        return mask / mask.sum()
    return mask


def _set_segments(n: int, pooling: str) -> Segments:
    return Segments.from_sizes([n], _pool_weights(np.ones(n), pooling))


def batch_segments(datasets: Sequence[HierarchicalDataset], pooling: str) -> tuple[np.ndarray, Segments, Segments]:
    """
    Stack every observation of every dataset into one row matrix.
    Returns (rows, observation->group segments, group->dataset segments).
    """
    rows, group_sizes, obs_weights, dataset_sizes = [], [], [], []
    dim = datasets[0].feature_dim
    for data in datasets:
        if data.feature_dim != dim:
            raise StructuralError("all datasets in a batch must have the same feature dim")
        for g, f in zip(data.groups, data.mask_or_ones()):
            if f.sum() < 1:
                raise StructuralError("group has no observed entries after masking")
            rows.append(g)
            group_sizes.append(g.shape[0])
            obs_weights.append(_pool_weights(f, pooling))
        dataset_sizes.append(data.n_groups)
    group_weights = np.concatenate([_pool_weights(np.ones(m), pooling) for m in dataset_sizes])
    return (
        np.concatenate(rows, axis=0),
        Segments.from_sizes(group_sizes, np.concatenate(obs_weights)),
        Segments.from_sizes(dataset_sizes, group_weights),
    )


def summary_graph(bound: BoundParams, cfg: SummaryConfig, datasets: Sequence[HierarchicalDataset]) -> Tensor:
    """z for every dataset as one (B, summary_dim) tensor."""
    rows, obs_seg, group_seg = batch_segments(datasets, cfg.pooling)
    if rows.shape[1] != bound.params.layers[0].in_dim:
        raise StructuralError(f"datasets have {rows.shape[1]} features, network expects {bound.params.layers[0].in_dim}")
    groups = _deep_invariant(bound, "level1", cfg.level1_modules, ad.constant(rows), obs_seg)
    return _deep_invariant(bound, "level2", cfg.level2_modules, groups, group_seg)


def logits_graph(bound: BoundParams, cfg: SummaryConfig, datasets: Sequence[HierarchicalDataset]) -> Tensor:
    return ad.mlp(bound.layers("head"), summary_graph(bound, cfg, datasets))


# --- numpy-facing operations ---

def _as_rows(inputs) -> np.ndarray:
    x = np.asarray(inputs, dtype=np.float64)
    if x.ndim == 1:
        x = x[:, None]
    if x.shape[0] == 0:
        raise StructuralError("input set is empty")
    return x


def invariant_module(inputs, nets: tuple[NetworkParams, NetworkParams], pooling: str = "mean") -> np.ndarray:
    """h2(pool_n h1(x_n)) for a set of row vectors."""
    x = _as_rows(inputs)
    h1, h2 = (BoundParams(n, requires_grad=False).layers() for n in nets)
    return _invariant(h1, h2, ad.constant(x), _set_segments(x.shape[0], pooling)).value[0]


def equivariant_module(inputs, nets: tuple[NetworkParams, NetworkParams, NetworkParams], pooling: str = "mean") -> np.ndarray:
    """h3([x_n, h2(pool h1(x))]) for every n; one output row per input row."""
    x = _as_rows(inputs)
    h1, h2, h3 = (BoundParams(n, requires_grad=False).layers() for n in nets)
    return _equivariant(h1, h2, h3, ad.constant(x), _set_segments(x.shape[0], pooling)).value


def deep_invariant_module(
    inputs,
    stack: Sequence[tuple[NetworkParams, ...]],
    pooling: str = "mean",
) -> np.ndarray:
    """Equivariant modules stack[:-1] (each (h1, h2, h3)) followed by the invariant module stack[-1]."""
    x = _as_rows(inputs)
    seg = _set_segments(x.shape[0], pooling)
    t = ad.constant(x)
    for nets in stack[:-1]:
        h1, h2, h3 = (BoundParams(n, requires_grad=False).layers() for n in nets)
        t = _equivariant(h1, h2, h3, t, seg)
    h1, h2 = (BoundParams(n, requires_grad=False).layers() for n in stack[-1])
    return _invariant(h1, h2, t, seg).value[0]


def hierarchical_summary(data: HierarchicalDataset, cfg: SummaryConfig, params: NetworkParams) -> np.ndarray:
    """Dataset summary z (length summary_dim)."""
    return summary_graph(BoundParams(params, requires_grad=False), cfg, [data]).value[0]


def classify(z, head: NetworkParams) -> PmpVector:
    """Dense head then softmax."""
    logits = ad.mlp(BoundParams(head, requires_grad=False).layers(), ad.constant(np.asarray(z, dtype=np.float64)))
    return PmpVector(probs=ad.softmax(logits).value)


def predict(
    params: NetworkParams,
    cfg: SummaryConfig,
    datasets: Sequence[HierarchicalDataset],
    chunk: int = 64,
) -> np.ndarray:
    """S x J matrix of predicted PMPs."""
    bound = BoundParams(params, requires_grad=False)
    out = []
    for start in range(0, len(datasets), chunk):
        out.append(ad.softmax(logits_graph(bound, cfg, datasets[start:start + chunk])).value)
    if not out:
        return np.zeros((0, params.layers[-1].out_dim))
    return np.concatenate(out, axis=0)
