# services/trainer.py
# Simulation-based training of the summary network + softmax head with the log-loss objective.
# Online training simulates every batch fresh; offline training runs epochs over a stored corpus.

import logging
import math
from concurrent.futures import Executor, ProcessPoolExecutor
from pathlib import Path
from typing import Sequence

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator

from config.settings import PMP_FLOOR
from errors import NumericalError, StructuralError, TrainingAborted
from models.configs import MaskAugmentation, SizeDistribution, SummaryConfig, TrainingConfig
from models.dataset import HierarchicalDataset
from models.model_spec import ModelSpec
from models.network import LrSchedule, NetworkParams
from models.reports import PmpVector, TraceRow
from services import autodiff as ad
from services.checkpoint import save_checkpoint
from services.optim import cosine_lr, init_optimizer, optimizer_step
from services.samplers import sample_truncated_normal
from services.simulators import simulate_dataset
from services.store import write_csv
from services.summary_net import build_network, logits_graph, predict

logger = logging.getLogger(__name__)


class LabeledBatch(BaseModel):
    """B simulated datasets with one-hot true-model labels."""
    model_config = ConfigDict(arbitrary_types_allowed=True)

    datasets: list[HierarchicalDataset]
    labels: np.ndarray = Field(..., description="B x J one-hot rows")

    @model_validator(mode="after")
    def _one_hot(self) -> "LabeledBatch":
        y = self.labels
        if y.ndim != 2 or y.shape[0] != len(self.datasets):
            raise ValueError("labels must be a B x J matrix with one row per dataset")
        if not np.all((y == 0) | (y == 1)) or not np.all(y.sum(axis=1) == 1):
            raise ValueError("every label row must contain exactly one 1")
        return self

    @property
    def indices(self) -> np.ndarray:
        return self.labels.argmax(axis=1)


def one_hot(indices: Sequence[int], n_models: int) -> np.ndarray:
    idx = np.asarray(indices, dtype=np.int64)
    out = np.zeros((idx.size, n_models))
    out[np.arange(idx.size), idx] = 1.0
    return out


def log_loss(pmp: PmpVector | np.ndarray, label) -> float:
    """-sum_j y_j log max(p_j, 1e-12); `label` is a one-hot vector or a model index."""
    p = pmp.probs if isinstance(pmp, PmpVector) else np.asarray(pmp, dtype=np.float64)
    y = np.asarray(label, dtype=np.float64)
    if y.ndim == 0:
        y = one_hot([int(label)], p.shape[-1])[0]
    return float(-(y * np.log(np.maximum(p, PMP_FLOOR))).sum())


def batch_loss(bound: ad.BoundParams, cfg: SummaryConfig, datasets: Sequence[HierarchicalDataset], labels: np.ndarray) -> ad.Tensor:
    """Mean log loss of a batch as a graph node."""
    probs = ad.softmax(logits_graph(bound, cfg, datasets))
    return ad.total(ad.mul(ad.constant(labels), ad.log(probs, floor=PMP_FLOOR))) * (-1.0 / len(datasets))


def evaluate_loss(params: NetworkParams, cfg: SummaryConfig, datasets: Sequence[HierarchicalDataset], labels) -> float:
    """Mean log loss over held-out datasets with integer labels."""
    preds = predict(params, cfg, datasets)
    y = one_hot(labels, preds.shape[1])
    return float(-(y * np.log(np.maximum(preds, PMP_FLOOR))).sum(axis=1).mean())


# --- data ---

def apply_missingness(data: HierarchicalDataset, count_dist: MaskAugmentation, rng: np.random.Generator) -> HierarchicalDataset:
    """
    Mask a discretised-normal number of observations per group, chosen uniformly without
    replacement among the observed ones. Masked values are set to 0. At least one observation
    stays observed, so groups with a single observation are left alone.
    """
    groups, masks = [], []
    for g, f in zip(data.groups, data.mask_or_ones()):
        g, f = g.copy(), f.copy()
        observed = np.flatnonzero(f)
        cap = observed.size - 1
        if cap >= 1:
            if count_dist.sd == 0:
                k = int(np.rint(count_dist.mean))
            else:
                k = int(np.rint(sample_truncated_normal(count_dist.mean, count_dist.sd, 0.5, cap + 0.5, rng)))
            k = min(max(k, 1), cap)
            hidden = rng.choice(observed, size=k, replace=False)
            f[hidden] = 0.0
            g[hidden] = 0.0
        groups.append(g)
        masks.append(f)
    return HierarchicalDataset(groups=groups, mask=masks, meta=data.meta)


def _check_model_set(model_set: Sequence[ModelSpec]) -> int:
    if len(model_set) < 2:
        raise StructuralError("model comparison needs at least two models")
    dims = {spec.feature_dim for spec in model_set}
    if len(dims) != 1:
        raise StructuralError(f"model set mixes feature dims {sorted(dims)}")
    return dims.pop()


def _simulate_job(job: tuple) -> HierarchicalDataset:
    spec, index, n_groups, n_obs, seed = job
    return simulate_dataset(spec, n_groups, n_obs, np.random.default_rng(seed), model_index=index, seed=seed)


def _run_jobs(jobs: list[tuple], executor: Executor | None) -> list[HierarchicalDataset]:
    if executor is None:
        return [_simulate_job(job) for job in jobs]
    return list(executor.map(_simulate_job, jobs))


def _draw_seed(rng: np.random.Generator) -> int:
    return int(rng.integers(0, 2**63 - 1))


def sample_training_batch(
    model_set: Sequence[ModelSpec],
    config: TrainingConfig,
    rng: np.random.Generator,
    executor: Executor | None = None,
) -> LabeledBatch:
    """
    Draw B (model index, M, N) triples from `rng`, simulate each dataset on its own
    substream, then apply mask augmentation when configured.
    """
    _check_model_set(model_set)
    jobs = []
    for _ in range(config.batch_size):
        j = int(rng.integers(len(model_set)))
        m = config.groups.draw(rng)
        n = config.observations.draw(rng)
        jobs.append((model_set[j], j, m, n, _draw_seed(rng)))
    datasets = _run_jobs(jobs, executor)
    if config.mask is not None:
        datasets = [apply_missingness(d, config.mask, rng) for d in datasets]
    return LabeledBatch(datasets=datasets, labels=one_hot([job[1] for job in jobs], len(model_set)))


def simulate_store(
    model_set: Sequence[ModelSpec],
    per_model: int,
    groups: SizeDistribution,
    observations: SizeDistribution,
    seed: int,
    executor: Executor | None = None,
) -> tuple[list[HierarchicalDataset], np.ndarray]:
    """`per_model` datasets for every model, in model order, with their integer labels."""
    _check_model_set(model_set)
    rng = np.random.default_rng(seed)
    jobs = []
    for j, spec in enumerate(model_set):
        for _ in range(per_model):
            jobs.append((spec, j, groups.draw(rng), observations.draw(rng), _draw_seed(rng)))
    datasets = _run_jobs(jobs, executor)
    logger.info("Simulated offline store: %d datasets over %d models", len(datasets), len(model_set))
    return datasets, np.array([job[1] for job in jobs], dtype=np.int64)


# --- training loop ---

def _learning_rate(config: TrainingConfig, total: int, step: int) -> float:
    if config.schedule == "constant":
        return config.initial_lr
    return cosine_lr(LrSchedule(initial_lr=config.initial_lr, total_steps=max(total, 1)), step)


def write_trace(path: str | Path, trace: Sequence[TraceRow]) -> Path:
    """Loss trace CSV with columns step, lr, train_loss, val_loss."""
    return write_csv(path, [row.model_dump() for row in trace])


def _checkpoint(directory: Path | None, name: str, params: NetworkParams, state, meta: dict) -> None:
    if directory is not None:
        save_checkpoint(directory / name, params, state, meta)


def train(
    model_set: Sequence[ModelSpec],
    config: TrainingConfig,
    summary: SummaryConfig,
    params: NetworkParams | None = None,
    *,
    store: tuple[list[HierarchicalDataset], np.ndarray] | None = None,
    validation: tuple[list[HierarchicalDataset], np.ndarray] | None = None,
    checkpoint_dir: str | Path | None = None,
    jobs: int = 1,
) -> tuple[NetworkParams, list[TraceRow]]:
    """
    Fit the network on simulated data. `params` continues from a pretrained network
    (fine-tuning); otherwise a fresh network is built from config.seed.
    Returns the final parameters and the per-step loss trace.
    """
    dim = _check_model_set(model_set)
    n_models = len(model_set)
    if params is None:
        params = build_network(summary, dim, n_models, np.random.default_rng([config.seed, 0]))
    if params.layers[0].in_dim != dim or params.layers[-1].out_dim != n_models:
        raise StructuralError(
            f"network maps {params.layers[0].in_dim} features to {params.layers[-1].out_dim} models, "
            f"model set needs {dim} -> {n_models}"
        )
    ckpt_dir = Path(checkpoint_dir) if checkpoint_dir is not None else None
    meta = {
        "families": [spec.family for spec in model_set],
        "feature_dim": dim,
        "summary": summary.model_dump(),
        "training": config.model_dump(),
    }
    executor = ProcessPoolExecutor(max_workers=jobs) if jobs > 1 else None
    try:
        if config.regime == "offline" and store is None:
            store = simulate_store(model_set, config.store_per_model, config.groups, config.observations,
                                   seed=_draw_seed(np.random.default_rng([config.seed, 1])), executor=executor)
        if validation is None and config.validation_size > 0:
            vrng = np.random.default_rng([config.seed, 2])
            vcfg = config.model_copy(update={"batch_size": config.validation_size, "mask": None})
            vbatch = sample_training_batch(model_set, vcfg, vrng, executor)
            validation = (vbatch.datasets, vbatch.indices)

        if config.regime == "offline":
            per_epoch = math.ceil(len(store[0]) / config.batch_size)
            total = (config.epochs if config.epochs is not None else 1) * per_epoch
        else:
            total = config.steps
        if total == 0:
            return params, []

        rng = np.random.default_rng([config.seed, 3])
        state = init_optimizer(config.optimizer, params)
        trace: list[TraceRow] = []
        order = np.arange(0)
        logger.info("Training %d steps (%s, %s, B=%d)", total, config.regime, config.optimizer, config.batch_size)
        for step in range(total):
            if config.regime == "offline":
                cursor = (step * config.batch_size) % (per_epoch * config.batch_size)
                if cursor == 0:
                    order = rng.permutation(len(store[0]))
                idx = order[cursor:cursor + config.batch_size]
                datasets = [store[0][i] for i in idx]
                if config.mask is not None:
                    datasets = [apply_missingness(d, config.mask, rng) for d in datasets]
                labels = one_hot(store[1][idx], n_models)
            else:
                batch = sample_training_batch(model_set, config, rng, executor)
                datasets, labels = batch.datasets, batch.labels

            lr = _learning_rate(config, total, step)
            try:
                loss, grads = ad.value_and_grad(lambda b: batch_loss(b, summary, datasets, labels), params)
                if not np.isfinite(loss):
                    raise NumericalError("non-finite training loss", node="loss")
                params, state = optimizer_step(params, state, grads, lr)
            except NumericalError as e:
                logger.error("Training aborted at step %d: %s", step, e)
                _checkpoint(ckpt_dir, "last_good", params, state, {**meta, "step": step})
                raise TrainingAborted(f"training aborted at step {step}: {e}", params=params, trace=trace,
                                      node=e.node) from e

            row = TraceRow(step=step + 1, lr=lr, train_loss=loss)
            at_cadence = (step + 1) % config.checkpoint_every == 0 or step + 1 == total
            if at_cadence:
                if validation is not None:
                    row.val_loss = evaluate_loss(params, summary, validation[0], validation[1])
                name = "final" if step + 1 == total else f"step_{step + 1:06d}"
                _checkpoint(ckpt_dir, name, params, state, {**meta, "step": step + 1})
                logger.info("step %d/%d lr=%.3g loss=%.4f val=%s", step + 1, total, lr, loss,
                            "-" if row.val_loss is None else f"{row.val_loss:.4f}")
            trace.append(row)
        return params, trace
    finally:
        if executor is not None:
            executor.shutdown()
