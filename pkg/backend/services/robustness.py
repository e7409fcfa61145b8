# services/robustness.py
# Data perturbations for checking how stable a trained network's model ranking is:
# bootstrapped groups, leave-one-group-out and increasing fractions of masked trials.

import logging

import numpy as np
import pandas as pd

from errors import StructuralError
from models.configs import SummaryConfig
from models.dataset import HierarchicalDataset
from models.network import NetworkParams
from services.summary_net import predict

logger = logging.getLogger(__name__)

PERTURB_MODES = ("bootstrap-groups", "leave-one-group-out", "mask-sweep")
MASK_FRACTIONS = tuple(round(0.05 * k, 2) for k in range(9))


def bootstrap_groups(data: HierarchicalDataset, n: int, rng: np.random.Generator) -> list[HierarchicalDataset]:
    """n datasets whose groups are drawn from `data` with replacement."""
    out = []
    for _ in range(n):
        idx = rng.integers(0, data.n_groups, size=data.n_groups)
        mask = None if data.mask is None else [data.mask[i] for i in idx]
        out.append(HierarchicalDataset(groups=[data.groups[i] for i in idx], mask=mask, meta=data.meta))
    return out


def leave_one_group_out(data: HierarchicalDataset) -> list[HierarchicalDataset]:
    if data.n_groups < 2:
        raise StructuralError("leave-one-group-out needs at least two groups")
    out = []
    for drop in range(data.n_groups):
        keep = [i for i in range(data.n_groups) if i != drop]
        mask = None if data.mask is None else [data.mask[i] for i in keep]
        out.append(HierarchicalDataset(groups=[data.groups[i] for i in keep], mask=mask, meta=data.meta))
    return out


def mask_fraction(data: HierarchicalDataset, fraction: float, rng: np.random.Generator) -> HierarchicalDataset:
    """Hide round(fraction * N_m) observed trials per group (at most all but one)."""
    if not 0 <= fraction < 1:
        raise ValueError("fraction must lie in [0, 1)")
    if fraction == 0:
        return data
    groups, masks = [], []
    for g, f in zip(data.groups, data.mask_or_ones()):
        g, f = g.copy(), f.copy()
        observed = np.flatnonzero(f)
        k = min(int(round(fraction * g.shape[0])), observed.size - 1)
        if k > 0:
            hidden = rng.choice(observed, size=k, replace=False)
            f[hidden] = 0.0
            g[hidden] = 0.0
        groups.append(g)
        masks.append(f)
    return HierarchicalDataset(groups=groups, mask=masks, meta=data.meta)


def _summary_row(preds: np.ndarray, reference: int, **tags) -> dict:
    row = dict(tags)
    for j in range(preds.shape[1]):
        row[f"pmp_mean_{j}"] = float(preds[:, j].mean())
        row[f"pmp_sd_{j}"] = float(preds[:, j].std(ddof=1)) if preds.shape[0] > 1 else 0.0
    row["argmax_agreement"] = float(np.mean(preds.argmax(axis=1) == reference))
    return row


def perturb(
    params: NetworkParams,
    cfg: SummaryConfig,
    data: HierarchicalDataset,
    mode: str,
    n: int,
    rng: np.random.Generator,
) -> pd.DataFrame:
    """
    Network PMPs under one perturbation mode. Every row reports mean and sd of each model's
    PMP plus how often the argmax agrees with the unperturbed argmax.
    mask-sweep has one row per fraction 0.00, 0.05, ..., 0.40.
    """
    if n < 1 and mode in ("bootstrap-groups", "mask-sweep"):
        raise ValueError(f"{mode} needs at least one repetition, got n={n}")
    base = predict(params, cfg, [data])[0]
    reference = int(base.argmax())
    if mode == "bootstrap-groups":
        rows = [_summary_row(predict(params, cfg, bootstrap_groups(data, n, rng)), reference, mode=mode)]
    elif mode == "leave-one-group-out":
        preds = predict(params, cfg, leave_one_group_out(data))
        rows = [{"mode": mode, "dropped_group": m, **{f"pmp_{j}": float(p) for j, p in enumerate(row)}}
                for m, row in enumerate(preds)]
        rows.append(_summary_row(preds, reference, mode=mode, dropped_group="all"))
    elif mode == "mask-sweep":
        rows = []
        for fraction in MASK_FRACTIONS:
            reps = 1 if fraction == 0 else n
            preds = predict(params, cfg, [mask_fraction(data, fraction, rng) for _ in range(reps)])
            rows.append(_summary_row(preds, reference, mode=mode, fraction=fraction))
            logger.debug("mask-sweep fraction %.2f done", fraction)
    else:
        raise ValueError(f"unknown perturbation mode {mode!r} (choose from {', '.join(PERTURB_MODES)})")
    frame = pd.DataFrame(rows)
    for j, p in enumerate(base):
        frame[f"unperturbed_{j}"] = float(p)
    return frame
