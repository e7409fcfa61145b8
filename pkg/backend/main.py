# main.py
# Command-line entry point for amortized Bayesian model comparison:
# simulate, train, validate, compare, oracle and perturb.

import argparse
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import Sequence

import numpy as np
from pydantic import ValidationError

from config.run_config import load_run_config
from config.settings import (
    DEFAULT_ADAM_LR,
    DEFAULT_FINETUNE_LR,
    DEFAULT_RMSPROP_LR,
    configure_logging,
    get_jobs,
    get_output_root,
)
from errors import ConfigError, HbmcError, StructuralError, TrainingAborted
from models.configs import RunConfig, SizeDistribution, SummaryConfig
from models.model_spec import model_spec
from models.network import NetworkParams
from models.reports import PmpVector, PredictionCorpus
from services.checkpoint import load_checkpoint
from services.metrics import (
    aggregate_reports,
    build_report,
    calibration_rows,
    confusion_rows,
)
from services.oracle import network_to_bf, oracle_pmps
from services.robustness import PERTURB_MODES, perturb
from services.simulators import MODEL_SETS, simulate_dataset
from services.store import load_dataset, load_datasets, save_store, write_csv, write_json
from services.summary_net import predict
from services.trainer import sample_training_batch, train, write_trace

logger = logging.getLogger("hbmc")


# --- shared helpers ---

def _size(text: str) -> SizeDistribution:
    """'25' -> fixed 25; '1:100' -> discrete uniform on [1, 100]."""
    try:
        if ":" in text:
            low, high = text.split(":", 1)
            return SizeDistribution(low=int(low), high=int(high))
        return SizeDistribution.fixed(int(text))
    except (ValueError, ValidationError) as e:
        raise ConfigError(f"bad size {text!r}: expected N or LOW:HIGH") from e


def _resolve_config(args: argparse.Namespace) -> RunConfig:
    cfg = load_run_config(args.config, args.set or None)
    update = {}
    if args.seed is not None:
        update["seed"] = args.seed
    if getattr(args, "model_set", None):
        if args.model_set not in MODEL_SETS:
            raise ConfigError(f"unknown model set {args.model_set!r}")
        update["model_set"] = list(MODEL_SETS[args.model_set])
    if args.experiment:
        update["experiment"] = args.experiment
    if update:
        try:
            cfg = RunConfig.model_validate({**cfg.model_dump(), **update})
        except ValidationError as e:
            raise ConfigError(f"invalid run config: {e}") from e
    return cfg


def _run_dir(args: argparse.Namespace, cfg: RunConfig) -> Path:
    out = get_output_root(args.out or cfg.output_dir) / cfg.experiment / args.command
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as e:
        raise ConfigError(f"output directory {out} is not writable: {e}") from e
    write_json(out / "resolved_config.json", cfg.model_dump())
    return out


def _load_network(path: str) -> tuple[NetworkParams, SummaryConfig, list[str]]:
    params, _, meta = load_checkpoint(path)
    try:
        return params, SummaryConfig(**meta["summary"]), list(meta["families"])
    except (KeyError, TypeError, ValidationError) as e:
        raise ConfigError(f"checkpoint {path} lacks summary/families metadata") from e


def _pmp(p: np.ndarray) -> PmpVector:
    return PmpVector(probs=p / p.sum())


def _executor(jobs: int) -> ProcessPoolExecutor | None:
    return ProcessPoolExecutor(max_workers=jobs) if jobs > 1 else None


# --- commands ---

def cmd_simulate(args: argparse.Namespace, cfg: RunConfig) -> int:
    """Write `count` datasets of one family plus an index manifest."""
    out = _run_dir(args, cfg)
    try:
        spec = model_spec(args.family)
    except ValueError as e:
        raise ConfigError(str(e)) from e
    index = cfg.model_set.index(args.family) if args.family in cfg.model_set else None
    groups, observations = _size(args.groups), _size(args.observations)
    rng = np.random.default_rng(cfg.seed)
    datasets = []
    for _ in range(args.count):
        seed = int(rng.integers(0, 2**63 - 1))
        m, n = groups.draw(rng), observations.draw(rng)
        datasets.append(simulate_dataset(spec, m, n, np.random.default_rng(seed), model_index=index, seed=seed))
    manifest = save_store(out / "datasets", datasets, meta={"family": args.family, "seed": cfg.seed})
    print(f"simulated {args.count} {args.family} datasets -> {manifest}")
    return 0


def cmd_train(args: argparse.Namespace, cfg: RunConfig) -> int:
    """Train from scratch, or fine-tune a pretrained checkpoint with the finetune settings."""
    out = _run_dir(args, cfg)
    model_set = [model_spec(f) for f in cfg.model_set]
    params, summary, tcfg = None, cfg.summary, cfg.training
    if args.pretrained:
        params, summary, families = _load_network(args.pretrained)
        if families != cfg.model_set:
            raise ConfigError(f"pretrained network compares {families}, config asks for {cfg.model_set}")
        tcfg = cfg.finetune or cfg.training.model_copy(update={"initial_lr": DEFAULT_FINETUNE_LR})
    elif tcfg.optimizer == "rmsprop" and tcfg.initial_lr == DEFAULT_ADAM_LR:
        tcfg = tcfg.model_copy(update={"initial_lr": DEFAULT_RMSPROP_LR})
    store = None
    if args.store:
        datasets = load_datasets([args.store])
        labels = np.array([d.meta.model_index for d in datasets])
        if any(lbl is None for lbl in labels):
            raise ConfigError(f"store {args.store} has datasets without a model index")
        store = (datasets, labels.astype(np.int64))
        tcfg = tcfg.model_copy(update={"regime": "offline"})
    try:
        params, trace = train(model_set, tcfg, summary, params, store=store,
                              checkpoint_dir=out / "checkpoints", jobs=get_jobs(args.jobs))
    except TrainingAborted as e:
        write_trace(out / "trace.csv", e.trace)
        raise
    write_trace(out / "trace.csv", trace)
    last = trace[-1].train_loss if trace else float("nan")
    print(f"trained {len(trace)} steps, final loss {last:.4f} -> {out / 'checkpoints'}")
    return 0


def _validate_cell(params, summary, families, cfg: RunConfig, groups, observations, out: Path, seed: int, jobs: int) -> None:
    model_set = [model_spec(f) for f in families]
    vcfg = cfg.training.model_copy(update={
        "batch_size": cfg.validation.datasets, "groups": groups, "observations": observations, "mask": None,
    })
    reports = []
    executor = _executor(jobs)
    try:
        for r in range(cfg.validation.repetitions):
            batch = sample_training_batch(model_set, vcfg, np.random.default_rng([seed, r]), executor)
            corpus = PredictionCorpus(preds=predict(params, summary, batch.datasets), labels=batch.indices)
            report = build_report(corpus, cfg.validation.bins, labels={"repetition": str(r)})
            write_json(out / f"report_{r:03d}.json", report.model_dump())
            write_csv(out / f"calibration_{r:03d}.csv", calibration_rows(report))
            write_csv(out / f"confusion_{r:03d}.csv", confusion_rows(report))
            reports.append(report)
    finally:
        if executor is not None:
            executor.shutdown()
    aggregate = aggregate_reports(reports, labels={"groups": f"{groups.low}:{groups.high}",
                                                   "observations": f"{observations.low}:{observations.high}"})
    write_json(out / "aggregate.json", aggregate.model_dump())
    write_csv(out / "calibration_bands.csv", aggregate.calibration)
    print(f"validated {cfg.validation.repetitions} x {cfg.validation.datasets} datasets, "
          f"median log score {aggregate.log_score.median:.4f} -> {out}")


def cmd_validate(args: argparse.Namespace, cfg: RunConfig) -> int:
    """Per-repetition reports plus an aggregate; grid mode adds one directory per (M, N) cell."""
    out = _run_dir(args, cfg)
    params, summary, families = _load_network(args.checkpoint)
    v = cfg.validation
    grid_m = args.grid_m or v.grid_groups
    grid_n = args.grid_n or v.grid_observations
    jobs = get_jobs(args.jobs)
    if grid_m or grid_n:
        for m in grid_m or [v.groups.high]:
            for n in grid_n or [v.observations.high]:
                _validate_cell(params, summary, families, cfg, SizeDistribution.fixed(m), SizeDistribution.fixed(n),
                               out / f"cell_M{m}_N{n}", cfg.seed, jobs)
    else:
        _validate_cell(params, summary, families, cfg, v.groups, v.observations, out, cfg.seed, jobs)
    return 0


def cmd_compare(args: argparse.Namespace, cfg: RunConfig) -> int:
    """PMPs and Bayes factors against a reference model for every input dataset."""
    out = _run_dir(args, cfg)
    params, summary, families = _load_network(args.checkpoint)
    if not 0 <= args.reference < len(families):
        raise ConfigError(f"reference model {args.reference} is not one of 0..{len(families) - 1}")
    datasets = load_datasets(args.datasets)
    if not datasets:
        raise ConfigError("no datasets given")
    preds = predict(params, summary, datasets)
    rows = []
    ref = args.reference
    for i, (data, p) in enumerate(zip(datasets, preds)):
        bf = network_to_bf(_pmp(p))
        row = {"dataset": i, "family": data.meta.family, "saturated": bf.saturated}
        for j, fam in enumerate(families):
            row[f"pmp_{fam}"] = float(p[j])
            row[f"bf_{j}_{ref}"] = float(bf.values[j, ref])
            row[f"bf_{ref}_{j}"] = float(bf.values[ref, j])
        rows.append(row)
    write_csv(out / "compare.csv", rows)
    write_json(out / "compare.json", {"families": families, "reference": ref, "rows": rows})
    mean = preds.mean(axis=0)
    print("mean PMP: " + ", ".join(f"{f}={m:.4f}" for f, m in zip(families, mean)) + f" -> {out}")
    return 0


def cmd_oracle(args: argparse.Namespace, cfg: RunConfig) -> int:
    """Quadrature log evidences and PMPs; with --checkpoint also a network-vs-oracle scatter table."""
    out = _run_dir(args, cfg)
    datasets = load_datasets(args.datasets)
    executor = _executor(get_jobs(args.jobs))
    try:
        logmls, pmps = oracle_pmps(datasets, cfg.model_set, cfg.quadrature, executor=executor)
    finally:
        if executor is not None:
            executor.shutdown()
    rows = []
    for i, data in enumerate(datasets):
        row = {"dataset": i, "family": data.meta.family, "model_index": data.meta.model_index}
        for j, fam in enumerate(cfg.model_set):
            row[f"logml_{fam}"] = float(logmls[i, j])
            row[f"pmp_{fam}"] = float(pmps[i, j])
        row["log_bf_10"] = float(logmls[i, 1] - logmls[i, 0])
        rows.append(row)
    write_json(out / "oracle.json", {"families": cfg.model_set, "rows": rows})
    if args.checkpoint:
        params, summary, families = _load_network(args.checkpoint)
        if families != cfg.model_set:
            raise ConfigError(f"checkpoint compares {families}, oracle config has {cfg.model_set}")
        net = predict(params, summary, datasets)
        scatter = []
        for i in range(len(datasets)):
            scatter.append({
                "dataset": i,
                **{f"oracle_pmp_{j}": float(pmps[i, j]) for j in range(len(families))},
                **{f"network_pmp_{j}": float(net[i, j]) for j in range(len(families))},
                "oracle_log_bf_10": float(logmls[i, 1] - logmls[i, 0]),
                "network_log_bf_10": float(np.log(network_to_bf(_pmp(net[i])).values[1, 0])),
            })
        write_csv(out / "scatter.csv", scatter)
        print(f"mean |network - oracle| PMP: {np.abs(net - pmps).mean():.4f}")
    write_csv(out / "oracle.csv", rows)
    print(f"oracle evaluated {len(datasets)} datasets -> {out}")
    return 0


def cmd_perturb(args: argparse.Namespace, cfg: RunConfig) -> int:
    """Robustness of the network's ranking under group bootstrap, leave-one-out or masking."""
    out = _run_dir(args, cfg)
    params, summary, families = _load_network(args.checkpoint)
    data = load_dataset(args.dataset)
    frame = perturb(params, summary, data, args.mode, args.n, np.random.default_rng(cfg.seed))
    write_csv(out / f"perturb_{args.mode}.csv", frame)
    write_json(out / f"perturb_{args.mode}.json", {"families": families, "mode": args.mode, "n": args.n,
                                                   "rows": frame.to_dict(orient="records")})
    print(f"perturbed ({args.mode}, n={args.n}) -> {out}")
    return 0


COMMANDS = {
    "simulate": cmd_simulate,
    "train": cmd_train,
    "validate": cmd_validate,
    "compare": cmd_compare,
    "oracle": cmd_oracle,
    "perturb": cmd_perturb,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON run config (schema_version 1)")
    common.add_argument("--seed", type=int, help="Master seed (overrides the config)")
    common.add_argument("--jobs", type=int, help="Worker processes (default: HBMC_JOBS or 1)")
    common.add_argument("--out", help="Output root (default: HBMC_OUT or ./runs)")
    common.add_argument("--experiment", help="Experiment name (overrides the config)")
    common.add_argument("--model-set", choices=sorted(MODEL_SETS), help="Preset candidate model set")
    common.add_argument("--set", action="append", metavar="KEY=VALUE", help="Override a config key, e.g. training.steps=2000")

    parser = argparse.ArgumentParser(prog="hbmc", description="Amortized Bayesian model comparison for hierarchical models")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", parents=[common], help="Simulate datasets of one family")
    p.add_argument("--family", required=True)
    p.add_argument("--count", type=int, default=1)
    p.add_argument("--groups", default="25", help="M, or LOW:HIGH")
    p.add_argument("--observations", default="25", help="N_m, or LOW:HIGH")

    p = sub.add_parser("train", parents=[common], help="Train (or fine-tune) a network")
    p.add_argument("--pretrained", help="Checkpoint to fine-tune")
    p.add_argument("--store", help="Directory of pre-simulated datasets (offline regime)")

    p = sub.add_parser("validate", parents=[common], help="Calibration reports on held-out simulations")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--grid-m", type=int, nargs="*", default=[], help="Grid mode: values of M")
    p.add_argument("--grid-n", type=int, nargs="*", default=[], help="Grid mode: values of N_m")

    p = sub.add_parser("compare", parents=[common], help="PMPs and Bayes factors for datasets")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--reference", type=int, default=0, help="Reference model index for Bayes factors")
    p.add_argument("datasets", nargs="+", help="Dataset JSON files or store directories")

    p = sub.add_parser("oracle", parents=[common], help="Quadrature evidences for normal-model datasets")
    p.add_argument("--checkpoint", help="Network to compare against the oracle")
    p.add_argument("datasets", nargs="+")

    p = sub.add_parser("perturb", parents=[common], help="Robustness of the ranking under data perturbations")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--mode", choices=PERTURB_MODES, default="bootstrap-groups")
    p.add_argument("-n", type=int, default=100, help="Repetitions (per fraction for mask-sweep)")
    p.add_argument("dataset")
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    """Run one command; returns the process exit code."""
    configure_logging()
    args = build_parser().parse_args(argv)
    try:
        cfg = _resolve_config(args)
        return COMMANDS[args.command](args, cfg)
    except HbmcError as e:
        logger.error("%s failed: %s", args.command, e)
        return e.exit_code
    except ValidationError as e:
        logger.error("%s failed: %s", args.command, e)
        return StructuralError.exit_code
    except (KeyError, OSError, ValueError) as e:
        logger.error("%s failed: %s", args.command, e)
        return ConfigError.exit_code


if __name__ == "__main__":
    sys.exit(main())
