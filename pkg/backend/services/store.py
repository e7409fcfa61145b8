# services/store.py
# On-disk formats: dataset JSON files with an index manifest, schema-versioned JSON reports,
# and CSV plot data written through pandas.

import json
import logging
from pathlib import Path
from typing import Any, Iterable, Sequence

import pandas as pd

from config.settings import SCHEMA_VERSION
from errors import ConfigError
from models.dataset import HierarchicalDataset

logger = logging.getLogger(__name__)

INDEX_NAME = "index.json"


def write_json(path: str | Path, payload: dict[str, Any]) -> Path:
    """Write a report document with a leading schema_version field."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    doc = {"schema_version": SCHEMA_VERSION, **{k: v for k, v in payload.items() if k != "schema_version"}}
    path.write_text(json.dumps(doc, indent=2, sort_keys=False), encoding="utf-8")
    return path


def read_json(path: str | Path) -> dict[str, Any]:
    try:
        return json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, ValueError) as e:
        raise ConfigError(f"cannot read {path}: {e}") from e


def write_csv(path: str | Path, rows: Iterable[dict[str, Any]] | pd.DataFrame) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    frame = rows if isinstance(rows, pd.DataFrame) else pd.DataFrame(list(rows))
    frame.to_csv(path, index=False)
    return path


def save_dataset(path: str | Path, data: HierarchicalDataset) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(data.to_document()), encoding="utf-8")
    return path


def load_dataset(path: str | Path) -> HierarchicalDataset:
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
        return HierarchicalDataset.from_document(doc)
    except (OSError, ValueError, KeyError, TypeError) as e:
        raise ConfigError(f"cannot read dataset {path}: {e}") from e


def save_store(directory: str | Path, datasets: Sequence[HierarchicalDataset], meta: dict[str, Any] | None = None) -> Path:
    """
    Write datasets as dataset_00000.json, ... plus an index manifest listing
    file name, family, model index and shape of every entry. Returns the manifest path.
    """
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    entries = []
    for i, data in enumerate(datasets):
        name = f"dataset_{i:05d}.json"
        save_dataset(directory / name, data)
        entries.append({
            "file": name,
            "family": data.meta.family,
            "model_index": data.meta.model_index,
            "seed": data.meta.seed,
            "groups": data.n_groups,
            "observations": data.group_sizes,
        })
    manifest = write_json(directory / INDEX_NAME, {"count": len(entries), "meta": meta or {}, "datasets": entries})
    logger.info("Wrote %d datasets to %s", len(entries), directory)
    return manifest


def load_store(directory: str | Path) -> list[HierarchicalDataset]:
    """Datasets listed in the index manifest of `directory`, in manifest order."""
    directory = Path(directory)
    index = read_json(directory / INDEX_NAME)
    if index.get("schema_version") != SCHEMA_VERSION:
        raise ConfigError(f"{directory / INDEX_NAME}: unsupported schema_version {index.get('schema_version')}")
    return [load_dataset(directory / entry["file"]) for entry in index.get("datasets", [])]


def load_datasets(paths: Sequence[str | Path]) -> list[HierarchicalDataset]:
    """Expand store directories and single dataset files into one list."""
    out: list[HierarchicalDataset] = []
    for p in map(Path, paths):
        if p.is_dir():
            out += load_store(p)
        else:
            out.append(load_dataset(p))
    return out
