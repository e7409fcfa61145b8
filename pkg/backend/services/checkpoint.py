# services/checkpoint.py
# Checkpoint format: <stem>.json manifest (layers, optimizer metadata, meta) + <stem>.bin blob of
# little-endian float64 values (parameters, then optimizer moments when present).

import json
import logging
from pathlib import Path
from typing import Any

import numpy as np

from config.settings import SCHEMA_VERSION
from errors import ConfigError
from models.network import AdamState, LayerSpec, NetworkParams, OptimizerState, RmspropState

logger = logging.getLogger(__name__)

_DTYPE = "<f8"


def params_to_bytes(params: NetworkParams) -> bytes:
    return params.values.astype(_DTYPE).tobytes()


def params_from_bytes(layers: list[LayerSpec], blob: bytes) -> NetworkParams:
    return NetworkParams(layers=layers, values=np.frombuffer(blob, dtype=_DTYPE).astype(np.float64))


def _paths(path: str | Path) -> tuple[Path, Path]:
    p = Path(path)
    stem = p.with_suffix("") if p.suffix in (".json", ".bin") else p
    return stem.with_suffix(".json"), stem.with_suffix(".bin")


def save_checkpoint(
    path: str | Path,
    params: NetworkParams,
    state: OptimizerState | None = None,
    meta: dict[str, Any] | None = None,
) -> Path:
    """Write manifest + blob next to each other. Returns the manifest path."""
    manifest_path, blob_path = _paths(path)
    manifest_path.parent.mkdir(parents=True, exist_ok=True)
    blobs = [params.values]
    optimizer: dict[str, Any] | None = None
    if isinstance(state, AdamState):
        optimizer = {"tag": "adam", "step": state.step, "beta1": state.beta1, "beta2": state.beta2,
                     "eps": state.eps, "moments": ["first_moment", "second_moment"]}
        blobs += [state.first_moment, state.second_moment]
    elif isinstance(state, RmspropState):
        optimizer = {"tag": "rmsprop", "step": state.step, "decay": state.decay, "eps": state.eps,
                     "moments": ["second_moment"]}
        blobs += [state.second_moment]
    manifest = {
        "schema_version": SCHEMA_VERSION,
        "layers": [layer.model_dump() for layer in params.layers],
        "total_count": params.total_count,
        "dtype": _DTYPE,
        "blob": blob_path.name,
        "optimizer": optimizer,
        "meta": meta or {},
    }
    blob_path.write_bytes(b"".join(np.asarray(b, dtype=_DTYPE).tobytes() for b in blobs))
    manifest_path.write_text(json.dumps(manifest, indent=2, sort_keys=True), encoding="utf-8")
    logger.debug("Checkpoint written to %s", manifest_path)
    return manifest_path


def load_checkpoint(path: str | Path) -> tuple[NetworkParams, OptimizerState | None, dict[str, Any]]:
    """Read a checkpoint written by save_checkpoint."""
    manifest_path, _ = _paths(path)
    try:
        manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
        blob = (manifest_path.parent / manifest["blob"]).read_bytes()
        layers = [LayerSpec(**layer) for layer in manifest["layers"]]
    except (OSError, KeyError, ValueError) as e:
        raise ConfigError(f"cannot read checkpoint {manifest_path}: {e}") from e
    if manifest.get("schema_version") != SCHEMA_VERSION:
        raise ConfigError(f"checkpoint schema_version {manifest.get('schema_version')} is not supported")
    values = np.frombuffer(blob, dtype=_DTYPE).astype(np.float64)
    n = int(manifest["total_count"])
    params = NetworkParams(layers=layers, values=values[:n])
    opt = manifest.get("optimizer")
    state: OptimizerState | None = None
    if opt and opt["tag"] == "adam":
        state = AdamState(first_moment=values[n:2 * n], second_moment=values[2 * n:3 * n], step=opt["step"],
                          beta1=opt["beta1"], beta2=opt["beta2"], eps=opt["eps"])
    elif opt and opt["tag"] == "rmsprop":
        state = RmspropState(second_moment=values[n:2 * n], step=opt["step"], decay=opt["decay"], eps=opt["eps"])
    return params, state, manifest.get("meta") or {}
