import hashlib
import json
import logging
from collections import OrderedDict
from collections.abc import Mapping
from dataclasses import asdict
from pathlib import Path
from typing import Any

import numpy as np
import torch

from app.src.core.exceptions.model_exceptions import CheckpointError
from app.src.domain.model import (
    ModelAdapter,
    OptimizerConfig,
    TrainState,
    model_from_architecture,
)
from app.src.infrastructure.locking.atomic_operations import AtomicFileOperations

logger = logging.getLogger(__name__)

PARAM_DTYPE = "<f4"
CHECKPOINT_VERSION = 1


def _pack(tensors: Mapping[str, torch.Tensor]) -> tuple[bytes, list[dict[str, Any]]]:
    """Flatten named tensors into one little-endian float32 blob plus an index."""
    index = []
    chunks = []
    offset = 0
    for name, tensor in tensors.items():
        values = tensor.detach().cpu().numpy().astype(PARAM_DTYPE)
        index.append({"name": name, "offset": offset, "shape": list(values.shape)})
        chunks.append(values.tobytes())
        offset += values.size
    return b"".join(chunks), index


def _unpack(blob: bytes, index: list[Mapping[str, Any]]) -> "OrderedDict[str, torch.Tensor]":
    flat = np.frombuffer(blob, dtype=PARAM_DTYPE)
    tensors: OrderedDict[str, torch.Tensor] = OrderedDict()
    for entry in index:
        shape = tuple(int(v) for v in entry["shape"])
        size = int(np.prod(shape))
        start = int(entry["offset"])
        if start + size > flat.size:
            raise ValueError(f"parameter '{entry['name']}' runs past the end of the blob")
        tensors[str(entry["name"])] = torch.from_numpy(
            flat[start : start + size].reshape(shape).astype(np.float32)
        )
    return tensors


class CheckpointStore:
    """Checkpoints as ``<name>.json`` metadata with ``.params.bin``/``.momentum.bin`` blobs."""

    def __init__(
        self,
        directory: Path,
        atomic_ops: AtomicFileOperations | None = None,
    ):
        self.directory = directory
        self.atomic_ops = atomic_ops or AtomicFileOperations()
        self.written: dict[str, str] = {}

    def save_checkpoint(self, state: TrainState, name: str) -> Path:
        metadata_path = self.directory / f"{name}.json"
        params_blob, params_index = _pack(state.model.named_parameters())
        momentum_blob, momentum_index = _pack(state.momentum_buffers())

        params_path = self.directory / f"{name}.params.bin"
        momentum_path = self.directory / f"{name}.momentum.bin"
        metadata = {
            "version": CHECKPOINT_VERSION,
            "architecture": state.model.architecture,
            "epoch": state.epoch,
            "optimizer": asdict(state.optimizer_config),
            "parameters": params_index,
            "momentum": momentum_index,
            "params_file": params_path.name,
            "momentum_file": momentum_path.name,
            "params_sha256": hashlib.sha256(params_blob).hexdigest(),
            "rng_state": state.rng.bit_generator.state,
        }
        try:
            self.written[params_path.name] = self.atomic_ops.write_bytes(
                params_path, params_blob
            )
            self.written[momentum_path.name] = self.atomic_ops.write_bytes(
                momentum_path, momentum_blob
            )
            self.written[metadata_path.name] = self.atomic_ops.write_text(
                metadata_path, json.dumps(metadata, indent=2, sort_keys=True) + "\n"
            )
        except Exception as e:
            raise CheckpointError(
                operation="write", path=str(metadata_path), original_error=e
            ) from e

        logger.info(
            "Checkpoint written",
            extra={"checkpoint": name, "epoch": state.epoch},
        )
        return metadata_path

    def checksum(self, path: Path) -> str:
        return str(_read_metadata(path)["params_sha256"])


def _read_metadata(path: Path) -> dict[str, Any]:
    try:
        metadata = json.loads(path.read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as e:
        raise CheckpointError(operation="read", path=str(path), original_error=e) from e
    if not isinstance(metadata, dict) or "parameters" not in metadata:
        raise CheckpointError(
            message=f"{path} is not a checkpoint metadata file", path=str(path)
        )
    return metadata


def load_checkpoint(path: Path) -> TrainState:
    """Rebuild parameters, momentum and rng state from a checkpoint metadata file."""
    metadata = _read_metadata(path)
    try:
        model: ModelAdapter = model_from_architecture(metadata["architecture"])
        params_blob = (path.parent / metadata["params_file"]).read_bytes()
        momentum_blob = (path.parent / metadata["momentum_file"]).read_bytes()
    except (KeyError, OSError) as e:
        raise CheckpointError(operation="read", path=str(path), original_error=e) from e

    if hashlib.sha256(params_blob).hexdigest() != metadata["params_sha256"]:
        raise CheckpointError(
            message=f"Parameter file of {path} does not match its checksum",
            operation="verify",
            path=str(path),
        )

    try:
        params = _unpack(params_blob, metadata["parameters"])
        momentum = _unpack(momentum_blob, metadata["momentum"])
    except ValueError as e:
        raise CheckpointError(operation="decode", path=str(path), original_error=e) from e

    expected = model.named_parameters()
    mismatched = [
        name
        for name, param in expected.items()
        if name not in params or tuple(params[name].shape) != tuple(param.shape)
    ]
    if mismatched or set(params) != set(expected):
        raise CheckpointError(
            message=f"Checkpoint {path} does not fit architecture "
            f"{model.architecture.get('name')}: {', '.join(mismatched) or 'extra tensors'}",
            operation="restore",
            path=str(path),
        )

    with torch.no_grad():
        for name, param in expected.items():
            param.copy_(params[name])

    rng = np.random.default_rng()
    rng.bit_generator.state = metadata["rng_state"]
    state = TrainState(
        model=model,
        optimizer_config=OptimizerConfig(**metadata["optimizer"]),
        epoch=int(metadata["epoch"]),
        rng=rng,
    )
    state.restore_momentum(momentum)
    logger.info("Checkpoint loaded", extra={"path": str(path), "epoch": state.epoch})
    return state
