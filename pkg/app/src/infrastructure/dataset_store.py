import json
import logging
from collections.abc import Mapping
from pathlib import Path
from typing import Any

import numpy as np

from app.src.core.exceptions.data_exceptions import (
    CorruptionSpecError,
    DatasetFormatError,
    PrecomputedSetError,
)
from app.src.domain.corruption import SEVERITIES
from app.src.domain.datasets import (
    CIFAR_CHANNELS,
    CIFAR_IMAGE_SIZE,
    Dataset,
    Split,
    parse_cifar100_binary,
    serialize_cifar100_binary,
)
from app.src.domain.taxonomy import ClassTaxonomy
from app.src.infrastructure.locking.atomic_operations import AtomicFileOperations

logger = logging.getLogger(__name__)

TENSOR_DTYPE = "<f4"
LABEL_DTYPE = "<i8"
PRECOMPUTED_DTYPES = {"uint8": np.dtype(np.uint8), "float32": np.dtype(TENSOR_DTYPE)}


def load_cifar100(path: Path, split: Split) -> Dataset:
    try:
        data = path.read_bytes()
    except OSError as e:
        raise DatasetFormatError(source=str(path), original_error=e) from e
    return parse_cifar100_binary(data, split=split, source=str(path))


class DatasetStore:
    """Dataset files: CIFAR binaries and the float32 tensor format for generated sets.

    A generated set is a JSON manifest next to two little-endian files: images
    as N x 3 x H x W float32 and labels as N x 2 int64 (fine, coarse).
    """

    def __init__(self, atomic_ops: AtomicFileOperations | None = None):
        self.atomic_ops = atomic_ops or AtomicFileOperations()

    def save_cifar100(self, ds: Dataset, path: Path) -> str:
        return self.atomic_ops.write_bytes(path, serialize_cifar100_binary(ds))

    def save_dataset(self, ds: Dataset, manifest_path: Path) -> dict[str, str]:
        tensor_path = manifest_path.with_suffix(".images.bin")
        label_path = manifest_path.with_suffix(".labels.bin")
        labels = np.stack([ds.fine_labels, ds.coarse_labels], axis=1)

        checksums = {
            tensor_path.name: self.atomic_ops.write_bytes(
                tensor_path, ds.images.astype(TENSOR_DTYPE).tobytes()
            ),
            label_path.name: self.atomic_ops.write_bytes(
                label_path, labels.astype(LABEL_DTYPE).tobytes()
            ),
        }
        manifest = {
            "format": "float32-le",
            "count": len(ds),
            "shape": list(ds.image_shape),
            "split": ds.split,
            "num_fine": ds.num_fine,
            "tensor_file": tensor_path.name,
            "label_file": label_path.name,
            "provenance": _plain(ds.provenance),
        }
        checksums[manifest_path.name] = self.atomic_ops.write_text(
            manifest_path, json.dumps(manifest, indent=2, sort_keys=True) + "\n"
        )
        logger.info("Saved dataset", extra={"path": str(manifest_path), "count": len(ds)})
        return checksums

    def load_dataset(self, manifest_path: Path) -> Dataset:
        manifest = _read_manifest(manifest_path)
        try:
            count = int(manifest["count"])
            shape = tuple(int(v) for v in manifest["shape"])
            base = manifest_path.parent
            images = np.fromfile(base / manifest["tensor_file"], dtype=TENSOR_DTYPE)
            labels = np.fromfile(base / manifest["label_file"], dtype=LABEL_DTYPE)
        except (KeyError, TypeError, ValueError, OSError) as e:
            raise DatasetFormatError(source=str(manifest_path), original_error=e) from e

        if images.size != count * int(np.prod(shape)) or labels.size != 2 * count:
            raise DatasetFormatError(
                message=f"Tensor files of {manifest_path} do not hold {count} samples "
                f"of shape {shape}",
                source=str(manifest_path),
            )
        labels = labels.reshape(count, 2).astype(np.int64)
        return Dataset(
            images=images.reshape(count, *shape).astype(np.float32),
            fine_labels=labels[:, 0].copy(),
            coarse_labels=labels[:, 1].copy(),
            split=manifest.get("split", "test"),
            num_fine=int(manifest["num_fine"]),
            provenance=manifest.get("provenance", {}),
        )


def _plain(value: Any) -> Any:
    if isinstance(value, Mapping):
        return {str(k): _plain(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_plain(v) for v in value]
    return value


def _read_manifest(path: Path) -> dict[str, Any]:
    try:
        manifest = json.loads(path.read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as e:
        raise PrecomputedSetError(manifest=str(path), original_error=e) from e
    if not isinstance(manifest, dict):
        raise PrecomputedSetError(
            message=f"Manifest {path} must be a JSON object", manifest=str(path)
        )
    return manifest


def _read_array(path: Path, dtype: np.dtype) -> np.ndarray:
    if path.suffix == ".npy":
        return np.load(path, allow_pickle=False)
    return np.fromfile(path, dtype=dtype)


def load_precomputed_corruption_set(
    manifest_path: Path, taxonomy: ClassTaxonomy
) -> list[Dataset]:
    """Load an externally generated corrupted set, one dataset per severity block.

    The manifest declares ``kind``, ``severity`` (one level, or a list of levels
    stored as consecutive blocks of ``count`` samples), ``count``, ``dtype``
    (``uint8`` or ``float32``) and ``label_file``. Optional keys: ``tensor_file``
    (defaults to the manifest name with ``.bin``), ``layout`` (``chw`` or
    ``hwc``) and ``image_size``.
    """
    manifest = _read_manifest(manifest_path)
    where = str(manifest_path)
    try:
        kind = str(manifest["kind"])
        severities = manifest["severity"]
        severities = [int(s) for s in severities] if isinstance(severities, list) else [int(severities)]
        count = int(manifest["count"])
        dtype_name = str(manifest["dtype"])
        label_path = manifest_path.parent / manifest["label_file"]
    except (KeyError, TypeError, ValueError) as e:
        raise PrecomputedSetError(manifest=where, original_error=e) from e

    for severity in severities:
        if severity not in SEVERITIES:
            raise CorruptionSpecError(
                message=f"Severity must be one of 1..5, got {severity}",
                kind=kind,
                severity=severity,
            )
    if dtype_name not in PRECOMPUTED_DTYPES:
        raise PrecomputedSetError(
            message=f"Unsupported dtype {dtype_name!r} in {where}", manifest=where
        )
    layout = manifest.get("layout", "chw")
    if layout not in ("chw", "hwc"):
        raise PrecomputedSetError(
            message=f"Unsupported layout {layout!r} in {where}", manifest=where
        )
    size = int(manifest.get("image_size", CIFAR_IMAGE_SIZE))
    tensor_path = manifest_path.parent / manifest.get(
        "tensor_file", manifest_path.with_suffix(".bin").name
    )

    total = count * len(severities)
    per_image = CIFAR_CHANNELS * size * size
    try:
        raw = _read_array(tensor_path, PRECOMPUTED_DTYPES[dtype_name])
        labels = _read_array(label_path, np.dtype(np.uint8)).astype(np.int64).ravel()
    except (OSError, ValueError) as e:
        raise PrecomputedSetError(manifest=where, original_error=e) from e

    if raw.size != total * per_image:
        raise PrecomputedSetError(
            message=f"{tensor_path.name} holds {raw.size} values, manifest {where} "
            f"declares {total} images of {per_image}",
            manifest=where,
        )
    if labels.size not in (count, total):
        raise PrecomputedSetError(
            message=f"{label_path.name} holds {labels.size} labels, expected {count} "
            f"or {total}",
            manifest=where,
        )
    if labels.size == count:
        labels = np.tile(labels, len(severities))
    if labels.size and (labels.min() < 0 or labels.max() >= taxonomy.num_fine):
        raise PrecomputedSetError(
            message=f"Labels in {label_path.name} fall outside 0..{taxonomy.num_fine - 1}",
            manifest=where,
        )

    if dtype_name == "uint8":
        pixels = raw.astype(np.float32) / np.float32(255.0)
    else:
        pixels = raw.astype(np.float32)
        if pixels.size and (not np.isfinite(pixels).all() or pixels.min() < 0 or pixels.max() > 1):
            raise PrecomputedSetError(
                message=f"float32 pixels in {tensor_path.name} fall outside [0, 1]",
                manifest=where,
            )
    if layout == "hwc":
        pixels = pixels.reshape(total, size, size, CIFAR_CHANNELS).transpose(0, 3, 1, 2)
    images = np.ascontiguousarray(pixels.reshape(total, CIFAR_CHANNELS, size, size))

    coarse_map = taxonomy.coarse_map
    coarse = np.array([coarse_map[int(y)] for y in labels], dtype=np.int64)
    datasets = []
    for block, severity in enumerate(severities):
        window = slice(block * count, (block + 1) * count)
        datasets.append(
            Dataset(
                images=images[window],
                fine_labels=labels[window],
                coarse_labels=coarse[window],
                split="test",
                num_fine=taxonomy.num_fine,
                provenance={
                    "format": "precomputed",
                    "manifest": where,
                    "corruption": {
                        "kind": kind,
                        "severity": severity,
                        "source": "precomputed",
                    },
                },
            )
        )
    logger.info(
        "Loaded precomputed corrupted set",
        extra={"kind": kind, "severities": severities, "count": count},
    )
    return datasets
