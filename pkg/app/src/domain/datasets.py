"""CIFAR-format parsing, synthetic hierarchical datasets, augmentation, batching."""

import logging
from collections.abc import Iterator, Mapping, Sequence
from dataclasses import dataclass, field
from types import MappingProxyType
from typing import Any, Literal

import numpy as np
import torch
from torchvision.transforms.v2 import functional as TF

from app.src.core.exceptions.data_exceptions import DatasetFormatError, DatasetSpecError
from app.src.domain.taxonomy import (
    ClassTaxonomy,
    balanced_taxonomy_document,
    taxonomy_from_document,
)
from app.src.domain.value_objects import ClassIndex, FloatArray, IntArray

logger = logging.getLogger(__name__)

CIFAR_IMAGE_SIZE = 32
CIFAR_CHANNELS = 3
CIFAR_PIXELS = CIFAR_CHANNELS * CIFAR_IMAGE_SIZE * CIFAR_IMAGE_SIZE
CIFAR_RECORD_SIZE = 2 + CIFAR_PIXELS
CIFAR100_FINE = 100
CIFAR100_COARSE = 20

Split = Literal["train", "test"]


@dataclass(frozen=True, eq=False)
class Sample:
    image: FloatArray
    fine_label: ClassIndex
    coarse_label: ClassIndex


@dataclass(frozen=True, eq=False)
class Dataset:
    images: FloatArray
    fine_labels: IntArray
    coarse_labels: IntArray
    split: Split
    num_fine: int
    provenance: Mapping[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        if self.images.ndim != 4:
            raise DatasetSpecError(field="images.ndim", value=self.images.ndim)
        count = self.images.shape[0]
        if self.fine_labels.shape != (count,) or self.coarse_labels.shape != (count,):
            raise DatasetSpecError(
                message="Label arrays must have one entry per image"
            )
        object.__setattr__(self, "provenance", MappingProxyType(dict(self.provenance)))

    def __len__(self) -> int:
        return int(self.images.shape[0])

    def __getitem__(self, index: int) -> Sample:
        return Sample(
            image=self.images[index],
            fine_label=int(self.fine_labels[index]),
            coarse_label=int(self.coarse_labels[index]),
        )

    def __iter__(self) -> Iterator[Sample]:
        for index in range(len(self)):
            yield self[index]

    @property
    def image_shape(self) -> tuple[int, int, int]:
        return tuple(self.images.shape[1:])  # type: ignore[return-value]

    def subset(self, indices: Sequence[int] | IntArray) -> "Dataset":
        idx = np.asarray(indices, dtype=np.int64)
        return Dataset(
            images=self.images[idx],
            fine_labels=self.fine_labels[idx],
            coarse_labels=self.coarse_labels[idx],
            split=self.split,
            num_fine=self.num_fine,
            provenance=self.provenance,
        )

    def with_images(
        self, images: FloatArray, provenance: Mapping[str, Any] | None = None
    ) -> "Dataset":
        return Dataset(
            images=images,
            fine_labels=self.fine_labels,
            coarse_labels=self.coarse_labels,
            split=self.split,
            num_fine=self.num_fine,
            provenance=provenance if provenance is not None else self.provenance,
        )


@dataclass(frozen=True)
class AugmentationConfig:
    crop_padding: int = 4
    hflip_probability: float = 0.5

    def __post_init__(self):
        if self.crop_padding < 0:
            raise DatasetSpecError(field="crop_padding", value=self.crop_padding)
        if not 0.0 <= self.hflip_probability <= 1.0:
            raise DatasetSpecError(
                field="hflip_probability", value=self.hflip_probability
            )


@dataclass(frozen=True)
class AugmentationDraw:
    offset_y: int
    offset_x: int
    flip: bool


@dataclass(frozen=True, eq=False)
class Batch:
    indices: IntArray
    images: FloatArray
    fine_labels: IntArray
    coarse_labels: IntArray

    def __len__(self) -> int:
        return int(self.indices.shape[0])


def parse_cifar100_binary(
    data: bytes,
    split: Split = "train",
    num_fine: int = CIFAR100_FINE,
    num_coarse: int = CIFAR100_COARSE,
    source: str = "<bytes>",
) -> Dataset:
    if len(data) % CIFAR_RECORD_SIZE:
        whole = len(data) // CIFAR_RECORD_SIZE
        raise DatasetFormatError(
            message=f"Truncated CIFAR stream {source}: {len(data)} bytes is not a "
            f"multiple of the {CIFAR_RECORD_SIZE}-byte record",
            source=source,
            offset=whole * CIFAR_RECORD_SIZE,
        )

    records = np.frombuffer(data, dtype=np.uint8).reshape(-1, CIFAR_RECORD_SIZE)
    coarse = records[:, 0].astype(np.int64)
    fine = records[:, 1].astype(np.int64)

    for labels, limit, name in ((coarse, num_coarse, "coarse"), (fine, num_fine, "fine")):
        bad = np.flatnonzero(labels >= limit)
        if bad.size:
            record = int(bad[0])
            raise DatasetFormatError(
                message=f"{name} label {int(labels[record])} out of range 0..{limit - 1} "
                f"in record {record} of {source}",
                source=source,
                offset=record * CIFAR_RECORD_SIZE,
            )

    images = records[:, 2:].reshape(
        -1, CIFAR_CHANNELS, CIFAR_IMAGE_SIZE, CIFAR_IMAGE_SIZE
    ).astype(np.float32) / np.float32(255.0)

    logger.info(
        "Parsed CIFAR binary", extra={"source": source, "samples": images.shape[0]}
    )
    return Dataset(
        images=images,
        fine_labels=fine,
        coarse_labels=coarse,
        split=split,
        num_fine=num_fine,
        provenance={"format": "cifar100-binary", "source": source},
    )


def serialize_cifar100_binary(ds: Dataset) -> bytes:
    if ds.image_shape != (CIFAR_CHANNELS, CIFAR_IMAGE_SIZE, CIFAR_IMAGE_SIZE):
        raise DatasetSpecError(field="image_shape", value=ds.image_shape)
    pixels = np.rint(ds.images.reshape(len(ds), -1) * 255.0).astype(np.uint8)
    records = np.empty((len(ds), CIFAR_RECORD_SIZE), dtype=np.uint8)
    records[:, 0] = ds.coarse_labels.astype(np.uint8)
    records[:, 1] = ds.fine_labels.astype(np.uint8)
    records[:, 2:] = pixels
    return records.tobytes()


def select_classes(
    ds: Dataset, fine_indices: Sequence[int], subset: ClassTaxonomy
) -> Dataset:
    """Keep samples of the given fine classes, relabelled to the subset taxonomy."""
    remap = np.full(ds.num_fine, -1, dtype=np.int64)
    for new_index, old_index in enumerate(fine_indices):
        remap[old_index] = new_index
    keep = np.flatnonzero(remap[ds.fine_labels] >= 0)
    fine = remap[ds.fine_labels[keep]]
    coarse_map = subset.coarse_map
    coarse = np.array([coarse_map[int(f)] for f in fine], dtype=np.int64)
    return Dataset(
        images=ds.images[keep],
        fine_labels=fine,
        coarse_labels=coarse,
        split=ds.split,
        num_fine=subset.num_fine,
        provenance={**ds.provenance, "fine_subset": list(fine_indices)},
    )


def generate_synthetic(
    num_classes: int,
    images_per_class: int,
    image_size: int = CIFAR_IMAGE_SIZE,
    seed: int = 0,
    split: Split = "train",
    noise: float = 0.08,
    amplitude: float = 0.12,
) -> tuple[Dataset, ClassTaxonomy]:
    """Seeded dataset whose class prototypes share structure along the taxonomy.

    Every non-root tree node owns a low-frequency colour pattern; a class
    prototype is mid-grey plus the patterns of all its ancestors, so two classes
    look alike in proportion to the ancestors they share.
    """
    if num_classes < 2:
        raise DatasetSpecError(field="num_classes", value=num_classes)
    if images_per_class < 1:
        raise DatasetSpecError(field="images_per_class", value=images_per_class)
    if image_size < 4:
        raise DatasetSpecError(field="image_size", value=image_size)

    taxonomy = taxonomy_from_document(balanced_taxonomy_document(num_classes))

    pattern_rng = np.random.default_rng([seed, 0])
    block = -(-image_size // 4)
    patterns: dict[str, np.ndarray] = {}
    for node in taxonomy.nodes:
        coarse = pattern_rng.uniform(-1.0, 1.0, size=(CIFAR_CHANNELS, 4, 4))
        upscaled = np.repeat(np.repeat(coarse, block, axis=1), block, axis=2)
        patterns[node] = upscaled[:, :image_size, :image_size]

    prototypes = np.empty(
        (num_classes, CIFAR_CHANNELS, image_size, image_size), dtype=np.float64
    )
    for fc in taxonomy.fine_classes:
        proto = np.full((CIFAR_CHANNELS, image_size, image_size), 0.5)
        node = fc.node_name
        while node != taxonomy.root:
            proto += amplitude * patterns[node]
            node = taxonomy.parent_edges[node]
        prototypes[fc.index] = proto

    sample_rng = np.random.default_rng([seed, 1 if split == "train" else 2])
    fine = np.repeat(np.arange(num_classes, dtype=np.int64), images_per_class)
    jitter = sample_rng.normal(0.0, noise, size=(fine.size, *prototypes.shape[1:]))
    images = np.clip(prototypes[fine] + jitter, 0.0, 1.0).astype(np.float32)
    coarse_map = taxonomy.coarse_map
    coarse = np.array([coarse_map[int(f)] for f in fine], dtype=np.int64)

    dataset = Dataset(
        images=images,
        fine_labels=fine,
        coarse_labels=coarse,
        split=split,
        num_fine=num_classes,
        provenance={
            "format": "synthetic",
            "num_classes": num_classes,
            "images_per_class": images_per_class,
            "image_size": image_size,
            "seed": seed,
        },
    )
    return dataset, taxonomy


def draw_augmentation(cfg: AugmentationConfig, rng: np.random.Generator) -> AugmentationDraw:
    offsets = rng.integers(0, 2 * cfg.crop_padding + 1, size=2)
    flip = bool(rng.random() < cfg.hflip_probability)
    return AugmentationDraw(offset_y=int(offsets[0]), offset_x=int(offsets[1]), flip=flip)


def apply_augmentation(
    image: FloatArray, cfg: AugmentationConfig, draw: AugmentationDraw
) -> FloatArray:
    """Zero-pad, crop back to the original size at the drawn offset, then maybe flip."""
    _, height, width = image.shape
    tensor = torch.from_numpy(np.ascontiguousarray(image))
    if cfg.crop_padding:
        tensor = TF.pad(tensor, [cfg.crop_padding], fill=0.0)
        tensor = TF.crop(tensor, draw.offset_y, draw.offset_x, height, width)
    if draw.flip:
        tensor = TF.horizontal_flip(tensor)
    return np.ascontiguousarray(tensor.numpy())


def augment(sample: Sample, cfg: AugmentationConfig, rng: np.random.Generator) -> Sample:
    draw = draw_augmentation(cfg, rng)
    return Sample(
        image=apply_augmentation(sample.image, cfg, draw),
        fine_label=sample.fine_label,
        coarse_label=sample.coarse_label,
    )


def augment_images(
    images: FloatArray, cfg: AugmentationConfig, rng: np.random.Generator
) -> FloatArray:
    return np.stack(
        [apply_augmentation(image, cfg, draw_augmentation(cfg, rng)) for image in images]
    )


def batches(
    ds: Dataset, batch_size: int, shuffle_seed: int | None = None
) -> Iterator[Batch]:
    if batch_size < 1:
        raise DatasetSpecError(field="batch_size", value=batch_size)
    if shuffle_seed is None:
        order = np.arange(len(ds), dtype=np.int64)
    else:
        order = np.random.default_rng(shuffle_seed).permutation(len(ds))
    for start in range(0, len(ds), batch_size):
        idx = order[start : start + batch_size]
        yield Batch(
            indices=idx,
            images=ds.images[idx],
            fine_labels=ds.fine_labels[idx],
            coarse_labels=ds.coarse_labels[idx],
        )
