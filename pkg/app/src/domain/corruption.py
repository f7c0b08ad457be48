"""Natural corruption kernels for evaluation sets at severities 1..5."""

import logging
from collections.abc import Callable, Mapping
from dataclasses import dataclass
from enum import StrEnum

import numpy as np
from scipy import ndimage

from app.src.core.exceptions.data_exceptions import (
    CorruptionSpecError,
    DatasetSpecError,
)
from app.src.domain.datasets import Dataset
from app.src.domain.value_objects import FloatArray

logger = logging.getLogger(__name__)

SEVERITIES = (1, 2, 3, 4, 5)
# ITU-R BT.601 luma weights
LUMA_WEIGHTS = np.array([0.299, 0.587, 0.114])


class CorruptionKind(StrEnum):
    GAUSSIAN_NOISE = "gaussian_noise"
    IMPULSE_NOISE = "impulse_noise"
    GAUSSIAN_BLUR = "gaussian_blur"
    BRIGHTNESS = "brightness"
    CONTRAST = "contrast"
    SATURATION = "saturation"
    PIXELATE = "pixelate"


NATIVE_KINDS = tuple(CorruptionKind)
SEEDED_KINDS = frozenset({CorruptionKind.GAUSSIAN_NOISE, CorruptionKind.IMPULSE_NOISE})


@dataclass(frozen=True)
class CorruptionSpec:
    kind: CorruptionKind
    severity: int
    seed: int = 0

    def __post_init__(self):
        try:
            object.__setattr__(self, "kind", CorruptionKind(self.kind))
        except ValueError as e:
            raise CorruptionSpecError(kind=str(self.kind)) from e
        if self.severity not in SEVERITIES:
            raise CorruptionSpecError(
                message=f"Severity must be one of 1..5, got {self.severity}",
                kind=self.kind.value,
                severity=self.severity,
            )

    @property
    def label(self) -> str:
        return f"{self.kind.value}@{self.severity}"


@dataclass(frozen=True)
class CorruptionTable:
    """Per-kind parameter for each severity, strictly monotone in severity."""

    parameters: Mapping[CorruptionKind, tuple[float, ...]]

    def __post_init__(self):
        missing = [kind.value for kind in NATIVE_KINDS if kind not in self.parameters]
        if missing:
            raise CorruptionSpecError(
                message=f"Parameter table lacks kinds: {', '.join(missing)}"
            )
        for kind, values in self.parameters.items():
            if len(values) != len(SEVERITIES):
                raise CorruptionSpecError(
                    message=f"{kind.value} needs {len(SEVERITIES)} severity values, "
                    f"got {len(values)}",
                    kind=kind.value,
                )
            steps = np.diff(np.asarray(values, dtype=np.float64))
            if not ((steps > 0).all() or (steps < 0).all()):
                raise CorruptionSpecError(
                    message=f"{kind.value} parameters are not strictly monotone: "
                    f"{list(values)}",
                    kind=kind.value,
                )

    @classmethod
    def from_mapping(cls, raw: Mapping[str, list[float]]) -> "CorruptionTable":
        parameters: dict[CorruptionKind, tuple[float, ...]] = {}
        for name, values in raw.items():
            try:
                kind = CorruptionKind(name)
            except ValueError as e:
                raise CorruptionSpecError(kind=name) from e
            parameters[kind] = tuple(float(v) for v in values)
        return cls(parameters=parameters)

    def value(self, kind: CorruptionKind, severity: int) -> float:
        return self.parameters[kind][severity - 1]

    def to_document(self) -> dict[str, list[float]]:
        return {kind.value: list(values) for kind, values in self.parameters.items()}


def gaussian_noise(image: FloatArray, sigma: float, rng: np.random.Generator) -> FloatArray:
    return image + rng.normal(0.0, sigma, size=image.shape)


def impulse_noise(image: FloatArray, fraction: float, rng: np.random.Generator) -> FloatArray:
    hit = rng.random(image.shape) < fraction
    salt = rng.random(image.shape) < 0.5
    return np.where(hit, salt.astype(image.dtype), image)


def gaussian_blur(image: FloatArray, sigma: float) -> FloatArray:
    # channel axis is never mixed
    return ndimage.gaussian_filter(image, sigma=(0.0, sigma, sigma), mode="reflect")


def brightness(image: FloatArray, shift: float) -> FloatArray:
    return image + shift


def contrast(image: FloatArray, factor: float) -> FloatArray:
    mean = image.mean()
    return (image - mean) * factor + mean


def saturation(image: FloatArray, factor: float) -> FloatArray:
    luma = np.tensordot(LUMA_WEIGHTS, image, axes=1)[None]
    return luma + (image - luma) * factor


def _buckets(size: int, reduced: int) -> np.ndarray:
    return (np.arange(size) * reduced) // size


def pixelate(image: FloatArray, factor: float) -> FloatArray:
    """Box-average onto a grid ``factor`` times coarser, then upsample nearest."""
    channels, height, width = image.shape
    small_h = max(1, round(height / factor))
    small_w = max(1, round(width / factor))
    rows = _buckets(height, small_h)
    cols = _buckets(width, small_w)

    sums = np.zeros((channels, small_h, small_w), dtype=np.float64)
    np.add.at(sums, (slice(None), rows[:, None], cols[None, :]), image)
    counts = np.zeros((small_h, small_w), dtype=np.float64)
    np.add.at(counts, (rows[:, None], cols[None, :]), 1.0)
    small = sums / counts
    return small[:, rows[:, None], cols[None, :]]


_Kernel = Callable[[FloatArray, float, np.random.Generator], FloatArray]

_KERNELS: dict[CorruptionKind, _Kernel] = {
    CorruptionKind.GAUSSIAN_NOISE: gaussian_noise,
    CorruptionKind.IMPULSE_NOISE: impulse_noise,
    CorruptionKind.GAUSSIAN_BLUR: lambda x, p, _: gaussian_blur(x, p),
    CorruptionKind.BRIGHTNESS: lambda x, p, _: brightness(x, p),
    CorruptionKind.CONTRAST: lambda x, p, _: contrast(x, p),
    CorruptionKind.SATURATION: lambda x, p, _: saturation(x, p),
    CorruptionKind.PIXELATE: lambda x, p, _: pixelate(x, p),
}


def apply_corruption(
    image: FloatArray, spec: CorruptionSpec, table: CorruptionTable
) -> FloatArray:
    if image.ndim != 3 or image.shape[0] != 3:
        raise CorruptionSpecError(
            message=f"Expected a 3xHxW image, got shape {image.shape}",
            kind=spec.kind.value,
            severity=spec.severity,
        )
    parameter = table.value(spec.kind, spec.severity)
    rng = np.random.default_rng(spec.seed)
    corrupted = _KERNELS[spec.kind](np.asarray(image, dtype=np.float64), parameter, rng)
    return np.clip(corrupted, 0.0, 1.0).astype(image.dtype)


def build_corrupted_set(
    ds: Dataset, spec: CorruptionSpec, table: CorruptionTable
) -> Dataset:
    """Corrupt every image; noise kinds seed image ``i`` with ``spec.seed + i``."""
    if ds.split != "test":
        raise DatasetSpecError(
            message="Corruptions apply to evaluation data only",
            field="split",
            value=ds.split,
        )
    corrupted = np.empty_like(ds.images)
    for index, image in enumerate(ds.images):
        per_image = CorruptionSpec(spec.kind, spec.severity, seed=spec.seed + index)
        corrupted[index] = apply_corruption(image, per_image, table)

    logger.info(
        "Built corrupted set",
        extra={"kind": spec.kind.value, "severity": spec.severity, "count": len(ds)},
    )
    provenance = {
        **ds.provenance,
        "corruption": {
            "kind": spec.kind.value,
            "severity": spec.severity,
            "seed": spec.seed if spec.kind in SEEDED_KINDS else None,
            "parameter": table.value(spec.kind, spec.severity),
            "source": "native",
        },
    }
    return ds.with_images(corrupted, provenance=provenance)


def corruption_of(ds: Dataset) -> tuple[str, int]:
    entry = ds.provenance.get("corruption")
    if not isinstance(entry, Mapping) or "kind" not in entry or "severity" not in entry:
        raise CorruptionSpecError(
            message="Dataset carries no corruption provenance (kind and severity)"
        )
    return str(entry["kind"]), int(entry["severity"])
